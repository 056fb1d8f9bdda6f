"""Dense real linear-algebra kernels.

Matrices are plain ``float64`` numpy arrays. Vectorization is row-major
(``vec(X) = X.reshape(-1)``), which makes ``vec(B @ X @ C.T) == kron(B, C) @ vec(X)``
hold with ``numpy.kron``'s index layout.

The factorizations (Householder QR, cyclic Jacobi, power iteration) are written
out here rather than delegated to LAPACK so that their sign conventions are
fixed and the results are reproducible bit-for-bit on a given machine.
"""
from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    DivisionUnderflow,
    NegativeBase,
    NonConvergenceWarning,
    SizeCapExceeded,
)

#: default cap on the number of entries of any dense Kronecker product
KRON_MAX_ENTRIES = 1 << 26
DIV_FLOOR = 1e-30


class SymEigDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns


class SingularTriplet(NamedTuple):
    sigma: float
    u: np.ndarray
    v: np.ndarray
    converged: bool
    iterations: int


def as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return math.sqrt(float(np.sum(a * a)))


def frobenius_inner(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def vec(x) -> np.ndarray:
    """Stack the rows of ``x`` into a vector."""
    return np.asarray(x, dtype=np.float64).reshape(-1).copy()


def mat(x, m: int, n: int) -> np.ndarray:
    """Inverse of :func:`vec`: pack ``x`` row by row into an ``m x n`` matrix."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != m * n:
        raise DimensionMismatch(f"vector of length {x.size} cannot form a {m}x{n} matrix")
    return x.reshape(m, n).copy()


def kron(a, b, max_entries: int = KRON_MAX_ENTRIES) -> np.ndarray:
    """Kronecker product with ``(A (x) B)[i*p + k, j*q + l] = A[i, j] * B[k, l]``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    size = a.size * b.size
    if size > max_entries:
        raise SizeCapExceeded(
            f"kron of {a.shape} and {b.shape} has {size} entries (cap {max_entries})"
        )
    return np.kron(a, b)


def rearrange(a, m1: int, n1: int, m2: int, n2: int) -> np.ndarray:
    """Van Loan rearrangement of an ``(m1*m2) x (n1*n2)`` matrix.

    Row ``i*n1 + j`` of the result is the row-major vec of the ``(i, j)`` block
    of ``a`` (each block being ``m2 x n2``), so that
    ``rearrange(kron(B, C)) == outer(vec(B), vec(C))``.
    """
    a = as_matrix(a, "a")
    if a.shape != (m1 * m2, n1 * n2):
        raise DimensionMismatch(
            f"expected shape {(m1 * m2, n1 * n2)} for rearrange, got {a.shape}"
        )
    return a.reshape(m1, m2, n1, n2).transpose(0, 2, 1, 3).reshape(m1 * n1, m2 * n2).copy()


def unrearrange(r, m1: int, n1: int, m2: int, n2: int) -> np.ndarray:
    """Inverse of :func:`rearrange`."""
    r = as_matrix(r, "r")
    if r.shape != (m1 * n1, m2 * n2):
        raise DimensionMismatch(
            f"expected shape {(m1 * n1, m2 * n2)} for unrearrange, got {r.shape}"
        )
    return r.reshape(m1, n1, m2, n2).transpose(0, 2, 1, 3).reshape(m1 * m2, n1 * n2).copy()


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    return a * b


def hadamard_pow(a, alpha: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not float(alpha).is_integer() and np.any(a < 0):
        raise NegativeBase(f"fractional power {alpha} of a matrix with negative entries")
    return np.power(a, alpha)


def hadamard_div(a, b, floor: float = DIV_FLOOR) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    if np.any(np.abs(b) < floor):
        raise DivisionUnderflow(f"divisor has entries below {floor:g}")
    return a / b


def qr(a) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR of a tall matrix.

    Returns ``(Q, R)`` with ``Q`` of shape ``m x n`` with orthonormal columns
    and ``R`` upper triangular with a nonnegative diagonal.
    """
    a = as_matrix(a, "a")
    m, n = a.shape
    if m < n:
        raise DimensionMismatch(f"qr needs rows >= cols, got {a.shape}")
    r = a.copy()
    reflectors = []
    for k in range(n):
        x = r[k:, k]
        normx = math.sqrt(float(x @ x))
        if normx == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += math.copysign(normx, x[0])
        v /= math.sqrt(float(v @ v))
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        r[k + 1:, k] = 0.0
        reflectors.append(v)
    q = np.eye(m, n)
    for k in range(n - 1, -1, -1):
        v = reflectors[k]
        if v is not None:
            q[k:, k:] -= 2.0 * np.outer(v, v @ q[k:, k:])
    r = np.triu(r[:n, :])
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Tournament schedule: every pair (p, q) meets exactly once per sweep and
    # the pairs inside a round are disjoint, so a round rotates in parallel.
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p >= 0 and q >= 0:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _sign_fix_columns(q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    q = q.copy()
    for j in range(q.shape[1]):
        col = q[:, j]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            q[:, j] = -col
    return q


def sym_eig(a, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigDecomposition:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    ``a`` is symmetrized as ``(a + a.T) / 2``. Eigenvalues are returned in
    descending order; each eigenvector's first component above 1e-12 in
    magnitude is positive.
    """
    a = as_matrix(a, "a")
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionMismatch(f"sym_eig needs a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = frobenius_norm(a)
    if n > 1 and scale > 0.0:
        rounds = _round_robin(n)
        thresh = tol * scale
        for _ in range(max_sweeps):
            off = a - np.diag(np.diag(a))
            if frobenius_norm(off) <= thresh:
                break
            for ps, qs in rounds:
                apq = a[ps, qs]
                active = np.abs(apq) > 1e-300
                if not np.any(active):
                    continue
                ps, qs, apq = ps[active], qs[active], apq[active]
                theta = (a[qs, qs] - a[ps, ps]) / (2.0 * apq)
                big = np.abs(theta) > 1e150
                safe = np.where(big, 0.0, theta)
                t = np.where(
                    big,
                    0.5 / np.where(big, theta, 1.0),
                    np.where(safe >= 0, 1.0, -1.0) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)),
                )
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, ps].copy(), a[:, qs].copy()
                a[:, ps] = ap * c - aq * s
                a[:, qs] = ap * s + aq * c
                ap, aq = a[ps, :].copy(), a[qs, :].copy()
                a[ps, :] = ap * c[:, None] - aq * s[:, None]
                a[qs, :] = ap * s[:, None] + aq * c[:, None]
                a[ps, qs] = 0.0
                a[qs, ps] = 0.0
                vp, vq = v[:, ps].copy(), v[:, qs].copy()
                v[:, ps] = vp * c - vq * s
                v[:, qs] = vp * s + vq * c
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return SymEigDecomposition(w[order], _sign_fix_columns(v[:, order]))


def sym_func(a, fn) -> np.ndarray:
    """Apply a scalar function to a symmetric matrix through its eigenvalues."""
    w, q = sym_eig(a)
    return (q * fn(w)) @ q.T


def dominant_singular_triplet(g, max_iters: int = 10000, tol: float = 1e-12) -> SingularTriplet:
    """Largest singular value and vectors of ``g`` by power iteration on ``g g^T``.

    Starts from the normalized all-ones vector (falling back to the largest
    column of ``g`` if that start lies in the null space). Convergence means
    ``||g^T u - sigma v|| <= tol * ||g||``; on failure the last iterate is
    returned with ``converged=False`` and a :class:`NonConvergenceWarning`.
    """
    g = as_matrix(g, "g")
    m, _ = g.shape
    gnorm = frobenius_norm(g)
    if gnorm == 0.0:
        raise ValueError("dominant_singular_triplet of a zero matrix")
    u = np.full(m, 1.0 / math.sqrt(m))
    v = g.T @ u
    if math.sqrt(float(v @ v)) <= 1e-14 * gnorm:
        j = int(np.argmax(np.sum(g * g, axis=0)))
        u = g[:, j] / math.sqrt(float(g[:, j] @ g[:, j]))
        v = g.T @ u
    v = v / math.sqrt(float(v @ v))
    sigma = 0.0
    for it in range(1, max_iters + 1):
        # g @ v == sigma * u holds by construction; test the other residual
        u = g @ v
        sigma = math.sqrt(float(u @ u))
        u = u / sigma
        w = g.T @ u
        r = w - sigma * v
        v = w / math.sqrt(float(w @ w))
        if math.sqrt(float(r @ r)) <= tol * gnorm:
            return SingularTriplet(sigma, u, v, True, it)
    warnings.warn(
        f"power iteration did not reach tol={tol:g} in {max_iters} iterations",
        NonConvergenceWarning,
        stacklevel=2,
    )
    return SingularTriplet(sigma, u, v, False, max_iters)


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (1-based) of a tensor.

    The result has shape ``n_mode x prod(other dims)``; the remaining modes index
    the columns in increasing order, last one fastest.
    """
    t = np.asarray(t, dtype=np.float64)
    if not 1 <= mode <= t.ndim:
        raise ValueError(f"mode must lie in [1, {t.ndim}], got {mode}")
    return np.moveaxis(t, mode - 1, 0).reshape(t.shape[mode - 1], -1).copy()


def refold(m, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of the given ``shape``."""
    shape = tuple(int(s) for s in shape)
    if not 1 <= mode <= len(shape):
        raise ValueError(f"mode must lie in [1, {len(shape)}], got {mode}")
    m = as_matrix(m, "m")
    rest = shape[: mode - 1] + shape[mode:]
    expected = (shape[mode - 1], int(np.prod(rest, dtype=np.int64)))
    if m.shape != expected:
        raise DimensionMismatch(f"expected unfolding of shape {expected}, got {m.shape}")
    return np.moveaxis(m.reshape((shape[mode - 1],) + rest), 0, mode - 1).copy()
