"""Kronecker-factored approximations of an empirical Fisher matrix.

The Fisher matrix of an ``m x n`` layer is ``F = sum_i vec(G_i) vec(G_i)^T``.
Under the Van Loan rearrangement ``R`` a Kronecker product ``L (x) R`` becomes
the rank-1 matrix ``vec(L) vec(R)^T`` and each gradient contributes
``R(vec(G) vec(G)^T) = G (x) G``. Tracking the best Kronecker approximation of
``F`` is therefore a dynamical rank-1 approximation problem in the rearranged
space, which the projector-splitting integrator solves one update at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .errors import DimensionMismatch, NonPositiveS, RankCollapse, ZeroFactor, ZeroGradient

S_FLOOR = 1e-30
FACTOR_FLOOR = 1e-300
COLUMN_FLOOR = 1e-300


@dataclass(frozen=True)
class Rank1Factorization:
    """``s * u v^T`` with unit vectors ``u`` and ``v``."""

    u: np.ndarray
    v: np.ndarray
    s: float

    def dense(self) -> np.ndarray:
        return self.s * np.outer(self.u, self.v)


@dataclass(frozen=True)
class LowRankFactorization:
    """``U S V^T`` with orthonormal columns in ``U`` and ``V``; ``S`` need not be diagonal."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        r = self.S.shape[0]
        if self.S.shape != (r, r) or self.U.shape[1] != r or self.V.shape[1] != r:
            raise DimensionMismatch(
                f"inconsistent factor shapes U{self.U.shape} S{self.S.shape} V{self.V.shape}"
            )

    @classmethod
    def from_rank1(cls, f: Rank1Factorization) -> "LowRankFactorization":
        return cls(np.asarray(f.u, float)[:, None], np.array([[float(f.s)]]),
                   np.asarray(f.v, float)[:, None])

    def to_rank1(self) -> Rank1Factorization:
        if self.S.shape != (1, 1):
            raise DimensionMismatch(f"rank is {self.S.shape[0]}, not 1")
        return Rank1Factorization(self.U[:, 0].copy(), self.V[:, 0].copy(), float(self.S[0, 0]))

    def dense(self) -> np.ndarray:
        return self.U @ self.S @ self.V.T


@dataclass(frozen=True)
class KroneckerFactorPair:
    """Approximates a Fisher matrix as ``L (x) R``."""

    L: np.ndarray
    R: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape[0], self.R.shape[0]

    def dense(self, max_entries: int = la.KRON_MAX_ENTRIES) -> np.ndarray:
        return la.kron(self.L, self.R, max_entries=max_entries)

    def scaled(self, a: float, b: float | None = None) -> "KroneckerFactorPair":
        return KroneckerFactorPair(a * self.L, (a if b is None else b) * self.R)


@dataclass(frozen=True)
class KroneckerFactorList:
    """Approximates a Fisher matrix as ``L_1 (x) L_2 (x) ... (x) L_d``."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(np.asarray(f, float) for f in self.factors))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def dense(self, max_entries: int = la.KRON_MAX_ENTRIES) -> np.ndarray:
        out = np.ones((1, 1))
        for f in self.factors:
            out = la.kron(out, f, max_entries=max_entries)
        return out


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def proj_split_step(current, delta) -> LowRankFactorization | Rank1Factorization:
    """One discrete projector-splitting step: approximate ``U S V^T + delta``.

    Accepts a :class:`LowRankFactorization` or a :class:`Rank1Factorization` and
    returns the same kind. The new core is formed as
    ``(U1^T U) S (V^T V1) + U1^T delta V1`` so the dense current approximation is
    never built.
    """
    rank1 = isinstance(current, Rank1Factorization)
    f = LowRankFactorization.from_rank1(current) if rank1 else current
    U, S, V = f.U, f.S, f.V
    delta = la.as_matrix(delta, "delta")
    if delta.shape != (U.shape[0], V.shape[0]):
        raise DimensionMismatch(f"delta has shape {delta.shape}, expected {(U.shape[0], V.shape[0])}")

    u_hat = U @ S + delta @ V
    U1, s_hat = la.qr(u_hat)
    if np.min(np.abs(np.diag(s_hat))) < COLUMN_FLOOR:
        raise RankCollapse("left basis update produced a zero column")
    v_hat = V @ S.T + delta.T @ U
    V1, s_tilde = la.qr(v_hat)
    if np.min(np.abs(np.diag(s_tilde))) < COLUMN_FLOOR:
        raise RankCollapse("right basis update produced a zero column")
    S1 = (U1.T @ U) @ S @ (V.T @ V1) + U1.T @ delta @ V1
    out = LowRankFactorization(U1, S1, V1)
    return out.to_rank1() if rank1 else out


def kron_proj_split(pair: KroneckerFactorPair, g) -> KroneckerFactorPair:
    """Update ``L (x) R`` towards ``L (x) R + vec(g) vec(g)^T``.

    This is the rank-1 projector-splitting step in rearranged space written
    with ``m x m`` and ``n x n`` products only. Both returned factors carry
    ``sqrt(S)`` so their Frobenius norms are equal.

    Raises :class:`NonPositiveS` (with the floor-clamped result attached) when
    the core scalar is not above ``S_FLOOR``.
    """
    L, R = pair.L, pair.R
    g = la.as_matrix(g, "g")
    if g.shape != (L.shape[0], R.shape[0]):
        raise DimensionMismatch(f"gradient shape {g.shape} does not match factors {pair.shape}")
    nl, nr = la.frobenius_norm(L), la.frobenius_norm(R)
    if nl < FACTOR_FLOOR or nr < FACTOR_FLOOR:
        raise ZeroFactor("Kronecker factor with zero norm")

    l_hat = L * nr + g @ (R / nr) @ g.T
    r_hat = R * nl + g.T @ (L / nl) @ g
    l_new = l_hat / la.frobenius_norm(l_hat)
    r_new = r_hat / la.frobenius_norm(r_hat)
    s = (la.frobenius_inner(L, l_new) * la.frobenius_inner(R, r_new)
         + la.frobenius_inner(l_new, g @ r_new @ g.T))
    if not s > S_FLOOR:
        root = math.sqrt(S_FLOOR)
        clamped = KroneckerFactorPair(_sym(root * l_new), _sym(root * r_new))
        raise NonPositiveS(f"core scalar S={s:.3e} is not positive", clamped=clamped)
    root = math.sqrt(s)
    return KroneckerFactorPair(_sym(root * l_new), _sym(root * r_new))


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``m`` into the ``mode``-th (1-based) index of tensor ``t``."""
    return np.moveaxis(np.tensordot(m, t, axes=(1, mode - 1)), 0, mode - 1)


def kron_proj_split_tensor(factors: KroneckerFactorList, g) -> KroneckerFactorList:
    """Tensor version of :func:`kron_proj_split` for a ``d``-way gradient.

    The Kronecker products of the other factors are applied as successive
    mode products, never as a dense matrix.
    """
    Ls = factors.factors
    g = np.asarray(g, dtype=np.float64)
    d = len(Ls)
    if d < 2:
        raise DimensionMismatch("need at least two factors")
    if g.shape != factors.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} does not match factors {factors.shape}")
    norms = [la.frobenius_norm(L) for L in Ls]
    if min(norms) < FACTOR_FLOOR:
        raise ZeroFactor("Kronecker factor with zero norm")

    new = []
    for k in range(1, d + 1):
        others = math.prod(norms[j - 1] for j in range(1, d + 1) if j != k)
        y = g
        for j in range(1, d + 1):
            if j != k:
                y = mode_product(y, Ls[j - 1].T, j)
        l_hat = Ls[k - 1] * others**2 + la.unfold(y, k) @ la.unfold(g, k).T
        new.append(l_hat / la.frobenius_norm(l_hat))

    y = g
    for j in range(1, d + 1):
        y = mode_product(y, new[j - 1], j)
    s = math.prod(la.frobenius_inner(L, Ln) for L, Ln in zip(Ls, new)) + float(np.sum(g * y))
    clamp = not s > S_FLOOR
    scale = (S_FLOOR if clamp else s) ** (1.0 / d)
    out = KroneckerFactorList(tuple(_sym(scale * Ln) for Ln in new))
    if clamp:
        raise NonPositiveS(f"core scalar S={s:.3e} is not positive", clamped=out)
    return out


def init_from_gradient(g) -> KroneckerFactorPair:
    """Best Kronecker approximation of ``vec(g) vec(g)^T``.

    With ``(sigma, u, v)`` the dominant singular triplet of ``g`` this is
    ``L = sigma u u^T`` and ``R = sigma v v^T``.
    """
    g = la.as_matrix(g, "g")
    if la.frobenius_norm(g) == 0.0:
        raise ZeroGradient("cannot initialize factors from a zero gradient")
    t = la.dominant_singular_triplet(g)
    return KroneckerFactorPair(t.sigma * np.outer(t.u, t.u), t.sigma * np.outer(t.v, t.v))


def nkp_best(f, m: int, n: int) -> tuple[KroneckerFactorPair, float]:
    """Nearest Kronecker product ``L (x) R`` to an ``mn x mn`` matrix by brute force.

    Takes the dominant singular triplet of the rearranged matrix and splits
    ``sigma`` evenly: ``||L|| == ||R|| == sqrt(sigma)``. The sign is chosen so
    that ``trace(L) >= 0``. Returns the pair and ``||f - L (x) R||``.
    """
    f = la.as_matrix(f, "f")
    r = la.rearrange(f, m, m, n, n)
    if la.frobenius_norm(r) == 0.0:
        pair = KroneckerFactorPair(np.zeros((m, m)), np.zeros((n, n)))
        return pair, 0.0
    t = la.dominant_singular_triplet(r)
    root = math.sqrt(t.sigma)
    L = root * la.mat(t.u, m, m)
    R = root * la.mat(t.v, n, n)
    if np.trace(L) < 0:
        L, R = -L, -R
    pair = KroneckerFactorPair(L, R)
    return pair, la.frobenius_norm(f - la.kron(L, R))


def shampoo_factor_update(pair: KroneckerFactorPair, g, beta: float = 1.0) -> KroneckerFactorPair:
    """``L + G G^T, R + G^T G`` for ``beta == 1``; the EMA ``beta L + (1 - beta) G G^T`` otherwise."""
    g = la.as_matrix(g, "g")
    if g.shape != pair.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} does not match factors {pair.shape}")
    if beta == 1.0:
        return KroneckerFactorPair(pair.L + g @ g.T, pair.R + g.T @ g)
    return KroneckerFactorPair(beta * pair.L + (1.0 - beta) * (g @ g.T),
                               beta * pair.R + (1.0 - beta) * (g.T @ g))


def psd_sqrt(a) -> np.ndarray:
    """Principal square root of a symmetric matrix, negative eigenvalues clamped to 0."""
    return la.sym_func(a, lambda w: np.sqrt(np.maximum(w, 0.0)))


def shampoo_estimate(pair: KroneckerFactorPair, max_entries: int = la.KRON_MAX_ENTRIES) -> np.ndarray:
    """Dense ``L^{1/2} (x) R^{1/2}`` (small problems only)."""
    return la.kron(psd_sqrt(pair.L), psd_sqrt(pair.R), max_entries=max_entries)
