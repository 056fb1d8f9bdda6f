"""Multinomial softmax regression with closed-form derivatives.

For ``W`` of shape ``m x n`` (``m`` classes, ``n`` features) and samples
``(x_i, y_i)`` the mean cross-entropy has gradient
``(1/N) sum_i (p_i - y_i) x_i^T`` and Hessian
``(1/N) sum_i (diag(p_i) - p_i p_i^T) (x) x_i x_i^T`` with respect to the
row-major ``vec(W)``. This gives an exact curvature reference against which
optimizer-side Fisher estimates can be measured.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .errors import DimensionMismatch, EmptyFile, ParseError, SizeCapExceeded

HESSIAN_MAX_DIM = 4096


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # N x n
    y: np.ndarray  # N integer labels in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DimensionMismatch(f"X must be a non-empty 2-D array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DimensionMismatch(f"y has shape {y.shape}, expected {(X.shape[0],)}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


@dataclass(frozen=True)
class SoftmaxModel:
    W: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "SoftmaxModel":
        return cls(np.zeros((num_classes, dim)))


def _check(model: SoftmaxModel, ds: Dataset):
    if model.W.shape != (ds.num_classes, ds.dim):
        raise DimensionMismatch(
            f"W has shape {model.W.shape}, dataset needs {(ds.num_classes, ds.dim)}"
        )


def probabilities(model: SoftmaxModel, ds: Dataset) -> np.ndarray:
    z = ds.X @ model.W.T
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss(model: SoftmaxModel, ds: Dataset) -> float:
    _check(model, ds)
    z = ds.X @ model.W.T
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return float(np.mean(lse - z[np.arange(ds.size), ds.y]))


def _residuals(model, ds):
    p = probabilities(model, ds)
    p[np.arange(ds.size), ds.y] -= 1.0
    return p


def gradient(model: SoftmaxModel, ds: Dataset) -> np.ndarray:
    _check(model, ds)
    return _residuals(model, ds).T @ ds.X / ds.size


def per_sample_gradients(model: SoftmaxModel, ds: Dataset) -> np.ndarray:
    """Array of shape ``N x m x n`` holding ``(p_i - y_i) x_i^T``."""
    _check(model, ds)
    return np.einsum("ik,ij->ikj", _residuals(model, ds), ds.X)


def hessian(model: SoftmaxModel, ds: Dataset) -> np.ndarray:
    """Dense ``mn x mn`` Hessian of :func:`loss` with respect to ``vec(W)``."""
    _check(model, ds)
    m, n = model.W.shape
    if m * n > HESSIAN_MAX_DIM:
        raise SizeCapExceeded(f"Hessian dimension {m * n} exceeds {HESSIAN_MAX_DIM}")
    p = probabilities(model, ds)
    H = np.zeros((m * n, m * n))
    for pi, xi in zip(p, ds.X):
        H += la.kron(np.diag(pi) - np.outer(pi, pi), np.outer(xi, xi))
    return H / ds.size


def fisher_from_basis(q_l, q_r, v, max_dim: int = HESSIAN_MAX_DIM) -> np.ndarray:
    """``(Q_L (x) Q_R) diag(vec(V)) (Q_L (x) Q_R)^T``."""
    v = la.as_matrix(v, "v")
    m, n = v.shape
    if m * n > max_dim:
        raise SizeCapExceeded(f"Fisher dimension {m * n} exceeds {max_dim}")
    K = la.kron(q_l, q_r)
    return (K * la.vec(v)) @ K.T


def fisher_reconstruct(state, hp=None) -> np.ndarray:
    """Full Fisher estimate implied by a DyKAF or SOAP state.

    ``state`` needs ``Q_L``, ``Q_R`` and a ``second_moment`` (DyKAF's rank-1
    pair is materialized as ``v_l v_r^T``). When ``hp`` is given with bias
    correction enabled, an EMA second moment is divided by ``1 - beta2**step``
    exactly as the optimizer step does.
    """
    v = state.second_moment
    ema = getattr(state, "V", None) is not None
    if hp is not None and hp.bias_correction and ema and state.step > 0:
        v = v / (1.0 - hp.beta2**state.step)
    return fisher_from_basis(state.Q_L, state.Q_R, v)


def accuracy(model: SoftmaxModel, ds: Dataset) -> float:
    return float(np.mean(np.argmax(ds.X @ model.W.T, axis=1) == ds.y))


# ------------------------------------------------------------------ datasets

def read_libsvm(path) -> Dataset:
    """Parse a libsvm/svmlight text file (``label idx:val ...``, 1-based indices).

    Labels are mapped to ``0, 1, ...`` in order of first appearance and the
    feature dimension is the largest index seen.
    """
    path = os.fspath(path)
    rows, labels, classes = [], [], {}
    dim = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            label = parts[0]
            try:
                float(label)
            except ValueError:
                raise ParseError(f"bad label {label!r}", lineno) from None
            entries = {}
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected idx:val, got {tok!r}", lineno)
                try:
                    i, x = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"bad feature {tok!r}", lineno) from None
                if i < 1:
                    raise ParseError(f"feature index {i} is not 1-based", lineno)
                entries[i - 1] = x
                dim = max(dim, i)
            labels.append(classes.setdefault(label, len(classes)))
            rows.append(entries)
    if not rows:
        raise EmptyFile(f"{path}: no samples")
    X = np.zeros((len(rows), max(dim, 1)))
    for r, entries in enumerate(rows):
        for i, x in entries.items():
            X[r, i] = x
    return Dataset(X, np.array(labels), max(len(classes), 2))


def synth_blobs(num_classes: int, dim: int, count: int, seed: int,
                separation: float = 3.0) -> Dataset:
    """Gaussian class blobs with unit covariance.

    Class ``k`` is centred at ``separation * e_k``, the vertices of a scaled
    simplex, so ``dim >= num_classes`` is required. Labels are drawn
    uniformly. Fully determined by ``seed``.
    """
    if dim < num_classes:
        raise ValueError(f"need dim >= num_classes, got dim={dim}, classes={num_classes}")
    if num_classes < 2 or count < 1:
        raise ValueError("need at least two classes and one sample")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, num_classes, size=count)
    means = separation * np.eye(num_classes, dim)
    X = means[y] + rng.standard_normal((count, dim))
    return Dataset(X, y, num_classes)
