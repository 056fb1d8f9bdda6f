"""Optimizer steps for matrix-shaped parameters.

Every optimizer is a pair of pure functions, ``*_init`` and ``*_step``; a step
takes ``(state, w, g, hp)`` and returns ``(new_state, new_w)`` without touching
its inputs. :class:`MatrixOptimizer` strings them together over a dict of
named parameters and routes non-matrix parameters to AdamW.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .errors import RankCollapse, ZeroGradient
from .kron_approx import (
    KroneckerFactorPair,
    Rank1Factorization,
    init_from_gradient,
    kron_proj_split,
    proj_split_step,
    shampoo_factor_update,
)

INIT_DAMPING = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    precond_frequency: int = 10
    rank1_second_moment: bool = False
    weight_decay: float = 0.0
    bias_correction: bool = True
    shampoo_matrix_eps: float = 1e-12
    # decay applied to the Kronecker factors before each DyKAF update; None -> beta1
    factor_beta: float | None = None
    # EMA decay of the rank-1 second moment; None -> plain accumulation
    second_moment_decay: float | None = None
    # EMA decay of the Shampoo factors; 1.0 -> plain accumulation
    shampoo_beta: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.precond_frequency) != self.precond_frequency or self.precond_frequency < 1:
            raise ValueError(f"precond_frequency must be a positive integer, got {self.precond_frequency}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.shampoo_matrix_eps > 0:
            raise ValueError(f"shampoo_matrix_eps must be > 0, got {self.shampoo_matrix_eps}")
        for name in ("factor_beta", "second_moment_decay"):
            b = getattr(self, name)
            if b is not None and not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not 0.0 < self.shampoo_beta <= 1.0:
            raise ValueError(f"shampoo_beta must lie in (0, 1], got {self.shampoo_beta}")

    @property
    def effective_factor_beta(self) -> float:
        return self.beta1 if self.factor_beta is None else self.factor_beta

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown hyperparameter(s): {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DyKafParamState:
    step: int
    M: np.ndarray
    factors: KroneckerFactorPair
    Q_L: np.ndarray
    Q_R: np.ndarray
    V: np.ndarray | None = None
    v_l: np.ndarray | None = None
    v_r: np.ndarray | None = None

    @property
    def second_moment(self) -> np.ndarray:
        """The second moment as a dense ``m x n`` matrix (rank-1 mode is materialized)."""
        if self.V is not None:
            return self.V
        return np.maximum(np.outer(self.v_l, self.v_r), 0.0)


@dataclass(frozen=True)
class SoapState:
    step: int
    M: np.ndarray
    V: np.ndarray
    factors: KroneckerFactorPair
    Q_L: np.ndarray
    Q_R: np.ndarray
    basis_ready: bool = False

    @property
    def second_moment(self) -> np.ndarray:
        return self.V


@dataclass(frozen=True)
class ShampooState:
    step: int
    factors: KroneckerFactorPair


@dataclass(frozen=True)
class AdamWState:
    step: int
    M: np.ndarray
    V: np.ndarray


def _bias(beta: float, step: int, enabled: bool) -> float:
    return 1.0 - beta**step if enabled else 1.0


def _apply_update(w: np.ndarray, n: np.ndarray, hp: Hyperparams) -> np.ndarray:
    # decoupled weight decay, scaled by the learning rate
    return w - hp.learning_rate * (n + hp.weight_decay * w)


def eigenvectors_refresh(p, q, rank_tol: float = 1e-15) -> np.ndarray:
    """One orthogonal-iteration step ``Q <- qr(P Q).Q`` towards the eigenvectors of ``P``.

    Falls back to a full eigendecomposition of ``P`` when ``P Q`` has a
    column that is numerically zero.
    """
    p = la.as_matrix(p, "p")
    s = p @ q
    try:
        q_new, r = la.qr(s)
        if np.min(np.abs(np.diag(r))) <= rank_tol * max(la.frobenius_norm(p), 1e-300):
            raise RankCollapse("P Q has a vanishing column")
    except RankCollapse:
        return la.sym_eig(p).eigenvectors
    return q_new


# --------------------------------------------------------------------- DyKAF

def dykaf_init(g1, hp: Hyperparams) -> DyKafParamState:
    """State built from the first gradient.

    The factors are the best Kronecker approximation of ``vec(g1) vec(g1)^T``
    damped by ``1e-12 * sigma_1(g1) * I`` so their eigenbases are well defined.
    """
    g1 = la.as_matrix(g1, "g1")
    if la.frobenius_norm(g1) == 0.0:
        raise ZeroGradient("DyKAF needs a nonzero first gradient")
    m, n = g1.shape
    pair = init_from_gradient(g1)
    delta = INIT_DAMPING * la.frobenius_norm(pair.L)
    pair = KroneckerFactorPair(pair.L + delta * np.eye(m), pair.R + delta * np.eye(n))
    q_l = la.sym_eig(pair.L).eigenvectors
    q_r = la.sym_eig(pair.R).eigenvectors
    if hp.rank1_second_moment:
        return DyKafParamState(0, np.zeros((m, n)), pair, q_l, q_r,
                               v_l=np.full(m, hp.epsilon), v_r=np.full(n, hp.epsilon))
    return DyKafParamState(0, np.zeros((m, n)), pair, q_l, q_r, V=np.zeros((m, n)))


def _rank1_second_moment(v_l, v_r, g2, decay):
    nl, nr = la.frobenius_norm(v_l), la.frobenius_norm(v_r)
    s = nl * nr
    if decay is not None:
        s *= decay
        g2 = (1.0 - decay) * g2
    out = proj_split_step(Rank1Factorization(v_l / nl, v_r / nr, s), g2)
    root = math.sqrt(max(out.s, 0.0))
    # the iterate stays entrywise nonnegative for nonnegative updates; clamp roundoff
    return np.maximum(root * out.u, 0.0), np.maximum(root * out.v, 0.0)


def dykaf_step(state: DyKafParamState, w, g, hp: Hyperparams):
    """One DyKAF step; returns ``(new_state, new_w)``."""
    w = la.as_matrix(w, "w")
    g = la.as_matrix(g, "g")
    t = state.step + 1
    q_l, q_r = state.Q_L, state.Q_R

    g_rot = q_l.T @ g @ q_r
    M = hp.beta1 * state.M + (1.0 - hp.beta1) * g
    m_rot = (q_l.T @ M @ q_r) / _bias(hp.beta1, t, hp.bias_correction)
    V = v_l = v_r = None
    if hp.rank1_second_moment:
        v_l, v_r = _rank1_second_moment(state.v_l, state.v_r, g_rot * g_rot, hp.second_moment_decay)
        denom = la.hadamard_pow(np.maximum(np.outer(v_l, v_r), 0.0), 0.5) + hp.epsilon
    else:
        V = hp.beta2 * state.V + (1.0 - hp.beta2) * (g_rot * g_rot)
        denom = la.hadamard_pow(V / _bias(hp.beta2, t, hp.bias_correction), 0.5) + hp.epsilon
    n_rot = la.hadamard_div(m_rot, denom)
    w_new = _apply_update(w, q_l @ n_rot @ q_r.T, hp)

    fb = hp.effective_factor_beta
    if fb > 0.0:
        factors = kron_proj_split(state.factors.scaled(math.sqrt(fb)), math.sqrt(1.0 - fb) * g)
    elif np.any(g):
        # no memory: the step's limit is the best Kronecker fit of g g^T alone
        factors = init_from_gradient(g)
    else:
        factors = state.factors
    if t % hp.precond_frequency == 0:
        q_l = eigenvectors_refresh(factors.L, q_l)
        q_r = eigenvectors_refresh(factors.R, q_r)
    new = DyKafParamState(t, M, factors, q_l, q_r, V=V, v_l=v_l, v_r=v_r)
    return new, w_new


# ---------------------------------------------------------------------- SOAP

def soap_init(shape, hp: Hyperparams) -> SoapState:
    """Zero moments, factors ``eps * I`` and identity bases.

    The bases are replaced by a full eigendecomposition of the factors at the
    end of the first step (``basis_ready``); afterwards they are refreshed by
    orthogonal iteration every ``precond_frequency`` steps.
    """
    m, n = shape
    eps = hp.shampoo_matrix_eps
    pair = KroneckerFactorPair(eps * np.eye(m), eps * np.eye(n))
    return SoapState(0, np.zeros((m, n)), np.zeros((m, n)), pair, np.eye(m), np.eye(n))


def soap_step(state: SoapState, w, g, hp: Hyperparams):
    w = la.as_matrix(w, "w")
    g = la.as_matrix(g, "g")
    t = state.step + 1
    q_l, q_r = state.Q_L, state.Q_R

    g_rot = q_l.T @ g @ q_r
    M = hp.beta1 * state.M + (1.0 - hp.beta1) * g
    m_rot = (q_l.T @ M @ q_r) / _bias(hp.beta1, t, hp.bias_correction)
    V = hp.beta2 * state.V + (1.0 - hp.beta2) * (g_rot * g_rot)
    denom = la.hadamard_pow(V / _bias(hp.beta2, t, hp.bias_correction), 0.5) + hp.epsilon
    w_new = _apply_update(w, q_l @ la.hadamard_div(m_rot, denom) @ q_r.T, hp)

    factors = shampoo_factor_update(state.factors, g, hp.beta2)
    ready = state.basis_ready
    if not ready:
        q_l = la.sym_eig(factors.L).eigenvectors
        q_r = la.sym_eig(factors.R).eigenvectors
        ready = True
    elif t % hp.precond_frequency == 0:
        q_l = eigenvectors_refresh(factors.L, q_l)
        q_r = eigenvectors_refresh(factors.R, q_r)
    return SoapState(t, M, V, factors, q_l, q_r, ready), w_new


# ------------------------------------------------------------------- Shampoo

def shampoo_init(shape, hp: Hyperparams) -> ShampooState:
    m, n = shape
    eps = hp.shampoo_matrix_eps
    return ShampooState(0, KroneckerFactorPair(eps * np.eye(m), eps * np.eye(n)))


def inverse_fourth_root(a, eps: float) -> np.ndarray:
    return la.sym_func(a, lambda w: np.maximum(w, eps) ** -0.25)


def shampoo_precondition(L, R, g, eps: float = 1e-12) -> np.ndarray:
    """``L^{-1/4} g R^{-1/4}``, eigenvalues of both factors clamped below at ``eps``."""
    return inverse_fourth_root(L, eps) @ la.as_matrix(g, "g") @ inverse_fourth_root(R, eps)


def shampoo_step(state: ShampooState, w, g, hp: Hyperparams):
    w = la.as_matrix(w, "w")
    g = la.as_matrix(g, "g")
    factors = shampoo_factor_update(state.factors, g, hp.shampoo_beta)
    n = shampoo_precondition(factors.L, factors.R, g, hp.shampoo_matrix_eps)
    return ShampooState(state.step + 1, factors), _apply_update(w, n, hp)


# --------------------------------------------------------------------- AdamW

def adamw_init(shape, hp: Hyperparams | None = None) -> AdamWState:
    return AdamWState(0, np.zeros(shape), np.zeros(shape))


def adamw_step(state: AdamWState, w, g, hp: Hyperparams):
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    t = state.step + 1
    M = hp.beta1 * state.M + (1.0 - hp.beta1) * g
    V = hp.beta2 * state.V + (1.0 - hp.beta2) * (g * g)
    m_hat = M / _bias(hp.beta1, t, hp.bias_correction)
    denom = la.hadamard_pow(V / _bias(hp.beta2, t, hp.bias_correction), 0.5) + hp.epsilon
    return AdamWState(t, M, V), _apply_update(w, la.hadamard_div(m_hat, denom), hp)


# --------------------------------------------------------------- multi-param

METHODS = ("dykaf", "soap", "shampoo", "adamw")


@dataclass
class MatrixOptimizer:
    """Applies one method to a dict of named parameters.

    Matrix parameters use ``method``; anything that is not 2-D (biases,
    scalars) is updated with AdamW. DyKAF states are created lazily from the
    first nonzero gradient they see; until then the parameter is left as is.
    """

    method: str
    hp: Hyperparams = field(default_factory=Hyperparams)
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")

    def step(self, params: dict, grads: dict) -> dict:
        out = {}
        for name, w in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            w = np.asarray(w, dtype=np.float64)
            if w.ndim != 2 or self.method == "adamw":
                state = self.states.get(name) or adamw_init(w.shape)
                self.states[name], out[name] = adamw_step(state, w, g, self.hp)
                continue
            state = self.states.get(name)
            if self.method == "dykaf":
                if state is None:
                    if not np.any(g):
                        out[name] = w
                        continue
                    state = dykaf_init(g, self.hp)
                self.states[name], out[name] = dykaf_step(state, w, g, self.hp)
            elif self.method == "soap":
                state = state or soap_init(w.shape, self.hp)
                self.states[name], out[name] = soap_step(state, w, g, self.hp)
            else:
                state = state or shampoo_init(w.shape, self.hp)
                self.states[name], out[name] = shampoo_step(state, w, g, self.hp)
        return out


__all__ = [
    "Hyperparams", "DyKafParamState", "SoapState", "ShampooState", "AdamWState",
    "dykaf_init", "dykaf_step", "soap_init", "soap_step", "shampoo_init", "shampoo_step",
    "shampoo_precondition", "adamw_init", "adamw_step", "eigenvectors_refresh",
    "MatrixOptimizer", "METHODS",
]
