"""Tracking an EMA of Gaussian-gradient outer products with Kronecker factors.

Every step draws ``G`` with i.i.d. standard normal entries, updates the dense
Fisher ``F`` and compares four Kronecker-structured estimates against it:
DyKAF's projector-splitting factors, Shampoo's ``L^{1/2} (x) R^{1/2}``, the
raw Shampoo factors ``L (x) R`` and the brute-force nearest Kronecker product.
"""
from __future__ import annotations

import math

import numpy as np

from .. import linalg as la
from ..errors import SizeCapExceeded
from ..kron_approx import (
    KroneckerFactorPair,
    init_from_gradient,
    kron_proj_split,
    nkp_best,
    shampoo_estimate,
)
from ..model import HESSIAN_MAX_DIM
from .config import ExperimentConfig
from .parallel import map_seeds
from .records import ExperimentRecord

EXPERIMENT = "fisher-sim"
METHODS = ("dykaf", "shampoo", "shampoo_raw", "nkp_best")


def preflight(rng: np.random.Generator, trials: int = 5) -> None:
    """Check the rearrangement identities the experiment relies on."""
    for _ in range(trials):
        m, n = rng.integers(2, 5, size=2)
        a = rng.standard_normal((m, m))
        b = rng.standard_normal((n, n))
        g = rng.standard_normal((m, n))
        r = la.rearrange(la.kron(a, b), m, m, n, n)
        if not np.allclose(r, np.outer(la.vec(a), la.vec(b)), rtol=0, atol=1e-12):
            raise RuntimeError("rearrange(kron(A, B)) != vec(A) vec(B)^T")
        r = la.rearrange(np.outer(la.vec(g), la.vec(g)), m, m, n, n)
        if not np.allclose(r, la.kron(g, g), rtol=0, atol=1e-12):
            raise RuntimeError("rearrange(vec(G) vec(G)^T) != G (x) G")


def scaled_error(f: np.ndarray, k: np.ndarray) -> float:
    """``min_c ||f - c k||``."""
    kk = la.frobenius_inner(k, k)
    ff = la.frobenius_inner(f, f)
    if kk == 0.0:
        return math.sqrt(ff)
    fk = la.frobenius_inner(f, k)
    return math.sqrt(max(ff - fk * fk / kk, 0.0))


def run_seed(cfg: ExperimentConfig, seed: int) -> list[ExperimentRecord]:
    m, n = cfg.m, cfg.n
    if m * n > HESSIAN_MAX_DIM:
        raise SizeCapExceeded(f"dense Fisher of dimension {m * n} exceeds {HESSIAN_MAX_DIM}")
    rng = np.random.default_rng(seed)
    preflight(rng)
    beta = cfg.ema_beta
    # weight of the new outer product and of the history
    w_new = 1.0 - beta if cfg.ema_normalized else 1.0
    F = np.zeros((m * n, m * n))
    dykaf = None
    shampoo = KroneckerFactorPair(np.zeros((m, m)), np.zeros((n, n)))
    out = []

    def record(method, metric, t, value):
        out.append(ExperimentRecord(EXPERIMENT, seed, method, metric, t, value))

    for t in range(1, cfg.num_steps + 1):
        g = rng.standard_normal((m, n))
        gv = la.vec(g)
        F *= beta
        F += w_new * np.outer(gv, gv)
        scaled_g = math.sqrt(w_new) * g
        if dykaf is None:
            dykaf = init_from_gradient(scaled_g)
        else:
            dykaf = kron_proj_split(dykaf.scaled(math.sqrt(beta)), scaled_g)
        shampoo = KroneckerFactorPair(beta * shampoo.L + w_new * (g @ g.T),
                                      beta * shampoo.R + w_new * (g.T @ g))
        best, _ = nkp_best(F, m, n)
        estimates = {
            "dykaf": dykaf.dense(),
            "shampoo": shampoo_estimate(shampoo),
            "shampoo_raw": shampoo.dense(),
            "nkp_best": best.dense(),
        }
        norm_f = la.frobenius_norm(F)
        for method in METHODS:
            k = estimates[method]
            err = la.frobenius_norm(F - k)
            record(method, "error", t, err)
            record(method, "rel_error", t, err / norm_f)
            record(method, "scaled_error", t, scaled_error(F, k))
    return out


def run_fisher_sim(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    return map_seeds(run_seed, cfg)


__all__ = ["run_fisher_sim", "run_seed", "preflight", "scaled_error"]
