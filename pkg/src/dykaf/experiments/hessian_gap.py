"""Distance from the exact softmax-regression Hessian to each optimizer's Fisher estimate.

For every sample size the same subsample and the same minibatch schedule
are used for SOAP and DyKAF. After training, the optimizer state is turned
into a dense Fisher estimate and compared with the analytic Hessian at that
optimizer's final weights.
"""
from __future__ import annotations

import os

import numpy as np

from .. import linalg as la
from .. import model as md
from .. import optim as op
from ..errors import DatasetUnavailable
from .config import ExperimentConfig
from .parallel import map_seeds
from .records import ExperimentRecord

EXPERIMENT = "hessian-gap"
METHODS = ("dykaf", "soap")
FD_STEP = 1e-5
FD_TOL = 1e-6


def load_dataset(cfg: ExperimentConfig, seed: int) -> tuple[md.Dataset, bool]:
    """The configured libsvm dataset, or synthetic blobs. Returns ``(dataset, fell_back)``."""
    path = cfg.dataset_path()
    if path is not None:
        if os.path.isfile(path):
            return md.read_libsvm(path), False
        if not cfg.allow_fallback:
            raise DatasetUnavailable(f"dataset not found: {path}")
    pool = max(cfg.sample_sizes)
    ds = md.synth_blobs(cfg.synth_classes, cfg.synth_features, pool, seed)
    return ds, path is not None


def hessian_fd_error(w: np.ndarray, ds: md.Dataset, h: np.ndarray,
                     rng: np.random.Generator, step: float = FD_STEP) -> float:
    """Relative error of ``H d`` against a central difference of the gradient."""
    d = rng.standard_normal(w.shape)
    d /= la.frobenius_norm(d)
    gp = md.gradient(md.SoftmaxModel(w + step * d), ds)
    gm = md.gradient(md.SoftmaxModel(w - step * d), ds)
    fd = la.vec(gp - gm) / (2.0 * step)
    hv = h @ la.vec(d)
    return float(np.linalg.norm(fd - hv) / max(np.linalg.norm(hv), 1e-300))


def train(method: str, ds: md.Dataset, batches, hp: op.Hyperparams):
    """Train from ``W = 0`` over the given minibatch index sequence; returns ``(W, state)``."""
    w = np.zeros((ds.num_classes, ds.dim))
    state = None
    for idx in batches:
        sub = ds if idx is None else ds.subset(idx)
        g = md.gradient(md.SoftmaxModel(w), sub)
        if method == "dykaf":
            state = state or op.dykaf_init(g, hp)
            state, w = op.dykaf_step(state, w, g, hp)
        elif method == "soap":
            state = state or op.soap_init(w.shape, hp)
            state, w = op.soap_step(state, w, g, hp)
        else:
            raise ValueError(f"unsupported method {method!r}")
    return w, state


def run_seed(cfg: ExperimentConfig, seed: int) -> list[ExperimentRecord]:
    ds, fell_back = load_dataset(cfg, seed)
    hp = cfg.hp
    out = []
    if fell_back:
        out.append(ExperimentRecord(EXPERIMENT, seed, "data", "synthetic_fallback", 0, 1.0))
    rng = np.random.default_rng(seed)
    for size in cfg.sample_sizes:
        if size > ds.size:
            raise ValueError(f"sample size {size} exceeds dataset size {ds.size}")
        sub = ds.subset(np.sort(rng.permutation(ds.size)[:size]))
        if cfg.batch_size == 0 or cfg.batch_size >= size:
            batches = [None] * cfg.num_steps
        else:
            batches = [rng.integers(0, size, cfg.batch_size) for _ in range(cfg.num_steps)]
        for method in METHODS:
            w, state = train(method, sub, batches, hp)
            h = md.hessian(md.SoftmaxModel(w), sub)
            fd = hessian_fd_error(w, sub, h, rng)
            if not fd <= FD_TOL:
                raise AssertionError(
                    f"analytic Hessian disagrees with finite differences (rel. error {fd:.2e})")
            f = md.fisher_reconstruct(state, hp)
            gap = la.frobenius_norm(h - f)
            out.append(ExperimentRecord(EXPERIMENT, seed, method, "hessian_gap", size, gap))
            out.append(ExperimentRecord(EXPERIMENT, seed, method, "rel_gap", size,
                                        gap / max(la.frobenius_norm(h), 1e-300)))
            out.append(ExperimentRecord(EXPERIMENT, seed, method, "fd_rel_error", size, fd))
    return out


def run_hessian_gap(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    return map_seeds(run_seed, cfg)
