"""Plain softmax-regression training run with any of the optimizers."""
from __future__ import annotations

import numpy as np

from .. import model as md
from ..optim import METHODS, MatrixOptimizer
from .config import ExperimentConfig
from .hessian_gap import load_dataset
from .parallel import map_seeds
from .records import ExperimentRecord

EXPERIMENT = "train"


def run_seed(cfg: ExperimentConfig, seed: int) -> list[ExperimentRecord]:
    if cfg.method not in METHODS:
        raise ValueError(f"unknown method {cfg.method!r}; choose from {METHODS}")
    ds, fell_back = load_dataset(cfg, seed)
    rng = np.random.default_rng(seed)
    opt = MatrixOptimizer(cfg.method, cfg.hp)
    params = {"W": np.zeros((ds.num_classes, ds.dim))}
    out = []
    if fell_back:
        out.append(ExperimentRecord(EXPERIMENT, seed, "data", "synthetic_fallback", 0, 1.0))

    def record(t):
        m = md.SoftmaxModel(params["W"])
        out.append(ExperimentRecord(EXPERIMENT, seed, cfg.method, "loss", t, md.loss(m, ds)))
        out.append(ExperimentRecord(EXPERIMENT, seed, cfg.method, "accuracy", t, md.accuracy(m, ds)))

    record(0)
    for t in range(1, cfg.num_steps + 1):
        batch = ds
        if 0 < cfg.batch_size < ds.size:
            batch = ds.subset(rng.integers(0, ds.size, cfg.batch_size))
        params = opt.step(params, {"W": md.gradient(md.SoftmaxModel(params["W"]), batch)})
        record(t)
    return out


def run_train(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    return map_seeds(run_seed, cfg)
