"""Run independent seeds, optionally in worker processes, in a fixed order."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def map_seeds(fn, cfg) -> list:
    """Concatenate ``fn(cfg, seed)`` over ``cfg.seed_list`` in seed order."""
    seeds = cfg.seed_list
    if cfg.jobs <= 1 or len(seeds) == 1:
        chunks = [fn(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(seeds))) as pool:
            chunks = list(pool.map(fn, [cfg] * len(seeds), seeds))
    return [r for chunk in chunks for r in chunk]
