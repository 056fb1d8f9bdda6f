"""Experiment runners that turn a config into a list of records."""
from .config import EXPERIMENTS, ExperimentConfig, load_config
from .fisher_sim import run_fisher_sim
from .hessian_gap import run_hessian_gap
from .props import all_passed, run_prop_validators
from .records import ExperimentRecord, emit, read_csv, read_json
from .train import run_train

RUNNERS = {
    "fisher-sim": run_fisher_sim,
    "hessian-gap": run_hessian_gap,
    "props": run_prop_validators,
    "train": run_train,
}


def run(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    return RUNNERS[cfg.experiment](cfg)


__all__ = [
    "EXPERIMENTS", "ExperimentConfig", "ExperimentRecord", "RUNNERS", "all_passed", "emit",
    "load_config", "read_csv", "read_json", "run", "run_fisher_sim", "run_hessian_gap",
    "run_prop_validators", "run_train",
]
