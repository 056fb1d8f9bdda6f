"""Flat experiment configuration with JSON loading and key validation."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from ..optim import Hyperparams

EXPERIMENTS = ("fisher-sim", "hessian-gap", "props", "train")
DEFAULT_STEPS = {"fisher-sim": 200, "hessian-gap": 500, "props": 0, "train": 500}
# learning rate used by the training-based experiments unless overridden
TRAIN_LEARNING_RATE = 1e-2
DATA_ENV = "DYKAF_DATA_DIR"
HP_KEYS = tuple(f.name for f in dataclasses.fields(Hyperparams))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "fisher-sim"
    seed: int = 0
    seeds: tuple | None = None        # overrides ``seed`` when given
    m: int = 32
    n: int = 32
    steps: int | None = None          # None -> per-experiment default
    ema_beta: float = 0.9
    ema_normalized: bool = True       # False -> F <- beta F + g g^T
    hyperparams: dict = field(default_factory=dict)
    dataset: str | None = "mushrooms"  # libsvm path, relative to data_dir; None -> synthetic
    data_dir: str | None = None
    allow_fallback: bool = True
    sample_sizes: tuple = (64, 128, 256, 512, 1024)
    batch_size: int = 32              # 0 -> full batch
    synth_classes: int = 3
    synth_features: int = 8
    method: str = "dykaf"
    output: str = "-"
    format: str = "csv"
    jobs: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
            if not self.seeds:
                raise ValueError("seeds must not be empty")
        object.__setattr__(self, "sample_sizes", tuple(int(s) for s in self.sample_sizes))
        for name in ("m", "n", "synth_classes", "synth_features", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")
        if not 0.0 <= self.ema_beta < 1.0:
            raise ValueError(f"ema_beta must lie in [0, 1), got {self.ema_beta}")
        if self.format not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.format!r}")
        if any(s < 1 for s in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        self.hp  # validates hyperparameter keys and values

    @property
    def seed_list(self) -> tuple:
        return self.seeds if self.seeds is not None else (int(self.seed),)

    @property
    def num_steps(self) -> int:
        return DEFAULT_STEPS[self.experiment] if self.steps is None else int(self.steps)

    @property
    def hp(self) -> Hyperparams:
        base = {}
        if self.experiment in ("hessian-gap", "train"):
            base["learning_rate"] = TRAIN_LEARNING_RATE
        return Hyperparams.from_dict({**base, **self.hyperparams})

    def dataset_path(self) -> str | None:
        if self.dataset is None:
            return None
        root = self.data_dir if self.data_dir is not None else os.environ.get(DATA_ENV)
        if root is None or os.path.isabs(self.dataset):
            return self.dataset
        return os.path.join(root, self.dataset)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from a flat mapping; optimizer hyperparameters may appear at top level."""
        known = {f.name for f in dataclasses.fields(cls)}
        d = dict(d)
        hp = dict(d.pop("hyperparams", None) or {})
        for key in list(d):
            if key in HP_KEYS:
                hp[key] = d.pop(key)
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown config key(s): {', '.join(unknown)}")
        for key, value in d.items():
            _check_type(key, value, _TYPES[key])
        for key, value in hp.items():
            if key in _HP_TYPES:
                _check_type(key, value, _HP_TYPES[key])
        return cls(hyperparams=hp, **d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = None if self.seeds is None else list(self.seeds)
        d["sample_sizes"] = list(self.sample_sizes)
        return d


# accepted JSON value kinds per key; "int?" etc. also accept null
_TYPES = {
    "experiment": "str", "seed": "int", "seeds": "ints?", "m": "int", "n": "int", "steps": "int?",
    "ema_beta": "float", "ema_normalized": "bool", "hyperparams": "dict", "dataset": "str?",
    "data_dir": "str?", "allow_fallback": "bool", "sample_sizes": "ints", "batch_size": "int",
    "synth_classes": "int", "synth_features": "int", "method": "str", "output": "str",
    "format": "str", "jobs": "int",
}
_HP_TYPES = {
    f.name: ("bool" if f.type in ("bool", bool) else "int" if f.name == "precond_frequency"
             else "float?" if "None" in str(f.type) else "float")
    for f in dataclasses.fields(Hyperparams)
}


def _check_type(key: str, value, kind: str) -> None:
    if kind.endswith("?"):
        if value is None:
            return
        kind = kind[:-1]
    is_int = isinstance(value, int) and not isinstance(value, bool)
    ok = {
        "str": isinstance(value, str),
        "int": is_int,
        "float": is_int or isinstance(value, float),
        "bool": isinstance(value, bool),
        "dict": isinstance(value, dict),
        "ints": isinstance(value, (list, tuple))
        and all(isinstance(v, int) and not isinstance(v, bool) for v in value),
    }[kind]
    if not ok:
        raise ValueError(f"bad value for {key}: {value!r} (expected {kind})")


def load_config(path) -> dict:
    """Read a flat JSON object from ``path``; returns the raw mapping."""
    with open(os.fspath(path), encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data
