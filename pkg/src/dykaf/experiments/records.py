"""Experiment output rows and their CSV/JSON serialization."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass

COLUMNS = ("experiment", "seed", "method", "metric", "x", "value")


@dataclass(frozen=True)
class ExperimentRecord:
    experiment: str
    seed: int
    method: str
    metric: str
    x: int
    value: float

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "x", int(self.x))
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite value in record {self}")


def sort_records(records):
    """Stable order: by experiment, then method, then x."""
    return sorted(records, key=lambda r: (r.experiment, r.method, r.x))


def to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in sort_records(records):
        writer.writerow([r.experiment, r.seed, r.method, r.metric, r.x, repr(r.value)])
    return buf.getvalue()


def to_json(records) -> str:
    return json.dumps([asdict(r) for r in sort_records(records)], indent=1) + "\n"


def emit(records, path, fmt: str = "csv") -> None:
    """Write records to ``path`` (``"-"`` or None for stdout) as CSV or JSON."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = to_csv(records) if fmt == "csv" else to_json(records)
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(os.fspath(path), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc.strerror or exc}") from exc


def read_json(path) -> list[ExperimentRecord]:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return [ExperimentRecord(**row) for row in json.load(fh)]


def read_csv(path) -> list[ExperimentRecord]:
    with open(os.fspath(path), encoding="utf-8", newline="") as fh:
        return [ExperimentRecord(**row) for row in csv.DictReader(fh)]
