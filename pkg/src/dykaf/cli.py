"""``dykaf`` command-line entry point.

Settings are resolved as built-in defaults, then ``--config`` (flat JSON),
then flags and ``--set key=value`` pairs. Exit status is 0 on success, 1 on
a runtime error or a failing validator, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import linalg as la
from .errors import DykafError
from .experiments import EXPERIMENTS, ExperimentConfig, all_passed, emit, load_config, run
from .kron_approx import (
    KroneckerFactorPair,
    Rank1Factorization,
    init_from_gradient,
    kron_proj_split,
    nkp_best,
    proj_split_step,
)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# (flag, config key, argparse kwargs)
FLAGS = [
    ("--seed", "seed", dict(type=int)),
    ("--seeds", "seeds", dict(type=_int_list, help="comma-separated list; overrides --seed")),
    ("--steps", "steps", dict(type=int)),
    ("--m", "m", dict(type=int, help="rows of the simulated gradient")),
    ("--n", "n", dict(type=int, help="columns of the simulated gradient")),
    ("--ema-beta", "ema_beta", dict(type=float)),
    ("--dataset", "dataset", dict(help="libsvm file, relative to the data directory")),
    ("--data-dir", "data_dir", dict(help="dataset search root (overrides $DYKAF_DATA_DIR)")),
    ("--sample-sizes", "sample_sizes", dict(type=_int_list)),
    ("--batch-size", "batch_size", dict(type=int, help="0 means full batch")),
    ("--method", "method", dict()),
    ("--output", "output", dict(help="output file, '-' for stdout")),
    ("--format", "format", dict(choices=("csv", "json"))),
    ("--jobs", "jobs", dict(type=int)),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dykaf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key or hyperparameter (repeatable)")
        for flag, key, kwargs in FLAGS:
            p.add_argument(flag, dest=key, default=None, **kwargs)
        p.add_argument("--no-fallback", dest="allow_fallback", action="store_const", const=False,
                       default=None, help="fail instead of using synthetic data")
    p = sub.add_parser("selftest", help="check the core linear-algebra identities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Merge defaults, the config file and inline overrides."""
    settings = {}
    if args.config:
        settings.update(load_config(args.config))
    settings["experiment"] = args.command
    for _, key, _ in FLAGS:
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.allow_fallback is not None:
        settings["allow_fallback"] = False
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        settings[key.strip()] = _parse_value(value)
    try:
        return ExperimentConfig.from_dict(settings)
    except (KeyError, TypeError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise UsageError(msg) from None


# ------------------------------------------------------------------ selftest

def _selftest_checks(rng: np.random.Generator):
    def rearrange():
        m1, n1, m2, n2 = (int(k) for k in rng.integers(1, 5, size=4))
        a, b = rng.standard_normal((m1, n1)), rng.standard_normal((m2, n2))
        r = la.rearrange(la.kron(a, b), m1, n1, m2, n2)
        return np.allclose(r, np.outer(la.vec(a), la.vec(b)), rtol=0, atol=1e-12)

    def kron_identity():
        m, n = (int(k) for k in rng.integers(1, 6, size=2))
        b, c, x = rng.standard_normal((m, m)), rng.standard_normal((n, n)), rng.standard_normal((m, n))
        return np.allclose(la.vec(b @ x @ c.T), la.kron(b, c) @ la.vec(x), rtol=1e-12, atol=1e-12)

    def qr():
        m = int(rng.integers(2, 9))
        n = int(rng.integers(1, m + 1))
        a = rng.standard_normal((m, n))
        q, r = la.qr(a)
        return (np.allclose(q @ r, a, atol=1e-12) and np.allclose(q.T @ q, np.eye(n), atol=1e-12)
                and bool(np.all(np.diag(r) >= 0)) and np.allclose(r, np.triu(r)))

    def sym_eig():
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, n))
        a = a + a.T
        w, q = la.sym_eig(a)
        return np.allclose(q @ np.diag(w) @ q.T, a, atol=1e-10) and bool(np.all(np.diff(w) <= 0))

    def power_iteration():
        m, n = (int(k) for k in rng.integers(1, 9, size=2))
        g = rng.standard_normal((m, n))
        t = la.dominant_singular_triplet(g)
        return abs(t.sigma - np.linalg.norm(g, 2)) <= 1e-9 * t.sigma

    def kron_proj_split_equivalence():
        m, n = (int(k) for k in rng.integers(2, 6, size=2))
        a, b = rng.standard_normal((m, m)), rng.standard_normal((n, n))
        pair = KroneckerFactorPair(a @ a.T + np.eye(m), b @ b.T + np.eye(n))
        g = rng.standard_normal((m, n))
        nl, nr = la.frobenius_norm(pair.L), la.frobenius_norm(pair.R)
        ref = proj_split_step(Rank1Factorization(la.vec(pair.L) / nl, la.vec(pair.R) / nr, nl * nr),
                              la.kron(g, g)).dense()
        got = la.rearrange(kron_proj_split(pair, g).dense(), m, m, n, n)
        return la.frobenius_norm(got - ref) <= 1e-10 * la.frobenius_norm(ref)

    def init_optimality():
        m, n = (int(k) for k in rng.integers(1, 7, size=2))
        g = rng.standard_normal((m, n))
        gg = np.outer(la.vec(g), la.vec(g))
        res = la.frobenius_norm(gg - init_from_gradient(g).dense())
        return abs(res - nkp_best(gg, m, n)[1]) <= 1e-9 * la.frobenius_norm(gg)

    return [
        ("rearrange", rearrange),
        ("kron-identity", kron_identity),
        ("qr", qr),
        ("sym-eig", sym_eig),
        ("power-iteration", power_iteration),
        ("kron-proj-split", kron_proj_split_equivalence),
        ("init-optimality", init_optimality),
    ]


def selftest(seed: int = 0, trials: int = 20, out=None) -> bool:
    out = sys.stdout if out is None else out
    rng = np.random.default_rng(seed)
    ok = True
    for name, check in _selftest_checks(rng):
        passed = sum(bool(check()) for _ in range(trials))
        ok &= passed == trials
        print(f"{name}: {passed}/{trials} passed", file=out)
    return ok


# ---------------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, bad usage exits 2
        return int(exc.code or 0)
    try:
        if args.command == "selftest":
            if args.trials < 1:
                raise UsageError("--trials must be >= 1")
            return EXIT_OK if selftest(args.seed, args.trials) else EXIT_FAILURE
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"dykaf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"dykaf: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        records = run(cfg)
        emit(records, cfg.output, cfg.format)
    except (DykafError, OSError, ValueError, ArithmeticError, AssertionError, RuntimeError) as exc:
        print(f"dykaf: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if cfg.experiment == "props" and not all_passed(records):
        print("dykaf: validator failure", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
