import json
import math

import numpy as np
import pytest

from dykaf import linalg as la
from dykaf.errors import DatasetUnavailable
from dykaf.experiments import (
    ExperimentConfig,
    ExperimentRecord,
    emit,
    read_csv,
    read_json,
    run,
)
from dykaf.experiments import fisher_sim, hessian_gap, props
from dykaf.experiments.records import to_csv


def rec(**kw):
    base = dict(experiment="e", seed=0, method="m", metric="v", x=0, value=1.0)
    base.update(kw)
    return ExperimentRecord(**base)


# ------------------------------------------------------------------ records

def test_empty_csv_is_header_only(tmp_path):
    p = tmp_path / "out.csv"
    emit([], p, "csv")
    assert p.read_text() == "experiment,seed,method,metric,x,value\n"


def test_csv_row_count_and_order(tmp_path):
    rs = [rec(method="b", x=2), rec(method="a", x=5), rec(method="b", x=1), rec(experiment="a", x=9)]
    p = tmp_path / "out.csv"
    emit(rs, p, "csv")
    lines = p.read_text().splitlines()
    assert len(lines) == len(rs) + 1
    assert [tuple(l.split(",")[0:5:2]) for l in lines[1:]] == [
        ("a", "m", "9"), ("e", "a", "5"), ("e", "b", "1"), ("e", "b", "2")]
    assert sorted(read_csv(p), key=repr) == sorted(rs, key=repr)


def test_json_roundtrip(tmp_path):
    rs = [rec(value=math.pi, x=i, seed=3) for i in range(4)] + [rec(value=1e-300)]
    p = tmp_path / "out.json"
    emit(rs, p, "json")
    assert sorted(read_json(p), key=repr) == sorted(rs, key=repr)
    data = json.loads(p.read_text())
    assert set(data[0]) == {"experiment", "seed", "method", "metric", "x", "value"}


def test_record_rejects_non_finite_and_bad_paths(tmp_path):
    with pytest.raises(ValueError):
        rec(value=float("nan"))
    with pytest.raises(OSError, match="nodir"):
        emit([rec()], tmp_path / "nodir" / "x.csv", "csv")
    with pytest.raises(ValueError):
        emit([], tmp_path / "x", "xml")


def test_emit_stdout(capsys):
    emit([rec()], "-", "csv")
    assert capsys.readouterr().out == to_csv([rec()])


# ------------------------------------------------------------------- config

def test_config_flat_hyperparams_and_unknown_keys():
    cfg = ExperimentConfig.from_dict({"experiment": "train", "learning_rate": 0.5, "seed": 4})
    assert cfg.hp.learning_rate == 0.5 and cfg.seed == 4
    assert ExperimentConfig(experiment="train").hp.learning_rate == 1e-2
    assert ExperimentConfig(experiment="fisher-sim").num_steps == 200
    with pytest.raises(KeyError):
        ExperimentConfig.from_dict({"nonsense": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"steps": "many"})
    with pytest.raises(ValueError):
        ExperimentConfig(experiment="fisher-sim", hyperparams={"beta1": 2.0})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_dataset_path_resolution(monkeypatch):
    monkeypatch.setenv("DYKAF_DATA_DIR", "/env")
    assert ExperimentConfig().dataset_path() == "/env/mushrooms"
    assert ExperimentConfig(data_dir="/flag").dataset_path() == "/flag/mushrooms"
    assert ExperimentConfig(dataset="/abs/x.svm").dataset_path() == "/abs/x.svm"
    assert ExperimentConfig(dataset=None).dataset_path() is None


# --------------------------------------------------------------- fisher-sim

@pytest.fixture(scope="module")
def small_fisher():
    cfg = ExperimentConfig(m=4, n=3, steps=30, seed=1)
    rs = fisher_sim.run_seed(cfg, 1)
    return {(r.method, r.metric, r.x): r.value for r in rs}


def test_fisher_sim_first_step_is_optimal(small_fisher):
    d = small_fisher
    assert abs(d[("dykaf", "error", 1)] - d[("nkp_best", "error", 1)]) <= 1e-9 * max(1.0, d[("nkp_best", "error", 1)])


def test_fisher_sim_oracle_dominance(small_fisher):
    d = small_fisher
    for (method, metric, t), v in d.items():
        if metric in ("error", "scaled_error") and method != "nkp_best":
            assert v >= d[("nkp_best", "error", t)] * (1 - 1e-9)


def test_fisher_sim_scaled_error_not_above_raw(small_fisher):
    for (method, metric, t), v in small_fisher.items():
        if metric == "error":
            assert small_fisher[(method, "scaled_error", t)] <= v * (1 + 1e-12)


def test_scaled_error_closed_form():
    f = np.diag([1.0, 2.0])
    assert fisher_sim.scaled_error(f, 3.0 * f) == pytest.approx(0.0, abs=1e-12)
    k = np.eye(2)
    assert fisher_sim.scaled_error(f, k) == pytest.approx(math.sqrt(5 - 4.5))


def test_fisher_sim_unnormalized_variant():
    rs = fisher_sim.run_seed(ExperimentConfig(m=3, n=3, steps=5, ema_normalized=False), 0)
    d = {(r.method, r.metric, r.x): r.value for r in rs}
    assert abs(d[("dykaf", "error", 1)] - d[("nkp_best", "error", 1)]) <= 1e-9 * max(1.0, d[("nkp_best", "error", 1)])


def test_preflight_passes():
    fisher_sim.preflight(np.random.default_rng(0))


# -------------------------------------------------------------- hessian-gap

def small_gap(**kw):
    base = dict(experiment="hessian-gap", sample_sizes=(20, 40), steps=30, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


def test_hessian_gap_fallback_record_and_determinism(tmp_path):
    cfg = small_gap(data_dir=str(tmp_path))
    a, b = run(cfg), run(cfg)
    assert a == b
    assert any(r.metric == "synthetic_fallback" for r in a)
    gaps = [r for r in a if r.metric == "hessian_gap"]
    assert {(r.method, r.x) for r in gaps} == {(m, x) for m in ("dykaf", "soap") for x in (20, 40)}
    assert max(r.value for r in a if r.metric == "fd_rel_error") <= hessian_gap.FD_TOL


def test_hessian_gap_no_fallback(tmp_path):
    with pytest.raises(DatasetUnavailable, match=str(tmp_path)):
        run(small_gap(data_dir=str(tmp_path), allow_fallback=False))


def test_hessian_gap_reads_libsvm(tmp_path):
    r = np.random.default_rng(0)
    with open(tmp_path / "tiny.svm", "w") as fh:
        for _ in range(60):
            y = int(r.integers(1, 3))
            fh.write(f"{y} " + " ".join(f"{i + 1}:{r.standard_normal() + y:.4f}" for i in range(4)) + "\n")
    rs = run(small_gap(dataset="tiny.svm", data_dir=str(tmp_path)))
    assert not any(r.metric == "synthetic_fallback" for r in rs)
    assert len([r for r in rs if r.metric == "hessian_gap"]) == 4


def test_hessian_gap_full_batch_and_synthetic():
    rs = run(small_gap(dataset=None, batch_size=0, steps=10))
    assert not any(r.metric == "synthetic_fallback" for r in rs)


def test_hessian_gap_sample_size_too_large(tmp_path):
    (tmp_path / "three.svm").write_text("1 1:1\n2 2:1\n1 1:2\n")
    with pytest.raises(ValueError, match="exceeds dataset size"):
        run(small_gap(dataset="three.svm", data_dir=str(tmp_path)))
    ds, _ = hessian_gap.load_dataset(small_gap(dataset=None), 0)
    assert ds.size == 40


def test_hessian_gap_parallel_matches_serial():
    serial = run(small_gap(dataset=None, seeds=(0, 1), steps=10))
    parallel = run(small_gap(dataset=None, seeds=(0, 1), steps=10, jobs=2))
    assert serial == parallel


# -------------------------------------------------------------------- props

def test_coherence_orthogonal_pair_gap():
    r = np.random.default_rng(0)
    g1 = r.standard_normal((3, 4))
    g2 = r.standard_normal((3, 4))
    g2 -= la.frobenius_inner(g2, g1) / la.frobenius_inner(g1, g1) * g1
    lhs, ident, f2, rhs = props.coherence_terms([g1, g2])
    exact = 2 * la.frobenius_inner(g1, g1) * la.frobenius_inner(g2, g2)
    assert abs((lhs - f2) - exact) <= 1e-9 * exact
    assert abs(rhs - exact) <= 1e-9 * exact  # mu = 0
    assert abs(lhs - ident) <= 1e-12 * ident


def test_coherence_collinear_stream():
    g = np.random.default_rng(1).standard_normal((2, 3))
    lhs, _, f2, rhs = props.coherence_terms([g, -2 * g, 0.5 * g])
    assert abs(rhs) <= 1e-12 * lhs
    assert lhs - f2 >= rhs - 1e-9 * lhs
    assert abs(lhs - f2) <= 1e-9 * lhs


def test_dynamical_exact_without_perturbation():
    r = np.random.default_rng(2)
    for _ in range(20):
        res, bound = props.dynamical_instance(r, 0.7, 0.0)
        assert res <= 1e-9 and bound == 0.0


def test_fisher_diag_unperturbed_is_diagonal():
    r = np.random.default_rng(3)
    ident, off, ok = props.fisher_diag_instance(r, perturbed=False)
    assert ident <= 1e-10 and off <= 1e-10 and ok


def test_props_records_and_failures(monkeypatch):
    rs = run(ExperimentConfig(experiment="props", seed=0))
    assert props.all_passed(rs)
    names = {r.method for r in rs if r.metric == "pass"}
    assert names == set(props.TOLERANCES)
    assert any(r.metric == "inequality_pass_rate" for r in rs)
    monkeypatch.setitem(props.TOLERANCES, "init", -1.0)
    failing = props.run_seed(ExperimentConfig(experiment="props"), 0)
    assert not props.all_passed(failing)
    assert [r.method for r in failing if r.metric == "pass" and r.value == 0.0] == ["init"]


# -------------------------------------------------------------------- train

@pytest.mark.parametrize("method", ["dykaf", "soap", "shampoo", "adamw"])
def test_train_reduces_loss(method):
    rs = run(ExperimentConfig(experiment="train", dataset=None, steps=40, method=method))
    loss = {r.x: r.value for r in rs if r.metric == "loss"}
    assert loss[40] < loss[0]


def test_train_rejects_unknown_method():
    with pytest.raises(ValueError):
        run(ExperimentConfig(experiment="train", dataset=None, steps=1, method="sgd"))
