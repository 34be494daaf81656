import json

import numpy as np
import pytest

from cardset.data import DataError, GaussianSpec, generate_gaussian
from cardset.evaluation import (
    ConfigError, CurvePoint, ExperimentConfig, Splits, VerifyConfig, content_hash, conformal_curve,
    dominance_failures, eval_selector, fit_seed, interpolate_accuracy, lambda_sweep,
    max_accuracy_difference, read_curve_csv, run_experiment, tau_grid, topk_curve,
    verify_bounds_command, write_bound_csv, write_curve_csv,
)
from cardset.models import TrainConfig, train_base_n
from cardset.sets import ThresholdFamily, TopKFamily

SMALL = {"source": "gaussian", "dim": 5, "sigma": 1.0, "m_train": 600, "m_calibration": 200, "m_test": 400}


def small_config(**kw):
    base = dict(dataset=SMALL, lambdas=(1.0, 0.1, 0.01), train={"epochs": 3},
                base_train={"epochs": 3}, seeds=(0,))
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# -- config --------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    {"lambdas": [0.1, 0.1]},
    {"lambdas": [0.1, 1.0]},
    {"lambdas": [1.0, -0.1]},
    {"K": [2, 1]},
    {"cost_kind": "quadratic"},
    {"family": "conformal"},
    {"surrogate": "nope"},
    {"lambda": [1.0]},
    {"train": {"epoch": 3}},
    {"dataset": {"source": "gaussian", "m_trian": 5}},
    {"dataset": {"source": "parquet"}},
    {"alphas": [0.0]},
    {"seeds": []},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_defaults_and_round_trip(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.K == (1, 2, 4, 8)
    assert len(cfg.lambdas) == 20 and cfg.lambdas[0] == 1.0 and cfg.lambdas[-1] == pytest.approx(0.01)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(path) == cfg


def test_content_hash_tracks_config_and_files(tmp_path):
    a, b = small_config(), small_config(seeds=(1,))
    assert content_hash(a) == content_hash(small_config())
    assert content_hash(a) != content_hash(b)
    f = tmp_path / "x.csv"
    f.write_text("1")
    h1 = content_hash(a, [f])
    f.write_text("2")
    assert content_hash(a, [f]) != h1


# -- point evaluation ------------------------------------------------------------

def test_curve_point_invariants():
    with pytest.raises(Exception):
        CurvePoint("topk", 1, 0.5, 0.9, 10)
    with pytest.raises(Exception):
        CurvePoint("topk", 1, 1.0, 1.2, 10)
    with pytest.raises(Exception):
        CurvePoint("topk", 1, 4.0, 1.0, 10, n_labels=3)


def test_eval_selector_fixture():
    scores = np.array([[3.0, 2.0, 1.0, 0.0],
                       [0.0, 1.0, 2.0, 3.0],
                       [1.0, 3.0, 0.0, 2.0],
                       [2.0, 0.0, 3.0, 1.0]])
    fam = TopKFamily(scores, (1, 2, 4))
    labels = np.array([1, 3, 0, 1])
    # sets: {0} miss, {3,2} hit, {0..3} hit, {2} miss
    p = eval_selector([0, 1, 2, 0], fam, labels)
    assert p.accuracy == 0.5 and p.avg_cardinality == pytest.approx(2.0)
    full = eval_selector([2, 2, 2, 2], fam, labels)
    assert full.accuracy == 1.0 and full.avg_cardinality == 4.0
    top1 = eval_selector([0] * 4, fam, labels)
    assert top1.accuracy == np.mean(np.argmax(scores, axis=1) == labels)
    with pytest.raises(DataError):
        eval_selector(np.array([], dtype=int), fam, np.array([], dtype=int))


def test_eval_selector_threshold_family():
    probs = np.array([[0.7, 0.2, 0.1], [0.4, 0.35, 0.25]])
    fam = ThresholdFamily(probs, (0.5, 0.3, 0.05))
    # tau 0.3 gives {0} and {0, 1}; tau 0.5 gives {0} and the argmax fallback {0}
    p = eval_selector([1, 1], fam, np.array([1, 1]))
    assert p.avg_cardinality == 1.5 and p.accuracy == 0.5
    p = eval_selector([0, 0], fam, np.array([0, 0]))
    assert p.avg_cardinality == 1.0 and p.accuracy == 1.0


def test_topk_curve_properties():
    d = generate_gaussian(GaussianSpec(dim=5, sigma=1.5), 500)
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(500, 10))
    pts = topk_curve(scores, d, (1, 2, 4, 8, 10))
    accs = [p.accuracy for p in pts]
    assert accs == sorted(accs) and accs[-1] == 1.0
    (only,) = topk_curve(scores, d, (1,))
    assert only.accuracy == np.mean(np.argmax(scores, axis=1) == d.labels)


def test_tau_grid():
    g = tau_grid(np.array([0.01, 0.5, 0.9]))
    assert len(g) == 15 and all(a > b for a, b in zip(g, g[1:]))
    assert g[0] == pytest.approx(0.9) and g[-1] == pytest.approx(0.01)


def test_conformal_curve_monotone():
    spec = GaussianSpec(dim=5, sigma=1.0)
    parts = [generate_gaussian(spec, m, s) for s, m in enumerate((800, 400, 1000))]
    splits = Splits(*parts, spec=spec)
    base = train_base_n(parts[0].features, parts[0].labels, 10, TrainConfig(epochs=5))
    pts = conformal_curve(base, splits, (0.01, 0.05, 0.1, 0.2, 0.5))
    cards = [p.avg_cardinality for p in pts]
    covs = [p.coverage for p in pts]
    assert cards == sorted(cards, reverse=True) and covs == sorted(covs, reverse=True)
    for a, c in zip((0.05, 0.1, 0.2), covs[1:4]):
        assert c >= 1 - a - 0.05


# -- sweeps -------------------------------------------------------------------

def test_lambda_sweep_order_and_limits():
    cfg = small_config(lambdas=(10.0, 1.0, 1e-4), train={"epochs": 8})
    res = lambda_sweep(cfg, 0)
    assert [r.lam for r in res] == [10.0, 1.0, 1e-4]
    assert res[0].point.avg_cardinality == 1.0
    assert res[-1].point.avg_cardinality > 6.0
    assert all(r.bayes_loss is not None for r in res)


def test_sweep_workers_do_not_change_results():
    a = run_experiment(small_config())
    b = run_experiment(small_config(workers=3))
    assert [p.as_row() for p in a.points] == [p.as_row() for p in b.points]


def test_curve_csv_round_trip(tmp_path):
    res = run_experiment(small_config(), baselines=("topk", "conformal"))
    write_curve_csv(res.points, tmp_path / "c.csv")
    back = read_curve_csv(tmp_path / "c.csv")
    assert [p.as_row() for p in back] == [p.as_row() for p in res.points]
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "method,param,avg_cardinality,accuracy,coverage,n_test,seed"


def test_threshold_family_experiment():
    art = fit_seed(small_config(family="threshold"), 0)
    assert isinstance(art.test_family, ThresholdFamily)


# -- curve helpers ---------------------------------------------------------------

def test_dominance_helper():
    pts = [CurvePoint("topk", 1, 1, 0.6, 10), CurvePoint("topk", 2, 2, 0.8, 10),
           CurvePoint("cardinality_aware", 1.0, 1.0, 0.6, 10),
           CurvePoint("cardinality_aware", 0.1, 1.9, 0.797, 10)]
    assert dominance_failures(pts) == []
    pts[-1] = CurvePoint("cardinality_aware", 0.1, 2.1, 0.9, 10)
    assert dominance_failures(pts) == [(2.0, 0.8, 0.6)]


def test_interpolation_helpers():
    a = [(1, 1.0, 0.5), (2, 3.0, 0.9)]
    b = [(1, 1.0, 0.5), (2, 3.0, 0.7)]
    assert interpolate_accuracy(a, 2.0) == pytest.approx(0.7)
    assert interpolate_accuracy(a, 4.0) is None
    assert max_accuracy_difference(a, b) == pytest.approx(0.2)


# -- bound sweeps ------------------------------------------------------------------

def test_verify_command(tmp_path):
    with pytest.raises(ConfigError):
        verify_bounds_command(VerifyConfig(n_trials=0))
    with pytest.raises(ConfigError):
        VerifyConfig.from_dict({"trials": 3})
    reps = verify_bounds_command(VerifyConfig(n_trials=5, kinds=("logistic",)))
    write_bound_csv(reps, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "trial_id,kind,k,lhs,rhs,margin,inner_tolerance" and len(lines) == 6
