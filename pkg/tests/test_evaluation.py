import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from fairstg.evaluation import (
    MetricAccumulator,
    accuracy_metrics,
    build_report,
    compare_reports,
    delta_ratio,
    emit_error_map,
    fairness_metrics,
    per_node_mape,
    per_sample_errors,
    subgroup_breakdown,
)
from fairstg.objectives import fairness_loss, per_sample_mae

# four samples, two steps; one truth value is zero and gets masked out of MAPE
TRUTH = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 5.0], [4.0, 8.0]])
PRED = np.array([[2.0, 2.0], [2.0, 2.0], [1.0, 5.0], [4.0, 4.0]])
NODES = np.array([0, 1, 0, 1])


def approx(x):
    return pytest.approx(x, abs=1e-9, rel=1e-9)


def test_overall_metrics_hand():
    mae, mape, rmse = accuracy_metrics(PRED, TRUTH)
    assert mae == approx(1.0)
    assert rmse == approx(math.sqrt(22 / 8))
    assert mape == approx(2.0 / 7)


def test_horizon_is_kth_step():
    mae, mape, rmse = accuracy_metrics(PRED, TRUTH, horizon=1)
    assert (mae, mape, rmse) == (approx(0.5), approx(1 / 3), approx(math.sqrt(0.5)))
    mae, mape, rmse = accuracy_metrics(PRED, TRUTH, horizon=2)
    assert (mae, mape, rmse) == (approx(1.5), approx(0.25), approx(math.sqrt(5)))
    with pytest.raises(ValueError):
        accuracy_metrics(PRED, TRUTH, horizon=3)


def test_fairness_metrics_hand():
    mae_var, mape_var = fairness_metrics(PRED, TRUTH)
    assert mae_var == approx(0.375)
    assert mape_var == approx(0.03125)
    mae_var, mape_var = fairness_metrics(PRED, TRUTH, horizon=1)
    assert mae_var == approx(0.25)
    # the masked sample drops out of the MAPE variance
    assert mape_var == approx(2 / 9)


def test_per_sample_errors_hand():
    mae, mape = per_sample_errors(PRED, TRUTH)
    np.testing.assert_allclose(mae, [0.5, 1.0, 0.5, 2.0], atol=1e-12)
    np.testing.assert_allclose(mape, [0.5, 0.25, 0.0, 0.25], atol=1e-12)
    _, mape1 = per_sample_errors(PRED, TRUTH, horizon=1)
    assert np.isnan(mape1[2])


def test_mape_all_masked_is_nan():
    _, mape, _ = accuracy_metrics(np.ones((2, 2)), np.zeros((2, 2)))
    assert math.isnan(mape)


def test_perfect_prediction():
    mae, mape, rmse = accuracy_metrics(TRUTH, TRUTH)
    assert mae == mape == rmse == 0
    assert fairness_metrics(TRUTH, TRUTH) == (0.0, 0.0)


def test_subgroup_hand():
    sub = subgroup_breakdown([0.5, 1.0, 0.5, 2.0])
    assert sub["easy30"] == {"mae": 0.5, "mae_var": 0.0, "count": 1}
    assert sub["challenging30"] == {"mae": 2.0, "mae_var": 0.0, "count": 1}
    sub = subgroup_breakdown(np.arange(10.0))
    assert sub["easy30"]["mae"] == approx(1.0) and sub["easy30"]["mae_var"] == approx(2 / 3)
    assert sub["challenging30"]["mae"] == approx(8.0) and sub["challenging30"]["count"] == 3


def test_delta_ratio():
    assert delta_ratio(0.9, 1.0) == approx(0.9)
    assert delta_ratio(1.9628, 1.9899) == pytest.approx(0.98638, abs=1e-5)
    assert math.isnan(delta_ratio(1.0, 0.0))


def test_per_node_mape_hand():
    # node 0: ape 1, 0 and (masked), 0 -> 1/3; node 1: 0, 0.5, 0, 0.5 -> 0.25
    np.testing.assert_allclose(per_node_mape(PRED, TRUTH, NODES, 3), [1 / 3, 0.25, np.nan], atol=1e-12)


def test_report_contents():
    pred = np.tile(PRED, (1, 6))
    truth = np.tile(TRUTH, (1, 6))
    z = np.array([1.0, 0, 0, 0])
    z_hat = np.array([0.9, 0.2, 0.7, 0.1])
    rep = build_report(pred, truth, NODES, 2, ["a", "b"], z, z_hat, base_mae=2.0)
    assert set(rep["horizons"]) == {"3", "6", "12"}
    assert rep["overall"]["mae"] == approx(1.0)
    assert rep["delta"] == approx(0.5)
    assert rep["recognizer_accuracy"] == approx(0.75)
    assert rep["node_ids"] == ["a", "b"]
    assert rep["challenging30"]["mae"] == approx(2.0)


def test_compare_same_report_is_neutral():
    rep = build_report(PRED, TRUTH, NODES, 2, horizons=(1, 2))
    cmp = compare_reports(rep, rep)
    assert cmp["delta"] == 1.0
    assert cmp["overall"]["mae_improvement"] == 0 and cmp["overall"]["mae_var_reduction"] == 0
    assert all(v == 0 for v in cmp["per_node_mape_improvement"])


def test_accumulator_merge_matches_single_pass():
    gen = np.random.default_rng(0)
    parts = [(gen.normal(size=(5, 3)), gen.normal(size=(5, 3)), gen.integers(0, 3, 5)) for _ in range(3)]
    accs = [MetricAccumulator().update(*p) for p in parts]
    left = accs[0].merge(accs[1]).merge(accs[2])
    right = accs[0].merge(accs[1].merge(accs[2]))
    whole = MetricAccumulator()
    for p in parts:
        whole.update(*p)
    for acc in (left, right):
        for k, v in whole.arrays().items():
            np.testing.assert_array_equal(acc.arrays()[k], v)


def test_error_map_csv(tmp_path):
    path = emit_error_map(tmp_path / "m.csv", ["a", "b"], [0.1, 0.3], base_mape=[0.2, 0.3], coords=[(1, 2), (3, 4)])
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["node_id"] == "a" and float(rows[0]["mape_improvement"]) == approx(0.1)
    assert float(rows[1]["mape_improvement"]) == 0 and rows[1]["lat"] == "4.000000"


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_fairness_metrics_equal_fairness_loss(m, h, seed):
    gen = np.random.default_rng(seed)
    pred, truth = gen.normal(size=(m, h)) * 5, gen.normal(size=(m, h)) * 5
    mae_var, _ = fairness_metrics(pred, truth)
    loss = fairness_loss(per_sample_mae(torch.tensor(pred), torch.tensor(truth))).item()
    assert mae_var == pytest.approx(loss, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_metric_invariants(m, seed):
    gen = np.random.default_rng(seed)
    pred, truth = gen.normal(size=(m, 4)), gen.normal(size=(m, 4))
    mae, _, rmse = accuracy_metrics(pred, truth)
    assert rmse >= mae - 1e-12
    mae_var, _ = fairness_metrics(pred, truth)
    assert mae_var >= 0
    perm = gen.permutation(m)
    assert fairness_metrics(pred[perm], truth[perm])[0] == pytest.approx(mae_var, rel=1e-12, abs=1e-15)
