"""Acceptance criteria 1-8. Each test records one PASS/FAIL line (see the terminal summary).

Criteria 4-7 share a single synthetic benchmark (3 seeds, configs/acceptance.yaml)
that trains for several minutes.
"""
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import fairstg.trainer as trainer
from fairstg.backbone import adaptive_adjacency
from fairstg.config import Config, load_config
from fairstg.enhancement import CollaborativeEnhancement, aggregate_compensatory, retrieve_all, similarity_matrix
from fairstg.evaluation import (
    accuracy_metrics,
    build_report,
    delta_ratio,
    fairness_metrics,
    subgroup_breakdown,
)
from fairstg.experiment import run_benchmark
from fairstg.objectives import cost_sensitive_weights, fairness_loss, per_sample_mae, reweighted_loss, weighted_bce

from conftest import toy_batch, toy_model
from criteria import record
from fdcheck import finite_difference_check

ROOT = Path(__file__).resolve().parents[1]
T64 = torch.float64


# ---------------------------------------------------------------- criterion 1
# straight-line references written without tensors

def ref_weights(e):
    s = math.fsum(e)
    return [1.0] * len(e) if s <= 0 else [1.0 + x / s for x in e]


def ref_reweighted(e):
    lam = ref_weights(e)
    return math.fsum(l * x for l, x in zip(lam, e)) / len(e)


def ref_variance(e):
    mean = math.fsum(e) / len(e)
    return math.fsum((x - mean) ** 2 for x in e) / len(e)


def ref_bce(z_hat, z, omega):
    total = 0.0
    for p, y in zip(z_hat, z):
        p = min(max(p, 1e-7), 1 - 1e-7)
        total += omega * y * math.log(p) + (1 - y) * math.log(1 - p)
    return -total / len(z)


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300) if b != 0 else abs(a)


def test_criterion_1_loss_oracles():
    start = time.perf_counter()
    rng = random.Random(0)
    worst = 0.0
    worst_sum = 0.0
    for trial in range(1000):
        m = rng.randint(1, 200)
        scale = 10 ** rng.uniform(-3, 3)
        e = [rng.random() * scale for _ in range(m)]
        if trial % 50 == 0:
            e = [0.0] * m
        z_hat = [rng.uniform(1e-9, 1 - 1e-9) for _ in range(m)]
        z = [float(rng.random() < 0.2) for _ in range(m)]
        te = torch.tensor(e, dtype=T64)
        lam = cost_sensitive_weights(te)
        for got, want in zip(lam.tolist(), ref_weights(e)):
            worst = max(worst, rel_err(got, want))
        if sum(e) > 0:
            # sum of lambda is M + 1 up to the rounding of M additions
            worst_sum = max(worst_sum, abs(math.fsum(lam.tolist()) - (m + 1)) / (m + 1))
        worst = max(worst, rel_err(reweighted_loss(te).item(), ref_reweighted(e)))
        worst = max(worst, rel_err(fairness_loss(te).item(), ref_variance(e)) if ref_variance(e) > 1e-12 * scale**2
                    else abs(fairness_loss(te).item()) / scale**2)
        worst = max(worst, rel_err(weighted_bce(torch.tensor(z_hat, dtype=T64), torch.tensor(z, dtype=T64), 4.0).item(),
                                   ref_bce(z_hat, z, 4.0)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and worst_sum <= 1e-15 * 200 and elapsed < 10
    record(1, "loss-oracle equivalence", ok,
           f"max rel err {worst:.2e} (tol 1e-9), sum(lambda) rel dev {worst_sum:.1e}, {elapsed:.1f}s (<10s)")
    assert ok


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_total_loss_gradients(monkeypatch):
    start = time.perf_counter()
    model = toy_model(n=4, w=6, h=3, d=8, channels=4, k_c=2)
    batch = toy_batch(n=4, w=6, h=3, n_windows=2)
    cfg = Config().train
    cfg.k_c = 2

    # lambda and the easy/challenging labels are per-step constants; hold lambda
    # at its value for the unperturbed parameters (labels are piecewise constant)
    with torch.no_grad():
        x = model.backbone(batch)
        e0 = per_sample_mae(model.head(x), batch.targets)
        x_com, info = model.enhancement(x, trainer.partition_easy_challenging(e0, cfg.K).bool())
        frozen = cost_sensitive_weights(per_sample_mae(model.head(x_com), batch.targets))
    monkeypatch.setattr(trainer, "cost_sensitive_weights", lambda errors: frozen)

    def loss():
        return trainer.compute_loss(model, batch, cfg, trainer.FAIRNESS)[0].total

    groups = {
        "backbone": [(n, p) for n, p in model.named_parameters() if n.startswith("backbone")],
        "recognizer": [(n, p) for n, p in model.named_parameters() if n.startswith("recognizer")],
        "gate": [(n, p) for n, p in model.named_parameters() if n.startswith("enhancement")],
        "head": [(n, p) for n, p in model.named_parameters() if n.startswith("head")],
    }
    results = {g: finite_difference_check(loss, named, n_entries=3) for g, named in groups.items()}
    elapsed = time.perf_counter() - start
    bad = {g: [r for r in res if not r[4]] for g, res in results.items()}
    nonzero = {g: sum(abs(r[2]) > 0 for r in res) for g, res in results.items()}
    ok = not any(bad.values()) and all(nonzero.values()) and elapsed < 60 and info.challenging.numel() > 0
    checked = sum(len(r) for r in results.values())
    record(2, "total-loss gradients vs finite differences", ok,
           f"{checked} entries over {', '.join(groups)}; mismatches {sum(map(len, bad.values()))}; {elapsed:.1f}s (<60s)")
    assert ok, bad


# ---------------------------------------------------------------- criterion 3

def brute_force_neighbors(x, easy, i, k):
    def cos(a, b):
        na, nb = math.sqrt(sum(v * v for v in a)), math.sqrt(sum(v * v for v in b))
        return 0.0 if na == 0 or nb == 0 else sum(p * q for p, q in zip(a, b)) / (na * nb)

    cands = sorted((-cos(x[i], x[j]), j) for j in range(len(x)) if easy[j] and j != i)
    return [j for _, j in cands[:k]]


def test_criterion_3_structural_invariants():
    start = time.perf_counter()
    gen = torch.Generator().manual_seed(0)
    failures = []
    for _ in range(100):
        e1 = torch.randn(10, 5, generator=gen, dtype=T64)
        e2 = torch.randn(10, 5, generator=gen, dtype=T64)
        a = adaptive_adjacency(e1, e2)
        off = ~torch.eye(10, dtype=torch.bool)
        if torch.count_nonzero((a * a.T)[off]) or (a < 0).any() or (a >= 1).any():
            failures.append("adjacency")
    enh = CollaborativeEnhancement(8, 4, k_c=5).double()
    for trial in range(60):
        m = int(torch.randint(2, 65, (1,), generator=gen))
        x = torch.randn(m, 8, generator=gen, dtype=T64)
        easy = torch.rand(m, generator=gen) < 0.3
        easy[int(torch.randint(0, m, (1,), generator=gen))] = True
        s = similarity_matrix(x, easy)
        rows, cols = torch.nonzero(s, as_tuple=True)
        if not (easy[cols].all() and (rows != cols).all() and (s.abs() <= 1 + 1e-12).all()):
            failures.append("similarity mask")
        chal = torch.nonzero(~easy).squeeze(1)
        if chal.numel() == 0:
            continue
        k = 1 + trial % 6
        got = retrieve_all(s, easy, chal, k)
        xs = x.tolist()
        for r, i in enumerate(chal.tolist()):
            if got[r].tolist() != brute_force_neighbors(xs, easy.tolist(), i, k):
                failures.append("retrieval")
        with torch.no_grad():
            out, info = enh(x, easy)
        u = aggregate_compensatory(x[info.neighbors])
        xc, oc = x[info.challenging], out[info.challenging]
        lo, hi = torch.minimum(xc, u) - 1e-12, torch.maximum(xc, u) + 1e-12
        if not (((oc >= lo) & (oc <= hi)).all() and torch.equal(out[easy], x[easy])):
            failures.append("convexity")
        if not ((info.alpha > 0) & (info.alpha < 0.5)).all():
            failures.append("gate range")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 30
    record(3, "structural invariants", ok,
           f"adjacency x100, mask/retrieval/mix-up on M<=64 batches; failures {sorted(set(failures)) or 'none'}; "
           f"{elapsed:.1f}s (<30s)")
    assert ok


# ---------------------------------------------------------------- criteria 4-7

@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    cfg = load_config(ROOT / "configs" / "acceptance.yaml", env={})
    start = time.perf_counter()
    _, summary = run_benchmark(cfg, seeds=(0, 1, 2), out_dir=tmp_path_factory.mktemp("benchmark"))
    summary["elapsed"] = time.perf_counter() - start
    return summary


def test_criterion_4_fairness_regression(benchmark):
    red, delta, elapsed = benchmark["median_mae_var_reduction"], benchmark["median_delta"], benchmark["elapsed"]
    ok = red >= 0.15 and delta <= 1.10 and elapsed < 900
    record(4, "synthetic fairness regression", ok,
           f"median MAE-var reduction {red:.1%} (>=15%), median delta {delta:.4f} (<=1.10), "
           f"runtime {elapsed / 60:.1f} min (<15)")
    assert ok


def test_criterion_5_recognizer_accuracy(benchmark):
    acc = benchmark["median_recognizer_accuracy"]
    ok = acc >= 0.65
    record(5, "recognizer held-out accuracy", ok,
           f"median {acc:.4f}, min {benchmark['min_recognizer_accuracy']:.4f} (>=0.65)")
    assert ok


def test_criterion_6_ablation_direction(benchmark):
    wins = benchmark["ablation_wins"]
    ok = wins >= 2
    record(6, "ablation directionality", ok, f"full MAE-var <= no_fe and no_fo in {wins}/3 seeds (>=2)")
    assert ok


def test_criterion_7_challenging_subgroup(benchmark):
    full, base = benchmark["median_challenging30_full"], benchmark["median_challenging30_baseline"]
    ok = full <= base
    record(7, "challenging-30% subgroup", ok, f"median MAE full {full:.4f} vs fairness-disabled {base:.4f}")
    assert ok


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_metric_exactness():
    truth = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 5.0], [4.0, 8.0]])
    pred = np.array([[2.0, 2.0], [2.0, 2.0], [1.0, 5.0], [4.0, 4.0]])
    # hand-computed: abs errors [[1,0],[0,2],[1,0],[0,4]]; the zero truth is masked for MAPE
    expected = {
        "mae": 1.0, "rmse": math.sqrt(22 / 8), "mape": 2 / 7, "mae_var": 0.375, "mape_var": 0.03125,
        "h1_mae": 0.5, "h1_mape": 1 / 3, "h1_rmse": math.sqrt(0.5), "h1_mae_var": 0.25, "h1_mape_var": 2 / 9,
        "easy30": 0.5, "challenging30": 2.0, "delta": 0.8,
    }
    got = {}
    got["mae"], got["mape"], got["rmse"] = accuracy_metrics(pred, truth)
    got["mae_var"], got["mape_var"] = fairness_metrics(pred, truth)
    got["h1_mae"], got["h1_mape"], got["h1_rmse"] = accuracy_metrics(pred, truth, horizon=1)
    got["h1_mae_var"], got["h1_mape_var"] = fairness_metrics(pred, truth, horizon=1)
    sub = subgroup_breakdown(per_sample_mae(torch.tensor(pred), torch.tensor(truth)).numpy())
    got["easy30"], got["challenging30"] = sub["easy30"]["mae"], sub["challenging30"]["mae"]
    rep = build_report(pred, truth, np.array([0, 1, 0, 1]), 2, horizons=(1, 2), base_mae=1.25)
    got["delta"] = rep["delta"]
    worst = max(abs(got[k] - v) for k, v in expected.items())

    gen = np.random.default_rng(0)
    worst_eq = 0.0
    for _ in range(200):
        m, h = gen.integers(1, 50), gen.integers(1, 13)
        p, t = gen.normal(size=(m, h)) * 10, gen.normal(size=(m, h)) * 10
        ours = fairness_metrics(p, t)[0]
        theirs = fairness_loss(per_sample_mae(torch.tensor(p), torch.tensor(t))).item()
        worst_eq = max(worst_eq, abs(ours - theirs) / max(abs(theirs), 1e-12))
    ok = worst <= 1e-9 and worst_eq <= 1e-9 and rep["overall"]["mae"] == got["mae"] \
        and abs(delta_ratio(1.9628, 1.9899) - 0.98638) < 1e-5
    record(8, "metric-pipeline exactness", ok,
           f"max abs dev from hand values {worst:.1e}, fairness_metrics vs fairness_loss rel dev {worst_eq:.1e}")
    assert ok
