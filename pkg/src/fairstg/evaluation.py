"""Accuracy and fairness metrics, subgroup breakdowns, delta ratio, reports."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from .recognizer import recognizer_accuracy

log = logging.getLogger(__name__)

HORIZONS = (3, 6, 12)


def _steps(a, horizon):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if horizon is None:
        return a
    if not 1 <= horizon <= a.shape[1]:
        raise ValueError(f"horizon {horizon} outside 1..{a.shape[1]}")
    return a[:, horizon - 1 : horizon]


def _ape(pred, truth, eps):
    mask = np.abs(truth) >= eps
    ape = np.where(mask, np.abs(pred - truth) / np.where(mask, np.abs(truth), 1.0), 0.0)
    return ape, mask


def per_sample_errors(pred, truth, horizon=None, eps=1e-3):
    """Per-sample MAE and masked MAPE at the k-th step (or over all steps when horizon is None).

    Samples whose truth is fully masked get MAPE nan.
    """
    p, t = _steps(pred, horizon), _steps(truth, horizon)
    mae = np.abs(p - t).mean(axis=1)
    ape, mask = _ape(p, t, eps)
    counts = mask.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mape = np.where(counts > 0, ape.sum(axis=1) / np.maximum(counts, 1), np.nan)
    return mae, mape


def accuracy_metrics(pred, truth, horizon=None, eps=1e-3):
    """(mae, mape, rmse); mape is a fraction and nan when every truth value is masked."""
    p, t = _steps(pred, horizon), _steps(truth, horizon)
    err = p - t
    ape, mask = _ape(p, t, eps)
    if mask.any():
        mape = float(ape[mask].mean())
    else:
        log.warning("all truth values below mape epsilon %g; MAPE undefined", eps)
        mape = float("nan")
    return float(np.abs(err).mean()), mape, float(np.sqrt(np.square(err).mean()))


def population_variance(x):
    x = np.asarray(x, dtype=np.float64)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return float("nan")
    return float(np.mean((x - x.mean()) ** 2))


def fairness_metrics(pred, truth, horizon=None, eps=1e-3):
    """(mae_var, mape_var): population variance of per-sample errors."""
    mae, mape = per_sample_errors(pred, truth, horizon, eps)
    return population_variance(mae), population_variance(mape)


def subgroup_breakdown(errors, fraction=0.3):
    """Stats of the smallest and largest ``fraction`` of per-sample errors."""
    e = np.sort(np.asarray(errors, dtype=np.float64))
    n = max(1, math.floor(fraction * e.size + 1e-9))
    easy, hard = e[:n], e[e.size - n :]
    return {
        "easy30": {"mae": float(easy.mean()), "mae_var": population_variance(easy), "count": n},
        "challenging30": {"mae": float(hard.mean()), "mae_var": population_variance(hard), "count": n},
    }


def delta_ratio(mae_fair, mae_base):
    if not mae_base > 0:
        log.warning("baseline MAE is %s; delta undefined", mae_base)
        return float("nan")
    return float(mae_fair) / float(mae_base)


def per_node_mape(pred, truth, node_index, n_nodes, eps=1e-3):
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    ape, mask = _ape(p, t, eps)
    node_index = np.asarray(node_index)
    sums = np.bincount(node_index, weights=ape.sum(axis=1), minlength=n_nodes)
    counts = np.bincount(node_index, weights=mask.sum(axis=1), minlength=n_nodes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def emit_error_map(path, node_ids, mape, base_mape=None, coords=None):
    """Write per-node MAPE (and improvement base - fair when a baseline is given) as CSV."""
    path = Path(path)
    header = ["node_id"]
    if coords is not None:
        header += ["lon", "lat"]
    header.append("mape")
    if base_mape is not None:
        header.append("mape_improvement")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for i, node in enumerate(node_ids):
            row = [node]
            if coords is not None:
                row += [f"{coords[i][0]:.6f}", f"{coords[i][1]:.6f}"]
            row.append(f"{mape[i]:.10g}")
            if base_mape is not None:
                row.append(f"{base_mape[i] - mape[i]:.10g}")
            out.writerow(row)
    return path


class MetricAccumulator:
    """Collects per-sample predictions over batches. ``merge`` is associative."""

    def __init__(self):
        self.parts = {"pred": [], "truth": [], "node_index": [], "z": [], "z_hat": []}

    def update(self, pred, truth, node_index, z=None, z_hat=None):
        self.parts["pred"].append(np.asarray(pred, dtype=np.float64))
        self.parts["truth"].append(np.asarray(truth, dtype=np.float64))
        self.parts["node_index"].append(np.asarray(node_index))
        if z is not None and z_hat is not None:
            self.parts["z"].append(np.asarray(z, dtype=np.float64))
            self.parts["z_hat"].append(np.asarray(z_hat, dtype=np.float64))
        return self

    def merge(self, other):
        out = MetricAccumulator()
        for k in out.parts:
            out.parts[k] = self.parts[k] + other.parts[k]
        return out

    def arrays(self):
        return {k: np.concatenate(v) if v else np.empty(0) for k, v in self.parts.items()}

    def report(self, n_nodes, node_ids=None, horizons=HORIZONS, eps=1e-3, base_mae=None, threshold=0.5):
        a = self.arrays()
        return build_report(a["pred"], a["truth"], a["node_index"], n_nodes, node_ids, a["z"], a["z_hat"],
                            horizons, eps, base_mae, threshold)


def build_report(pred, truth, node_index, n_nodes, node_ids=None, z=None, z_hat=None, horizons=HORIZONS,
                 eps=1e-3, base_mae=None, threshold=0.5):
    h = np.asarray(pred).shape[1]
    report = {"horizons": {}}
    for k in [k for k in horizons if k <= h]:
        mae, mape, rmse = accuracy_metrics(pred, truth, k, eps)
        mae_var, mape_var = fairness_metrics(pred, truth, k, eps)
        report["horizons"][str(k)] = {"mae": mae, "mape": mape, "rmse": rmse, "mae_var": mae_var, "mape_var": mape_var}
    mae, mape, rmse = accuracy_metrics(pred, truth, None, eps)
    mae_var, mape_var = fairness_metrics(pred, truth, None, eps)
    report["overall"] = {"mae": mae, "mape": mape, "rmse": rmse, "mae_var": mae_var, "mape_var": mape_var}
    sample_mae, _ = per_sample_errors(pred, truth, None, eps)
    report.update(subgroup_breakdown(sample_mae))
    report["delta"] = 1.0 if base_mae is None else delta_ratio(mae, base_mae)
    if z is not None and len(z):
        report["recognizer_accuracy"] = recognizer_accuracy(z_hat, z, threshold)
    else:
        report["recognizer_accuracy"] = float("nan")
    report["per_node_mape"] = per_node_mape(pred, truth, node_index, n_nodes, eps).tolist()
    report["node_ids"] = list(node_ids) if node_ids is not None else [str(i) for i in range(n_nodes)]
    return report


def compare_reports(fair: dict, base: dict) -> dict:
    """Delta and improvement summary of ``fair`` relative to ``base``."""
    out = {"delta": delta_ratio(fair["overall"]["mae"], base["overall"]["mae"]), "horizons": {}}
    sections = {"overall": (fair["overall"], base["overall"])}
    for k, v in fair["horizons"].items():
        if k in base["horizons"]:
            sections[k] = (v, base["horizons"][k])
    for name, (f, b) in sections.items():
        entry = {"delta": delta_ratio(f["mae"], b["mae"])}
        for m in ("mae", "mape", "rmse", "mae_var", "mape_var"):
            entry[f"{m}_improvement"] = b[m] - f[m]
        bv = b["mae_var"]
        entry["mae_var_reduction"] = (bv - f["mae_var"]) / bv if bv > 0 else float("nan")
        if name == "overall":
            out["overall"] = entry
        else:
            out["horizons"][name] = entry
    out["challenging30_mae_improvement"] = base["challenging30"]["mae"] - fair["challenging30"]["mae"]
    out["easy30_mae_improvement"] = base["easy30"]["mae"] - fair["easy30"]["mae"]
    out["per_node_mape_improvement"] = [b - f for f, b in zip(fair["per_node_mape"], base["per_node_mape"])]
    return out
