"""Synthetic fairness benchmark: fairness-disabled baseline vs FairSTG and its ablations.

For each seed the baseline trains under the warm-up objective for all epochs.
Its state at the end of warm-up is the shared starting point of every
fairness-stage variant, which is exactly what a fresh run with the same seed
would reach, since warm-up does not depend on the variant.
"""
from __future__ import annotations

import copy
import json
import logging
import time
from pathlib import Path

import numpy as np

from .config import Config
from .data import AdjacencySpec, PreparedData, fit_normalization, make_windows, split_dataset
from .evaluation import compare_reports
from .synth import generate_synthetic
from .trainer import predict, run_training

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "full", "no_fe", "no_fo")


def synthetic_data(cfg: Config, data_seed=0) -> PreparedData:
    raw, group = generate_synthetic(cfg.synth, data_seed)
    train, val, test = split_dataset(make_windows(raw, cfg.data.w, cfg.data.h), cfg.data.ratios)
    return PreparedData(raw, train, val, test, fit_normalization(train), AdjacencySpec.adaptive(cfg.model.d_emb),
                        extras={"group": group})


def evaluate(model, data: PreparedData, cfg: Config, base_mae=None):
    acc = predict(model, data.test, data.norm, max(cfg.train.batch_size, 64), cfg.train.K, cfg.train.threshold)
    return acc.report(data.raw.n_nodes, data.raw.node_ids, eps=cfg.data.mape_epsilon, base_mae=base_mae)


def run_seed(cfg: Config, data: PreparedData, seed, variants=VARIANTS, echo=None):
    base_cfg = copy.deepcopy(cfg)
    base_cfg.seed = seed
    base_cfg.train.fairness = False
    t0 = time.time()
    base = run_training(base_cfg, data, echo=echo)
    reports = {"baseline": evaluate(base.model, data, base_cfg)}
    timings = {"baseline": time.time() - t0}
    base_mae = reports["baseline"]["overall"]["mae"]
    for variant in variants:
        if variant == "baseline":
            continue
        t0 = time.time()
        vcfg = copy.deepcopy(cfg)
        vcfg.seed = seed
        vcfg.train.fairness = True
        vcfg.train.ablation = variant
        res = run_training(vcfg, data, resume=base.warmup_state, echo=echo)
        reports[variant] = evaluate(res.model, data, vcfg, base_mae)
        timings[variant] = time.time() - t0
    return reports, timings


def summarize(results: dict) -> dict:
    """Criterion-level statistics over seeds from ``{seed: {variant: report}}``."""
    seeds = sorted(results)
    out = {"per_seed": {}}
    var_red, deltas, chal_b, chal_f, acc = [], [], [], [], []
    ablation_wins = 0
    for s in seeds:
        r = results[s]
        cmp = compare_reports(r["full"], r["baseline"])
        var_red.append(cmp["overall"]["mae_var_reduction"])
        deltas.append(cmp["delta"])
        chal_b.append(r["baseline"]["challenging30"]["mae"])
        chal_f.append(r["full"]["challenging30"]["mae"])
        acc.append(r["full"]["recognizer_accuracy"])
        wins = all(r["full"]["overall"]["mae_var"] <= r[v]["overall"]["mae_var"] for v in ("no_fe", "no_fo") if v in r)
        ablation_wins += int(wins)
        out["per_seed"][s] = {
            v: {k: r[v]["overall"][k] for k in ("mae", "mae_var")} | {"challenging30_mae": r[v]["challenging30"]["mae"],
                                                                     "recognizer_accuracy": r[v]["recognizer_accuracy"]}
            for v in r
        }
    out.update(
        median_mae_var_reduction=float(np.median(var_red)),
        median_delta=float(np.median(deltas)),
        max_delta=float(np.max(deltas)),
        median_challenging30_baseline=float(np.median(chal_b)),
        median_challenging30_full=float(np.median(chal_f)),
        min_recognizer_accuracy=float(np.min(acc)),
        median_recognizer_accuracy=float(np.median(acc)),
        ablation_wins=ablation_wins,
        n_seeds=len(seeds),
    )
    return out


def run_benchmark(cfg: Config, seeds=(0, 1, 2), data_seed=0, out_dir=None, echo=None):
    data = synthetic_data(cfg, data_seed)
    results, timings = {}, {}
    for s in seeds:
        results[s], timings[s] = run_seed(cfg, data, s, echo=echo)
        log.info("seed %s done: %s", s, timings[s])
    summary = summarize(results)
    summary["timings"] = timings
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "benchmark_summary.json").write_text(json.dumps(summary, indent=2, default=float))
    return results, summary


def main(argv=None):
    import argparse

    from .config import load_config

    parser = argparse.ArgumentParser(description="Synthetic fairness benchmark (baseline, full, no_fe, no_fo)")
    parser.add_argument("--config", help="YAML config, e.g. configs/acceptance.yaml")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--out", default="runs/benchmark")
    parser.add_argument("-v", "--verbose", action="store_true", help="echo per-epoch progress")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    seeds = [int(s) for s in args.seeds.split(",")]
    _, summary = run_benchmark(cfg, seeds, out_dir=args.out, echo=print if args.verbose else None)
    print(json.dumps({k: v for k, v in summary.items() if k != "per_seed"}, indent=2, default=float))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
