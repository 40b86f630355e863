"""Command-line entry point: prepare, train, evaluate, compare, synth."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import Config, dump_config, from_dict, load_config
from .data import prepare
from .errors import ConfigError, DataError, FairSTGError
from .evaluation import compare_reports, emit_error_map
from .synth import generate_synthetic, write_wide_csv
from .trainer import load_model, predict, run_training

log = logging.getLogger("fairstg")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float, allow_nan=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"report not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"report {path} is not valid JSON: {exc}") from exc


def cmd_prepare(cfg: Config, out: Path, args):
    data = prepare(cfg)
    files = {
        "values.npy": data.raw.values.astype(np.float64),
        "timestamps.npy": data.raw.timestamps.astype("datetime64[ns]").astype(np.int64),
        "train_starts.npy": data.train.starts,
        "val_starts.npy": data.val.starts,
        "test_starts.npy": data.test.starts,
    }
    if data.adjacency.kind == "fixed":
        files["adjacency.npy"] = np.asarray(data.adjacency.fixed_weights, dtype=np.float64)
    for name, arr in files.items():
        np.save(out / name, np.ascontiguousarray(arr), allow_pickle=False)
    _write_json(out / "normalization.json", {"mean": data.norm.mean, "std": data.norm.std})
    _write_json(out / "node_ids.json", list(data.raw.node_ids))
    names = sorted(files) + ["node_ids.json", "normalization.json"]
    manifest = {"files": {n: _sha256(out / n) for n in names}, "n_nodes": data.raw.n_nodes,
                "n_steps": data.raw.n_steps, "splits": [len(data.train), len(data.val), len(data.test)]}
    _write_json(out / "manifest.json", manifest)
    print(f"prepared {data.raw.n_nodes} nodes x {data.raw.n_steps} steps -> {out}")
    return 0


def cmd_train(cfg: Config, out: Path, args):
    data = prepare(cfg)
    result = run_training(cfg, data, out_dir=out)
    print(f"best val MAE {result.best_val_mae:.6f}; checkpoint {result.checkpoint}")
    return 0


def _compensatory_dumper(rows, node_ids):
    def on_batch(b, batch, out):
        info = out.info
        if info is None or info.challenging.numel() == 0:
            return
        ni, ws = batch.node_index.tolist(), batch.window_start.tolist()
        for r, i in enumerate(info.challenging.tolist()):
            nbrs = info.neighbors[r].tolist()
            rows.append({
                "batch": b,
                "node_id": node_ids[ni[i]],
                "window_start": ws[i],
                "alpha": float(info.alpha[r]),
                "neighbors": ";".join(f"{node_ids[ni[j]]}@{ws[j]}" for j in nbrs),
            })
    return on_batch


def cmd_evaluate(cfg: Config | None, out: Path, args):
    if not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint")
    model, header = load_model(args.checkpoint)
    if cfg is None:
        cfg = from_dict(header["config"]).validate()
        args.resolved = cfg
    data = prepare(cfg)
    if data.raw.n_nodes != header["N"]:
        raise DataError(f"checkpoint expects {header['N']} nodes, data has {data.raw.n_nodes}")
    rows = []
    on_batch = _compensatory_dumper(rows, data.raw.node_ids) if args.dump_compensatory else None
    acc = predict(model, data.test, data.norm, max(cfg.train.batch_size, 64), cfg.train.K, cfg.train.threshold,
                  on_batch=on_batch)
    report = acc.report(data.raw.n_nodes, data.raw.node_ids, eps=cfg.data.mape_epsilon)
    _write_json(out / "report.json", report)
    if args.dump_compensatory:
        with open(out / "compensatory.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["batch", "node_id", "window_start", "alpha", "neighbors"])
            writer.writeheader()
            writer.writerows(rows)
    if args.emit_error_map:
        emit_error_map(out / "error_map.csv", report["node_ids"], report["per_node_mape"])
    o = report["overall"]
    print(f"test MAE {o['mae']:.6f} RMSE {o['rmse']:.6f} MAE-var {o['mae_var']:.6f} "
          f"recognizer acc {report['recognizer_accuracy']:.4f}")
    return 0


def cmd_compare(cfg, out: Path, args):
    if len(args.reports) != 2:
        raise ConfigError("compare takes two reports: FAIR BASELINE")
    fair, base = (_read_json(p) for p in args.reports)
    summary = compare_reports(fair, base)
    _write_json(out / "comparison.json", summary)
    if args.emit_error_map:
        emit_error_map(out / "error_map.csv", fair["node_ids"], fair["per_node_mape"], base["per_node_mape"])
    o = summary["overall"]
    print(f"delta {summary['delta']:.6f} MAE-var reduction {o['mae_var_reduction']:.4%} "
          f"challenging-30% MAE improvement {summary['challenging30_mae_improvement']:.6f}")
    return 0


def cmd_synth(cfg: Config, out: Path, args):
    raw, group = generate_synthetic(cfg.synth, cfg.seed)
    write_wide_csv(raw, out / "synthetic.csv")
    Path(out / "groups.csv").write_text(
        "node_id,group\n" + "".join(f"{n},{'AB'[g]}\n" for n, g in zip(raw.node_ids, group)))
    print(f"wrote {raw.n_nodes} nodes x {raw.n_steps} steps -> {out / 'synthetic.csv'}")
    return 0


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate, "compare": cmd_compare,
            "synth": cmd_synth}


def build_parser():
    parser = argparse.ArgumentParser(prog="fairstg", description="Fairness-aware spatiotemporal forecasting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        if name == "train":
            p.add_argument("--ablation", choices=["full", "no_fe", "no_fo"])
        if name == "evaluate":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--dump-compensatory", action="store_true",
                           help="write retrieved neighbours and gate values per challenging sample")
        if name in ("evaluate", "compare"):
            p.add_argument("--emit-error-map", action="store_true", help="write per-node MAPE as CSV")
        if name == "compare":
            p.add_argument("reports", nargs="+", metavar="REPORT")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if getattr(args, "ablation", None):
            overrides.append(f"train.ablation={args.ablation}")
        # evaluate falls back to the config stored in the checkpoint
        if args.command == "evaluate" and args.config is None and not overrides:
            cfg = None
        else:
            cfg = load_config(args.config, overrides)
        torch.manual_seed(cfg.seed if cfg is not None else 0)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.resolved = cfg
        code = COMMANDS[args.command](cfg, out, args)
        dump_config(args.resolved, out / "resolved_config.yaml")
        return code
    except FairSTGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
