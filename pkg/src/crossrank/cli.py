"""Command-line interface: synth, backtest, score, report.

Exit codes: 0 success, 1 runtime/data error, 2 usage/config error. All output
files are byte-deterministic functions of the inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .backtest import BacktestReport, PipelineSpec, emit_report, run_backtest
from .errors import CrossrankError, InvalidConfigError
from .panel import load_csv, write_csv
from .synth import SynthConfig, generate_panel

TOP_LEVEL_KEYS = {"synth", "pipeline"}


def _load_run_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidConfigError("config must be a JSON object")
    unknown = set(cfg) - TOP_LEVEL_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _sig10(v: float) -> float:
    return float(f"{v:.10g}")


def cmd_synth(args) -> int:
    cfg = _load_run_config(args.config)
    if "synth" not in cfg:
        raise InvalidConfigError("config lacks a 'synth' section")
    section = dict(cfg["synth"])
    if args.seed_override is not None:
        section["seed"] = args.seed_override
    config = SynthConfig.from_dict(section)
    panel, truth = generate_panel(config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(panel, out / "panel.csv")
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump({"config": config.to_dict(), "truth": truth.to_dict()}, fh, indent=2)
        fh.write("\n")
    with open(out / "targets.csv", "w", encoding="utf-8") as fh:
        fh.write("period_label,obs_id,target\n")
        for p in panel.periods:
            for i, oid in enumerate(p.obs_ids):
                t = p.target[i]
                if not np.isnan(t):
                    fh.write(f"{p.pid.label},{oid},{repr(float(t))}\n")
    return 0


def cmd_backtest(args) -> int:
    cfg = _load_run_config(args.config)
    if "pipeline" not in cfg:
        raise InvalidConfigError("config lacks a 'pipeline' section")
    spec = PipelineSpec.from_dict(cfg["pipeline"])
    try:
        panel = load_csv(args.data)
    except OSError as exc:
        print(f"error: cannot read data: {exc}", file=sys.stderr)
        return 1

    report = run_backtest(panel, spec, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, "json", out / "report.json")
    emit_report(report, "csv", out / "report.csv")

    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    with open(out / "predictions.csv", "w", encoding="utf-8") as merged:
        merged.write("period_label,obs_id,score\n")
        for r in report.records:
            if r.predictions is None:
                continue
            with open(pred_dir / f"{r.label}.csv", "w", encoding="utf-8") as fh:
                fh.write("period_label,obs_id,score\n")
                for oid, s in zip(r.obs_ids, r.predictions):
                    line = f"{r.label},{oid},{repr(float(s))}\n"
                    fh.write(line)
                    merged.write(line)

    succeeded = sum(1 for r in report.records if not r.status.startswith("failed"))
    return 0 if succeeded > 0 else 1


def _read_keyed_csv(path, value_column: str) -> dict[str, dict[str, float]]:
    """{period_label: {obs_id: value}} from a period_label,obs_id,<value> file."""
    expected = ["period_label", "obs_id", value_column]
    out: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise InvalidConfigError(f"{path}: expected header {','.join(expected)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise InvalidConfigError(f"{path}: row {row_no} has {len(row)} fields")
            try:
                val = float(row[2])
            except ValueError:
                raise InvalidConfigError(
                    f"{path}: row {row_no} has unparseable value {row[2]!r}") from None
            period = out.setdefault(row[0], {})
            if row[1] in period:
                raise InvalidConfigError(
                    f"{path}: duplicate obs_id {row[1]!r} in period {row[0]}")
            period[row[1]] = val
    if not out:
        raise InvalidConfigError(f"{path}: no data rows")
    return out


def cmd_score(args) -> int:
    pred = _read_keyed_csv(args.pred, "score")
    truth = _read_keyed_csv(args.truth, "target")
    if set(pred) != set(truth):
        raise InvalidConfigError(
            f"period sets differ: {sorted(set(pred) ^ set(truth))}")
    per_period = []
    sps, gs = [], []
    for label in sorted(pred):
        p, t = pred[label], truth[label]
        if set(p) != set(t):
            raise InvalidConfigError(f"obs_id sets differ in period {label}")
        ids = sorted(p)
        pv = np.asarray([p[i] for i in ids])
        tv = np.asarray([t[i] for i in ids])
        sp = metrics.spearman(pv, tv)
        g = metrics.ndcg_top_fraction(pv, tv)
        sps.append(sp)
        gs.append(g)
        per_period.append({"period": label, "spearman": _sig10(sp), "ndcg": _sig10(g)})
    result = {
        "per_period": per_period,
        "spearman_mean": _sig10(float(np.mean(sps))),
        "ndcg_mean": _sig10(float(np.mean(gs))),
    }
    print(json.dumps(result))
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            report = BacktestReport.from_dict(json.load(fh))
    except OSError as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, KeyError) as exc:
        raise InvalidConfigError(f"malformed report JSON: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, "csv", out / "report.csv")
    with open(out / "series.csv", "w", encoding="utf-8") as fh:
        fh.write("period,spearman,ndcg,combined\n")
        for r in report.records:
            cells = [r.label] + ["" if v is None else repr(v)
                                 for v in (r.spearman, r.ndcg, r.combined)]
            fh.write(",".join(cells) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossrank",
        description="Cross-sectional stock ranking lab: synthetic panels, feature "
                    "recipes, linear model zoo, leakage-safe backtests.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic panel CSV plus ground truth")
    p.add_argument("--config", required=True, help="run-config JSON with a 'synth' section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed-override", type=int, default=None,
                   help="replace the seed from the config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("backtest", help="run a walk-forward backtest over a panel CSV")
    p.add_argument("--config", required=True, help="run-config JSON with a 'pipeline' section")
    p.add_argument("--data", required=True, help="panel CSV path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker threads across periods")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("score", help="score a prediction CSV against a truth CSV")
    p.add_argument("--pred", required=True, help="period_label,obs_id,score CSV")
    p.add_argument("--truth", required=True, help="period_label,obs_id,target CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="re-render a report JSON to CSV outputs")
    p.add_argument("--report", required=True, help="report.json path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CrossrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
