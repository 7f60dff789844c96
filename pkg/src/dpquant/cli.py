"""Command-line front end.

Exit codes: 0 on success, 1 on configuration or usage errors, 2 on data or
release errors (and on a failing self-test). Data goes to stdout or the
``--out`` directory; logs go to stderr only.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from dpquant import selftest
from dpquant.core import ConfigError, DataError, ReleaseError, make_rng
from dpquant.pipelines import SUMMARY_FIELDS, ExperimentConfig, aggregate, generate_synthetic, run_experiment

log = logging.getLogger("dpquant")

TASKS = {"release": "oneshot", "pubpri": "pubpri", "sequential": "sequential"}
DEFAULT_METHODS = {
    "release": ["uniform"],
    "pubpri": ["uniform", "public_quantiles", "public_cauchy", "pubfit", "pubfit_robust"],
    "sequential": ["uniform", "pubprev", "pubprox"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise ConfigError(f"{self.prog}: {message}")


def parse_quantiles(text: str) -> list[float]:
    """Parse ``0.1,0.5,0.9`` or ``uniform:m`` (i/(m+1) for i = 1..m)."""
    text = text.strip()
    if text.startswith("uniform:"):
        try:
            m = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"--quantiles: bad count in {text!r}") from None
        if m < 1:
            raise ConfigError("--quantiles: need m >= 1")
        return [i / (m + 1) for i in range(1, m + 1)]
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--quantiles: cannot parse {text!r}") from None


def _floats(flag: str, text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: cannot parse {text!r}") from None


def _words(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpquant", description="Private multi-quantile release with prediction priors.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig fields")
    common.add_argument("--epsilon", help="privacy budget, or a comma list of budgets")
    common.add_argument("--m", type=int, help="number of evenly spaced quantiles")
    common.add_argument("--quantiles", help="comma list, or uniform:m")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--method", help="comma list of methods")
    common.add_argument("--input", help="CSV file with the (private) data")
    common.add_argument("--value-column")
    common.add_argument("--out", help="directory for records.jsonl, summary.csv, config.resolved")
    common.add_argument("--format", choices=("jsonl", "csv"), default="csv", help="stdout format")
    common.add_argument("--threads", type=int, help="cap on worker processes")
    common.add_argument("--verbose", "-v", action="store_true")

    sub.add_parser("release", parents=[common], help="one-shot release with a static prior")
    pp = sub.add_parser("pubpri", parents=[common], help="public-private prior fitting")
    pp.add_argument("--public", help="CSV file with public data")
    sq = sub.add_parser("sequential", parents=[common], help="release over a stream of datasets")
    sq.add_argument("--days", type=int)
    sq.add_argument("--noise", type=float)
    sq.add_argument("--group-column")
    sq.add_argument("--feature-columns", help="comma list")

    sy = sub.add_parser("synth", help="write a synthetic sequential task as CSV")
    sy.add_argument("--days", type=int, default=200)
    sy.add_argument("--m", type=int, default=9)
    sy.add_argument("--noise", type=float, default=0.0)
    sy.add_argument("--dim", type=int, default=10)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", help="output CSV path (default stdout)")
    sy.add_argument("--verbose", "-v", action="store_true")

    st = sub.add_parser("selftest", help="run the built-in invariant checks")
    st.add_argument("--verbose", "-v", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (if any) overlaid with command-line flags."""
    d: dict = {}
    if args.config:
        d = dataclasses.asdict(ExperimentConfig.load(args.config))
    else:
        d["methods"] = DEFAULT_METHODS[args.command]
    d["task"] = TASKS[args.command]
    if args.epsilon is not None:
        d["epsilons"] = _floats("--epsilon", args.epsilon)
    if args.m is not None:
        d["m"] = args.m
        d["qs"] = None
    if args.quantiles is not None:
        d["qs"] = parse_quantiles(args.quantiles)
        d["m"] = len(d["qs"])
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("value_column", "value_column")):
        if getattr(args, flag) is not None:
            d[key] = getattr(args, flag)
    if args.method is not None:
        d["methods"] = _words(args.method)
    if args.input is not None:
        d["data_path"] = args.input
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
        d["workers"] = args.threads
    if args.command == "pubpri" and args.public is not None:
        d["public_path"] = args.public
    if args.command == "sequential":
        if args.days is not None:
            d["days"] = args.days
        if args.noise is not None:
            d["noise_scale"] = args.noise
        if args.group_column is not None:
            d["group_column"] = args.group_column
        if args.feature_columns is not None:
            d["feature_columns"] = _words(args.feature_columns)
    return ExperimentConfig.from_dict(d)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _write_out(out_dir: str, cfg: ExperimentConfig, records_text: str, summary_text: str) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "records.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(records_text)
        with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8") as fh:
            fh.write(summary_text)
        with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise DataError(f"cannot write to {out_dir}: {e.strerror}") from None


def cmd_experiment(args) -> int:
    cfg = resolve_config(args)
    log.info("running %s with methods %s", cfg.task, ",".join(cfg.methods))
    records = run_experiment(cfg)
    records_text = "".join(r.to_json() + "\n" for r in records)
    summary_text = summary_csv(aggregate(records))
    if args.out:
        _write_out(args.out, cfg, records_text, summary_text)
        log.info("wrote %s", args.out)
    sys.stdout.write(records_text if args.format == "jsonl" else summary_text)
    return 0


def cmd_synth(args) -> int:
    if args.days < 1 or args.m < 1 or args.dim < 1 or args.noise < 0:
        raise ConfigError("synth: need days, m, dim >= 1 and noise >= 0")
    datasets, features, _ = generate_synthetic(args.days, args.m, args.noise, make_rng(args.seed), args.dim)
    width = len(str(args.days - 1))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day", "value", *[f"f{j}" for j in range(args.dim)]])
    for t, (x, f) in enumerate(zip(datasets, features)):
        fs = [repr(float(v)) for v in np.asarray(f)]
        for v in x.values:
            w.writerow([f"{t:0{width}d}", repr(float(v)), *fs])
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(buf.getvalue())
        except OSError as e:
            raise DataError(f"cannot write {args.out}: {e.strerror}") from None
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_selftest(args) -> int:
    passed, total, failed = selftest.run()
    print(f"selftest: {passed}/{total} passed")
    for name in failed:
        print(f"FAILED {name}")
    return 0 if not failed else 2


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    handler = {"synth": cmd_synth, "selftest": cmd_selftest}.get(args.command, cmd_experiment)
    try:
        return handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataError, ReleaseError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
