"""Command-line front end.

Three subcommands: ``run`` executes an experiment config and writes its
artifacts, ``accept`` replays the acceptance suite and prints one verdict
line per check, ``inspect`` prints the header of a saved .fld/.flo artifact.
Exit codes: 0 ok, 1 at least one acceptance check failed, 2 bad config or
unreadable artifact.  RENORMLAB_THREADS sizes the worker pool; any value
produces bitwise-identical numbers.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .field import GridScalar, GridVector, load_field
from .flow import load_ensemble
from .lab import (
    EXPERIMENT_TAGS,
    ExperimentConfig,
    LabError,
    acceptance_suite,
    run_experiment,
    write_report_csv,
)

EXIT_OK = 0
EXIT_CHECK_FAIL = 1
EXIT_CONFIG_ERROR = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renormlab",
        description="desk-scale checks for renormalized stochastic continuity equations",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log per-check progress to stderr"
    )
    sub = parser.add_subparsers(dest="command")
    p_run = sub.add_parser(
        "run", help=f"execute one experiment ({', '.join(EXPERIMENT_TAGS)})"
    )
    p_run.add_argument("config", help="JSON experiment config")
    p_acc = sub.add_parser("accept", help="run the full acceptance suite")
    p_acc.add_argument("config", help="JSON config supplying seed and output_dir")
    p_ins = sub.add_parser("inspect", help="print the header of a .fld or .flo file")
    p_ins.add_argument("artifact", help="field or flow-ensemble artifact")
    return parser


def _cmd_run(config_path: str) -> int:
    cfg = ExperimentConfig.from_json(config_path)
    if cfg.experiment == "acceptance_all":
        return _accept(cfg)
    for path in run_experiment(cfg):
        print(path)
    return EXIT_OK


def _accept(cfg: ExperimentConfig) -> int:
    report = acceptance_suite(cfg)
    for line in report.summary_lines():
        print(line)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "acceptance_report.csv"
    write_report_csv(report, report_path)
    passed = sum(c.passed for c in report.checks)
    print(f"{passed}/{len(report.checks)} checks passed -> {report_path}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAIL


def _cmd_accept(config_path: str) -> int:
    return _accept(ExperimentConfig.from_json(config_path))


def _read_header(path: Path) -> dict:
    with open(path, "rb") as handle:
        return json.loads(handle.readline().decode("ascii"))


def _cmd_inspect(artifact: str) -> int:
    path = Path(artifact)
    if not path.is_file():
        raise LabError(f"no such artifact: {artifact}")
    suffix = path.suffix.lower()
    if suffix == ".fld":
        header = _read_header(path)
        obj = load_field(path)
        kind = {GridScalar: "scalar", GridVector: "vector"}.get(type(obj), "time-indexed vector")
        print(f"{path}: field ({kind})")
        for key in ("dim", "L", "N", "components"):
            print(f"  {key} = {header[key]}")
        if header.get("times"):
            print(f"  times = {len(header['times'])} slices on [0, {header['times'][-1]:g}]")
        values = obj.values if hasattr(obj, "values") else obj.slices[0].values
        print(
            f"  values: min {np.min(values):.6g}  max {np.max(values):.6g}"
            f"  mean {np.mean(values):.6g}"
        )
        return EXIT_OK
    if suffix == ".flo":
        header = _read_header(path)
        ens = load_ensemble(path)
        print(f"{path}: flow ensemble")
        for key in ("dim", "L", "N", "T", "dt", "k_count", "seed"):
            print(f"  {key} = {header[key]}")
        print(f"  steps = {ens.path.steps}")
        print(f"  jacobian cached = {ens.jac_variational is not None}")
        print(f"  logdet cached = {ens.logdet_exponential is not None}")
        return EXIT_OK
    raise LabError(f"cannot inspect {artifact!r}: expected a .fld or .flo file")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG_ERROR
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args.config)
        if args.command == "accept":
            return _cmd_accept(args.config)
        return _cmd_inspect(args.artifact)
    except ValueError as exc:
        # LabError and every module error derive from ValueError; surface the
        # message with its origin and keep the config/artifact exit code.
        kind = type(exc).__name__
        print(f"{kind}: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
