"""Command-line front end: fit, simulate, benchmark, bootstrap, stage.

Exit codes: 0 success, 1 domain failure (bad data, failed fit), 2 usage or
I/O failure. Outputs are written atomically (temp file, then rename) and every
command is deterministic given identical flags; randomness flows from --seed,
which defaults to the fixed constant 42 rather than the clock.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from .data import load_dataset, dataset_to_csv
from .errors import DebmError
from .eval import (
    bootstrap_positional_variance,
    heatmap_svg,
    run_sweep,
    sweep_plot_svg,
    sweep_to_csv,
    sweep_to_json,
    variance_to_csv,
    variance_to_json,
)
from .mixture import mixtures_from_dicts
from .models import METHODS, fit_report, stage_with_mixtures
from .ordering import ordering_from_names
from .sim import DEFAULT_COUNTS, default_config, simulate, truth_sidecar

DEFAULT_SEED = 42


def _write_atomic(path, text: str) -> None:
    """Write text then rename into place so failures never leave partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-debm-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, doc) -> None:
    _write_atomic(path, json.dumps(doc, indent=2) + "\n")


def _counts(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("counts must be three integers: CN,MCI,AD")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"counts must be integers, got {text!r}")
    if any(v < 0 for v in values) or sum(values) < 1:
        raise argparse.ArgumentTypeError("counts must be non-negative and sum to >= 1")
    return values


def _float_list(text: str):
    try:
        values = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _method_list(text: str):
    methods = tuple(p.strip() for p in text.split(",") if p.strip())
    for m in methods:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(
                f"unknown method {m!r}; expected a comma-separated subset of "
                + ", ".join(METHODS)
            )
    if not methods:
        raise argparse.ArgumentTypeError("expected at least one method")
    return methods


def _positive(kind, minimum=1):
    def parse(text: str):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {text!r}")
        return value

    return parse


def cmd_fit(args) -> int:
    dataset = load_dataset(args.data)
    report = fit_report(dataset, args.method, seed=args.seed, ebm_restarts=args.ebm_restarts)
    _write_json(args.out, report)
    return 0


def cmd_simulate(args) -> int:
    config = default_config(
        args.n,
        counts=args.counts,
        sigma_beta_rel=args.sigma_beta,
        sigma_xi_multiplier=args.sigma_xi_mult,
        seed=args.seed,
    )
    result = simulate(config)
    _write_atomic(args.out, dataset_to_csv(result.dataset))
    if args.truth:
        _write_json(args.truth, truth_sidecar(result, config))
    return 0


def cmd_benchmark(args) -> int:
    grid = [(sb, sx) for sb in args.sigma_beta for sx in args.sigma_xi_mult]
    result = run_sweep(
        args.methods,
        grid,
        args.reps,
        args.n,
        counts=args.counts,
        seed=args.seed,
        jobs=args.jobs,
    )
    if args.format == "csv":
        _write_atomic(args.out, sweep_to_csv(result, include_seconds=args.timings))
    else:
        _write_json(args.out, sweep_to_json(result))
    if args.plot:
        _write_atomic(args.plot, sweep_plot_svg(result))
    return 0


def cmd_bootstrap(args) -> int:
    dataset = load_dataset(args.data)
    variance = bootstrap_positional_variance(
        dataset,
        args.bootstraps,
        seed=args.seed,
        stratified=not args.no_stratify,
        restarts=args.restarts,
        jobs=args.jobs,
    )
    if args.format == "csv":
        _write_atomic(args.out, variance_to_csv(variance))
    else:
        _write_json(args.out, variance_to_json(variance))
    if args.heatmap:
        _write_atomic(args.heatmap, heatmap_svg(variance))
    return 0


def cmd_stage(args) -> int:
    dataset = load_dataset(args.data)
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    try:
        mixtures, names = mixtures_from_dicts(report["mixtures"])
        ordered_names = report["central_ordering"]
    except (KeyError, TypeError) as exc:
        raise DebmError(f"report file is missing fitted-model fields: {exc}")
    missing = [n for n in names if n not in dataset.biomarker_names]
    if missing:
        raise DebmError(
            "dataset lacks biomarker column(s) required by the report: "
            + ", ".join(missing)
        )
    columns = [dataset.biomarker_names.index(n) for n in names]
    aligned = dataset.subset_columns(columns)
    sigma = ordering_from_names(ordered_names, aligned.biomarker_names)
    stages = stage_with_mixtures(aligned, mixtures, sigma, score=args.score)
    rows = [
        {"subject_id": sid, "diagnosis": lab, "stage": stage}
        for sid, lab, stage in zip(dataset.subject_ids, dataset.labels, stages.tolist())
    ]
    if args.format == "csv":
        lines = ["subject_id,diagnosis,stage"]
        lines += [f"{r['subject_id']},{r['diagnosis']},{r['stage']!r}" for r in rows]
        _write_atomic(args.out, "\n".join(lines) + "\n")
    else:
        _write_json(args.out, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debm",
        description="Estimate biomarker abnormality orderings from cross-sectional data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument(
            "--seed", type=int, default=DEFAULT_SEED,
            help=f"RNG seed (default: the fixed constant {DEFAULT_SEED})",
        )

    p = sub.add_parser("fit", help="fit one model to a dataset and write a JSON report")
    p.add_argument("data", help="input dataset CSV (subject_id,diagnosis,<biomarkers...>)")
    p.add_argument("--method", choices=METHODS, default="debm-prob")
    p.add_argument("--out", required=True, help="output report path (JSON)")
    p.add_argument("--ebm-restarts", type=_positive(int), default=10)
    add_seed(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="generate a synthetic cascade dataset CSV")
    p.add_argument("--n", type=_positive(int, 2), default=7, help="number of biomarkers")
    p.add_argument("--counts", type=_counts, default=DEFAULT_COUNTS, metavar="CN,MCI,AD")
    p.add_argument("--sigma-beta", type=float, default=0.0,
                   help="measurement noise, relative to the base level")
    p.add_argument("--sigma-xi-mult", type=float, default=0.0,
                   help="onset-spread multiplier")
    p.add_argument("--out", required=True, help="output dataset CSV path")
    p.add_argument("--truth", help="optional ground-truth sidecar path (JSON)")
    add_seed(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="accuracy sweep over a noise grid")
    p.add_argument("--methods", type=_method_list, default=METHODS,
                   metavar=",".join(METHODS))
    p.add_argument("--sigma-beta", type=_float_list, default=(0.5, 1.0, 2.0),
                   metavar="B1,B2,...")
    p.add_argument("--sigma-xi-mult", type=_float_list, default=(0.0, 1.0, 2.0, 3.0, 4.0),
                   metavar="X1,X2,...")
    p.add_argument("--reps", type=_positive(int), default=50, help="repetitions per cell")
    p.add_argument("--n", type=_positive(int, 2), default=7, help="number of biomarkers")
    p.add_argument("--counts", type=_counts, default=DEFAULT_COUNTS, metavar="CN,MCI,AD")
    p.add_argument("--jobs", type=_positive(int), default=1, help="worker processes")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", help="optional SVG line-plot path")
    p.add_argument("--timings", action="store_true",
                   help="fill the seconds column (breaks byte-for-byte reproducibility)")
    add_seed(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("bootstrap", help="bootstrap positional variance of the ordering")
    p.add_argument("data", help="input dataset CSV")
    p.add_argument("-B", "--bootstraps", type=_positive(int), default=100)
    p.add_argument("--restarts", type=_positive(int, 0), default=0,
                   help="consensus search restarts per resample")
    p.add_argument("--no-stratify", action="store_true",
                   help="resample without preserving diagnosis counts")
    p.add_argument("--jobs", type=_positive(int), default=1, help="worker processes")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--heatmap", help="optional SVG heatmap path")
    add_seed(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("stage", help="stage subjects against a fitted report")
    p.add_argument("data", help="input dataset CSV (labels may be anything)")
    p.add_argument("--report", required=True, help="fitted report JSON from `debm fit`")
    p.add_argument("--score", choices=("stage", "expected"), default="stage")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_stage)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except DebmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
