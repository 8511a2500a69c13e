"""Command-line entry point.

Subcommands cover the whole workflow: ``synth`` emits a canonical dataset,
``ingest-criteo`` converts a raw impression TSV, ``fit`` runs the
fixed-point training loop, ``eval`` scores a saved model against the
last-touch baseline, ``robustness`` sweeps the scenario mix, and
``auction-check`` brute-forces the bidding-optimality certificate.

Every run writes its resolved configuration and a content hash of its
inputs into the output directory, so identical configurations and seeds
reproduce byte-identical reports.  Reports are CSV/JSON plus a rendered
figure; exit codes distinguish parse (2), validation (3), training (4) and
verification (5) failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from .attribution import (
    FixedPointConfig,
    fixed_point_report,
    last_touch_valuation,
    run_fixed_point,
)
from .auction import random_density, verify_myopic_optimality
from .errors import (
    DatasetParseError,
    DatasetValidationError,
    EstimationError,
    IngestError,
    MetricError,
    SchemaError,
    TouchCreditError,
    TrainingError,
)
from .ingest import (
    ParseStats,
    build_timelines,
    default_schema_path,
    load_schema,
    parse_tsv,
    user_split,
)
from .learners import AveragingLearner, LogisticLearner, load_model, save_model
from .metrics import (
    additivity_likelihood,
    mean_average_precision,
    precision_recall_points,
    score_timelines,
)
from .oracle import fit_oracle
from .synth import TwoScenarioModel, robustness_sweep, sample
from .timeline import load_dataset, save_dataset

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_TRAINING = 4
EXIT_VERIFICATION = 5

OUTPUT_ROOT_ENV = "TOUCHCREDIT_OUTPUT_ROOT"


class VerificationFailure(TouchCreditError):
    """A requested certificate did not hold."""


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, (DatasetParseError, SchemaError, json.JSONDecodeError)):
        return EXIT_PARSE
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, VerificationFailure):
        return EXIT_VERIFICATION
    if isinstance(
        exc, (DatasetValidationError, EstimationError, IngestError, MetricError, ValueError)
    ):
        return EXIT_VALIDATION
    return EXIT_UNEXPECTED


def _out_dir(args) -> Path:
    if args.out_dir is not None:
        path = Path(args.out_dir)
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        path = Path(root) / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_resolved_config(out: Path, args, input_paths: list) -> None:
    resolved = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("command", "func") and not k.startswith("_")
    }
    _write_json(out / "resolved_config.json", resolved)
    lines = []
    for raw in input_paths:
        if raw is None:
            continue
        digest = hashlib.sha256(Path(raw).read_bytes()).hexdigest()
        lines.append(f"{digest}  {raw}")
    (out / "inputs.sha256").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _apply_config_file(args: argparse.Namespace) -> None:
    """Config-file values override parser defaults; explicit flags win."""
    if getattr(args, "config", None) is None:
        return
    subparser = getattr(args, "_parser")
    with open(args.config, "r", encoding="utf-8") as handle:
        overrides = json.load(handle)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValueError(f"config file sets unknown option {key!r}")
        if getattr(args, dest) == subparser.get_default(dest):
            setattr(args, dest, value)


def cmd_synth(args) -> int:
    out = _out_dir(args)
    model = TwoScenarioModel(
        p=args.p, conversion_single=args.conv_single, conversion_pair=args.conv_pair
    )
    dataset = sample(model, args.timelines, args.seed)
    if args.test_fraction is not None:
        dataset = user_split(dataset, 1.0 - args.test_fraction, args.seed)
    target = Path(args.dataset_out) if args.dataset_out else out / "dataset.tsv"
    save_dataset(dataset, target)
    _write_resolved_config(out, args, [])
    _write_json(
        out / "report.json",
        {
            "timelines": len(dataset),
            "converted": int(sum(r.reward > 0 for r in dataset.records)),
            "dataset": str(target),
        },
    )
    return EXIT_OK


def cmd_ingest_criteo(args) -> int:
    out = _out_dir(args)
    schema_path = args.schema if args.schema else default_schema_path()
    schema = load_schema(schema_path)
    stats = ParseStats()
    rows = parse_tsv(
        args.input, schema, stats=stats, max_malformed_fraction=args.max_malformed
    )
    corpus = build_timelines(
        rows, max_length=args.max_length, time_unit=schema.time_unit
    )
    dataset = user_split(corpus.dataset, args.split, args.seed)
    target = Path(args.dataset_out) if args.dataset_out else out / "corpus.tsv"
    save_dataset(dataset, target)
    provenance = corpus.provenance.to_json_dict()
    provenance["parse"] = {
        "rows_read": stats.rows_read,
        "rows_parsed": stats.rows_parsed,
        "rows_malformed": stats.rows_malformed,
    }
    provenance["split"] = {
        "fraction": args.split,
        "train_records": len(dataset.subset("train")),
        "test_records": len(dataset.subset("test")),
    }
    _write_json(out / "provenance.json", provenance)
    _write_resolved_config(out, args, [args.input])
    return EXIT_OK


def _make_learner(args):
    if args.learner == "averaging":
        return AveragingLearner()
    if args.learner == "logistic":
        return LogisticLearner(
            hash_bits=args.hash_bits,
            l2=args.l2,
            epochs=args.epochs,
            step_size=args.step_size,
            batch_size=args.batch_size,
            seed=args.seed,
        )
    raise ValueError(f"unknown learner {args.learner!r}")


def cmd_fit(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    learner = _make_learner(args)
    config = FixedPointConfig(
        tol=args.tol, max_iter=args.max_iter, init_floor=args.init_floor
    )
    state = run_fixed_point(dataset, learner, config=config)

    lines = ["iteration,likelihood_train,likelihood_test"]
    for i, value in enumerate(state.likelihood_trace, start=1):
        test_value = (
            repr(state.test_likelihood_trace[i - 1])
            if i <= len(state.test_likelihood_trace)
            else ""
        )
        lines.append(f"{i},{value!r},{test_value}")
    (out / "trace.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if state.likelihood_trace:
        plots.plot_likelihood_trace(
            state.likelihood_trace, state.test_likelihood_trace, out / "trace.png"
        )
    report = fixed_point_report(state, dataset.subset("train"))
    _write_json(out / "report.json", report)
    if state.valuation is not None:
        save_model(state.valuation, out / "model.txt")
    _write_resolved_config(out, args, [args.data])
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    eval_records = dataset.subset("test") or dataset.records
    train_records = dataset.subset("train") or dataset.records
    baseline = last_touch_valuation(fit_oracle(dataset.with_records(tuple(train_records))))

    report: dict = {
        "eval_records": len(eval_records),
        "eval_split": "test" if dataset.subset("test") else "all",
        "delta": args.delta,
        "metric": args.metric,
    }
    if args.metric in ("likelihood", "all"):
        report["likelihood"] = {
            "model": additivity_likelihood(model, eval_records).value,
            "last_touch": additivity_likelihood(baseline, eval_records).value,
        }
    labels = np.array([1.0 if r.reward > 0 else 0.0 for r in eval_records])
    if args.metric in ("map", "all") and labels.any():
        curves = {}
        maps = {}
        for name, scorer in (("model", model), ("last_touch", baseline)):
            scores, clamped = score_timelines(scorer, eval_records, args.delta)
            maps[name] = mean_average_precision(scores, labels)
            points = precision_recall_points(scores, labels)
            curve_lines = ["recall,precision"] + [
                f"{r!r},{p!r}" for r, p in points
            ]
            (out / f"pr_{name}.csv").write_text(
                "\n".join(curve_lines) + "\n", encoding="utf-8"
            )
            curves[name] = points
            report.setdefault("clamped_valuations", {})[name] = clamped
        report["mean_average_precision"] = maps
        plots.plot_precision_recall(curves, out / "pr.png")
    elif args.metric in ("map", "all"):
        report["mean_average_precision"] = None
    _write_json(out / "metrics.json", report)
    _write_resolved_config(out, args, [args.data, args.model])
    return EXIT_OK


def cmd_robustness(args) -> int:
    out = _out_dir(args)
    p_values = [float(x) for x in args.p_grid.split(",") if x]
    report = robustness_sweep(
        p_values,
        sample_size=args.sample_size,
        seed=args.seed,
        verify_fixed_point=args.verify_fixed_point,
    )
    (out / "sweep.csv").write_text("\n".join(report.csv_lines()) + "\n", encoding="utf-8")
    plots.plot_robustness(report.rows, out / "sweep.png")
    core_a = report.valuations("core", "A")
    lt_a = report.valuations("last_touch", "A")
    summary = {
        "p_values": p_values,
        "core_spread_A": max(core_a.values()) - min(core_a.values()) if core_a else None,
        "last_touch_spread_A": max(lt_a.values()) - min(lt_a.values()) if lt_a else None,
        "fixed_point_gaps": report.fixed_point_gaps,
        "errors": report.errors,
    }
    _write_json(out / "report.json", summary)
    _write_resolved_config(out, args, [])
    if report.errors:
        raise EstimationError(f"sweep failed at {sorted(report.errors)}")
    return EXIT_OK


def cmd_auction_check(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    densities = [random_density(rng) for _ in range(args.densities)]
    pairs = []
    for _ in range(args.pairs):
        a, b = sorted(rng.uniform(0.0, 1.0, size=2))
        pairs.append((float(b), float(a)))
    grid = np.arange(0.0, 1.5 + args.grid_step, args.grid_step)
    report = verify_myopic_optimality(pairs, densities, grid, tolerance=args.tolerance)
    _write_json(out / "report.json", report.to_json_dict())
    _write_resolved_config(out, args, [])
    if not report.passed:
        raise VerificationFailure(
            f"increment bid beaten by {report.max_violation} (> {report.tolerance})"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="touchcredit",
        description="Timeline-to-display credit assignment and display valuation.",
    )
    parser.add_argument(
        "--json-errors",
        action="store_true",
        help="emit machine-readable errors on stderr",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=None, help="output directory "
                       f"(default: ${OUTPUT_ROOT_ENV}/<command>)")
        p.add_argument("--config", default=None, help="JSON file with option defaults")

    p = sub.add_parser("synth", help="sample the two-scenario synthetic dataset")
    common(p)
    p.add_argument("--timelines", type=int, default=10000)
    p.add_argument("--p", type=float, default=1.0 / 3.0)
    p.add_argument("--conv-single", type=float, default=0.5)
    p.add_argument("--conv-pair", type=float, default=0.6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--test-fraction", type=float, default=None)
    p.add_argument("--dataset-out", default=None)
    p.set_defaults(func=cmd_synth, _parser=p)

    p = sub.add_parser("ingest-criteo", help="convert a raw impression TSV")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None, help="schema JSON (default: bundled)")
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-length", type=int, default=20)
    p.add_argument("--max-malformed", type=float, default=0.05)
    p.add_argument("--dataset-out", default=None)
    p.set_defaults(func=cmd_ingest_criteo, _parser=p)

    p = sub.add_parser("fit", help="run the fixed-point training loop")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--learner", choices=("averaging", "logistic"), default="averaging")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--init-floor", type=float, default=1e-6)
    p.add_argument("--hash-bits", type=int, default=13)
    p.add_argument("--l2", type=float, default=1e-6)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_fit, _parser=p)

    p = sub.add_parser("eval", help="score a saved model against last touch")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--delta", type=float, default=0.95)
    p.add_argument("--metric", choices=("map", "likelihood", "all"), default="all")
    p.set_defaults(func=cmd_eval, _parser=p)

    p = sub.add_parser("robustness", help="sweep the scenario mix probability")
    common(p)
    p.add_argument(
        "--p-grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )
    p.add_argument("--sample-size", type=int, default=0, help="0 = exact oracles")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--verify-fixed-point", action="store_true")
    p.set_defaults(func=cmd_robustness, _parser=p)

    p = sub.add_parser("auction-check", help="verify increment bidding optimality")
    common(p)
    p.add_argument("--densities", type=int, default=100)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--grid-step", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_auction_check, _parser=p)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        code = _exit_code_for(exc)
        if args.json_errors:
            payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
            print(json.dumps(payload), file=sys.stderr)
        else:
            print(f"touchcredit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
