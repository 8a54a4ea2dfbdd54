"""Command-line front end.

Subcommands wrap the engine and analytics layers for batch use: ``run-spam``
executes experiments and writes their summaries, ``calibrate-threshold`` fits
count histograms, ``predict-rejection`` prints the closed-form rejection
table, ``bias-scan`` produces measured-versus-predicted bias curves, and
``lifetime-fit`` estimates the metastable lifetime from decay samples.

Every probability is printed with six significant digits.  Exit codes:
0 success, 2 configuration or argument violation, 3 I/O failure,
4 inseparable histograms during calibration.  Commands that write files also
write a run manifest sufficient to replay them; summary documents carry no
timestamps, so a repeated seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources

import numpy as np

from . import __version__
from .analytics import (
    BIAS_FAMILIES,
    bias_family,
    bias_scan,
    fit_lifetime,
    predict_rejection,
    predict_rejection_exact,
    rejection_contributions,
    spam_summary,
)
from .channels import ConfigError, default_model, load_error_model
from .detection import (
    ThresholdSeparationError,
    calibrate_threshold,
    read_histogram_csv,
    write_histogram_csv,
)
from .engine import ExperimentConfig, Mode, reason_from_code, run_experiment
from .sequence import Prepare, build_sequence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SEPARATION = 4

_ENCODINGS = ("O", "M", "G")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _resolve_seed(value: int | None) -> int:
    """Explicit flag first, then the SPAMSIM_SEED environment, then zero."""
    if value is not None:
        return value
    env = os.environ.get("SPAMSIM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SPAMSIM_SEED must be an integer, got {env!r}") from None


def _load_model(args):
    if getattr(args, "paper_defaults", False) and args.config is not None:
        raise ConfigError("--config and --paper-defaults are mutually exclusive")
    if args.config is not None:
        return load_error_model(args.config), args.config
    return default_model(), None


def _validate_json(document: dict, schema_name: str) -> None:
    import jsonschema

    text = resources.files("spamsim.schemas").joinpath(schema_name).read_text()
    jsonschema.validate(document, json.loads(text))


def _write_json(path: str, document: dict, schema_name: str) -> None:
    _validate_json(document, schema_name)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(document, indent=2, sort_keys=True) + "\n")


def _write_manifest(
    directory: str,
    command: str,
    argv: list[str],
    seed: int | None,
    config_path: str | None,
    outputs: list[str],
    started: float,
) -> str:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_path": config_path,
        "arguments": list(argv),
        # Keep the manifest relocatable: record paths relative to it.
        "outputs": sorted(os.path.relpath(path, directory) for path in outputs),
        "duration_seconds": time.monotonic() - started,
    }
    path = os.path.join(directory, "manifest.json")
    _write_json(path, manifest, "manifest.schema.json")
    return path


def _ensure_out_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


# =========================================================================
# run-spam
# =========================================================================

def _write_records_csv(path: str, records: dict) -> None:
    import csv

    bright = records["bright"]
    prepared = records["prepared"]
    flagged = records["flagged"]
    reason = records["reason"]
    inferred = records["inferred"]
    names = {0: "zero", 1: "one", -1: ""}
    symbols = np.where(bright, "b", "d")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["shot", "prepared", "R0", "R1", "R2", "R3", "R4", "R5",
             "flagged", "reason", "inferred"]
        )
        for index in range(bright.shape[1]):
            writer.writerow(
                [index, names[int(prepared[index])], *symbols[:, index],
                 int(flagged[index]), reason_from_code(int(reason[index])).value,
                 "" if flagged[index] else names[int(inferred[index])]]
            )


def cmd_run_spam(args, argv: list[str]) -> int:
    started = time.monotonic()
    model, config_path = _load_model(args)
    seed = _resolve_seed(args.seed)
    config = ExperimentConfig(
        model=model,
        encoding=args.encoding,
        shots=args.shots,
        mode=Mode(args.mode),
        max_attempts=args.max_attempts if args.mode == "rus" else 1,
        seed=seed,
        interleave=args.prepare == "both",
        prepare=Prepare.ZERO if args.prepare == "both" else Prepare(args.prepare),
        strict_flags=args.strict_flags,
    )
    result = run_experiment(
        config, workers=args.threads, keep_records=args.records
    )
    summary = spam_summary(result, z=args.z)

    _ensure_out_dir(args.out)
    outputs = []
    summary_path = os.path.join(args.out, "summary.json")
    _write_json(summary_path, summary, "summary.schema.json")
    outputs.append(summary_path)
    for label, histogram in result.histograms.items():
        path = os.path.join(args.out, f"histogram_{label}.csv")
        write_histogram_csv(histogram, path)
        outputs.append(path)
    for name, histogram in result.accepted_r3.items():
        path = os.path.join(args.out, f"histogram_R3_accepted_{name}.csv")
        write_histogram_csv(histogram, path)
        outputs.append(path)
    if args.records:
        for name, records in (result.records or {}).items():
            path = os.path.join(args.out, f"records_{name}.csv")
            _write_records_csv(path, records)
            outputs.append(path)
    outputs.append(
        _write_manifest(args.out, "run-spam", argv, seed, config_path, outputs, started)
    )

    for name, block in summary["states"].items():
        line = (
            f"{name}: shots {block['shots']}, "
            f"rejected {_fmt(block['rejected_fraction'])}, "
            f"accepted {block['accepted']}"
        )
        rate = block["error_rate"][5]
        interval = block["error_interval"][5]
        if rate is not None:
            line += f", error {_fmt(rate)} in [{_fmt(interval[0])}, {_fmt(interval[1])}]"
        if summary["mode"] == "rus":
            line += f", attempts mean {_fmt(block['attempts_mean'])}"
        print(line)
    if summary["average"] is not None and summary["average"]["error_rate"][5] is not None:
        rate = summary["average"]["error_rate"][5]
        interval = summary["average"]["error_interval"][5]
        print(f"average error {_fmt(rate)} in [{_fmt(interval[0])}, {_fmt(interval[1])}]")
    print(f"wrote {summary_path}")
    return EXIT_OK


# =========================================================================
# calibrate-threshold
# =========================================================================

def cmd_calibrate_threshold(args, argv: list[str]) -> int:
    started = time.monotonic()
    hist_a = read_histogram_csv(args.histogram_a, label="a")
    hist_b = read_histogram_csv(args.histogram_b, label="b")
    calibration = calibrate_threshold(hist_a, hist_b, method=args.method)
    document = {
        "threshold": calibration.threshold,
        "crossing": calibration.crossing,
        "method": calibration.method,
        "dark_fit": {"mean": calibration.dark_fit[0], "sigma": calibration.dark_fit[1]},
        "bright_fit": {"mean": calibration.bright_fit[0], "sigma": calibration.bright_fit[1]},
    }
    if args.out is not None:
        _ensure_out_dir(args.out)
        path = os.path.join(args.out, "calibration.json")
        _write_json(path, document, "calibration.schema.json")
        _write_manifest(args.out, "calibrate-threshold", argv, None, None, [path], started)
        print(f"wrote {path}")
    print(
        f"threshold {calibration.threshold} (crossing {_fmt(calibration.crossing)}, "
        f"dark {_fmt(calibration.dark_fit[0])} +/- {_fmt(calibration.dark_fit[1])}, "
        f"bright {_fmt(calibration.bright_fit[0])} +/- {_fmt(calibration.bright_fit[1])})"
    )
    return EXIT_OK


# =========================================================================
# predict-rejection
# =========================================================================

def cmd_predict_rejection(args, argv: list[str]) -> int:
    started = time.monotonic()
    model, config_path = _load_model(args)
    encodings = _ENCODINGS if args.encoding == "all" else (args.encoding,)
    rows = []
    for encoding in encodings:
        for prepare in (Prepare.ZERO, Prepare.ONE):
            sequence = build_sequence(encoding, prepare)
            contributions = rejection_contributions(
                sequence, model, strict=args.strict_flags,
                include_decay=args.include_decay,
            )
            first_order = sum(c.probability for c in contributions if c.raises_flag)
            exact = predict_rejection_exact(sequence, model, strict=args.strict_flags)
            rows.append(
                {
                    "encoding": encoding,
                    "prepared": prepare.value,
                    "first_order": first_order,
                    "exact": exact,
                    "contributions": [
                        {
                            "step_index": c.step_index,
                            "description": c.description,
                            "probability": c.probability,
                            "raises_flag": c.raises_flag,
                            "flag_reason": c.flag_reason.value,
                        }
                        for c in contributions
                    ],
                }
            )
    for row in rows:
        print(
            f"{row['encoding']} {row['prepared']:<5} "
            f"first-order {_fmt(row['first_order'])} exact {_fmt(row['exact'])}"
        )
    if args.out is not None:
        _ensure_out_dir(args.out)
        path = os.path.join(args.out, "rejection.json")
        _write_json(path, {"rows": rows}, "rejection.schema.json")
        _write_manifest(args.out, "predict-rejection", argv, None, config_path, [path], started)
        print(f"wrote {path}")
    return EXIT_OK


# =========================================================================
# bias-scan
# =========================================================================

def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--t-grid must be a comma-separated float list, got {text!r}") from None
    if not grid:
        raise ConfigError("--t-grid must contain at least one ratio")
    return grid


def cmd_bias_scan(args, argv: list[str]) -> int:
    started = time.monotonic()
    model, config_path = _load_model(args)
    seed = _resolve_seed(args.seed)
    grid = _parse_grid(args.t_grid)
    families = (
        BIAS_FAMILIES if args.family == "all" else (bias_family(args.family),)
    )
    _ensure_out_dir(args.out)
    outputs = []
    for family in families:
        points = bias_scan(
            family, grid, args.shots, model=model, seed=seed, workers=args.threads
        )
        path = os.path.join(args.out, f"bias_{family.name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(
                "t_ratio,duration,gamma,predicted_bias,measured_bias,std_error,accepted,shots\n"
            )
            for p in points:
                handle.write(
                    f"{p.ratio!r},{p.duration!r},{p.gamma!r},{p.predicted!r},"
                    f"{p.measured!r},{p.std_error!r},{p.accepted},{p.shots}\n"
                )
        outputs.append(path)
        for p in points:
            print(
                f"{family.name} t/t_pi {_fmt(p.ratio)}: measured {_fmt(p.measured)} "
                f"predicted {_fmt(p.predicted)} (se {_fmt(p.std_error)})"
            )
    _write_manifest(args.out, "bias-scan", argv, seed, config_path, outputs, started)
    return EXIT_OK


# =========================================================================
# lifetime-fit
# =========================================================================

def _read_decay_samples(path: str) -> list[tuple]:
    import csv

    rows: list[tuple] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for index, row in enumerate(csv.reader(handle)):
            fields = [part.strip() for part in row if part.strip() != ""]
            if not fields:
                continue
            try:
                values = [float(part) for part in fields]
            except ValueError:
                if index == 0:  # header line
                    continue
                raise ConfigError(f"{path}: non-numeric row {index + 1}: {row!r}") from None
            if len(values) in (2, 3):
                rows.append(tuple(values))
            else:
                raise ConfigError(
                    f"{path}: rows need 2 or 3 columns, got {len(values)}"
                )
    if not rows:
        raise ConfigError(f"{path}: no decay samples found")
    return rows


def cmd_lifetime_fit(args, argv: list[str]) -> int:
    started = time.monotonic()
    samples = _read_decay_samples(args.samples)
    fit = fit_lifetime(samples)
    print(
        f"lifetime {_fmt(fit.lifetime)} s, std error {_fmt(fit.std_error)} s, "
        f"2-sigma interval [{_fmt(fit.interval[0])}, {_fmt(fit.interval[1])}]"
    )
    if args.out is not None:
        _ensure_out_dir(args.out)
        path = os.path.join(args.out, "lifetime.json")
        document = {
            "lifetime": fit.lifetime,
            "std_error": fit.std_error,
            "interval": [fit.interval[0], fit.interval[1]],
            "delays": list(fit.delays),
            "fractions": list(fit.fractions),
        }
        _write_json(path, document, "lifetime.schema.json")
        _write_manifest(args.out, "lifetime-fit", argv, None, None, [path], started)
        print(f"wrote {path}")
    return EXIT_OK


# =========================================================================
# Parser
# =========================================================================

def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="error-model JSON file")
    parser.add_argument(
        "--paper-defaults",
        action="store_true",
        help="use the bundled default parameter set explicitly",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spamsim",
        description="Simulate and analyze heralded SPAM experiments.",
    )
    parser.add_argument("--version", action="version", version=f"spamsim {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run-spam", help="run a batch SPAM experiment")
    _add_model_flags(run)
    run.add_argument("--shots", type=int, default=1_000_000, help="shots per prepared state")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--encoding", choices=_ENCODINGS, default="M")
    run.add_argument("--mode", choices=[m.value for m in Mode], default="post-select")
    run.add_argument("--max-attempts", type=int, default=3,
                     help="retry budget in rus mode")
    run.add_argument("--prepare", choices=["both", "zero", "one", "superposition"],
                     default="both")
    run.add_argument("--strict-flags", action="store_true",
                     help="also flag the R3 bright, R4 dark pattern")
    run.add_argument("--records", action="store_true", help="write per-shot CSVs")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--z", type=float, default=1.0, help="interval quantile")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=cmd_run_spam)

    cal = commands.add_parser("calibrate-threshold",
                              help="fit two count histograms and place the threshold")
    cal.add_argument("histogram_a", help="count histogram CSV")
    cal.add_argument("histogram_b", help="count histogram CSV")
    cal.add_argument("--method", choices=["moments", "least-squares"], default="moments")
    cal.add_argument("--out", default=None, help="output directory")
    cal.set_defaults(func=cmd_calibrate_threshold)

    pred = commands.add_parser("predict-rejection",
                               help="closed-form rejected-fraction table")
    _add_model_flags(pred)
    pred.add_argument("--encoding", choices=_ENCODINGS + ("all",), default="all")
    pred.add_argument("--strict-flags", action="store_true")
    pred.add_argument("--include-decay", action="store_true",
                      help="add metastable-decay contributions")
    pred.add_argument("--out", default=None, help="output directory")
    pred.set_defaults(func=cmd_predict_rejection)

    bias = commands.add_parser("bias-scan",
                               help="measured vs predicted post-selection bias")
    _add_model_flags(bias)
    bias.add_argument("--family",
                      choices=[f.name for f in BIAS_FAMILIES] + ["all"], default="all")
    bias.add_argument("--t-grid", default="0.6,0.7,0.8,0.9,1.0",
                      help="comma-separated t/t_pi ratios")
    bias.add_argument("--shots", type=int, default=100_000)
    bias.add_argument("--seed", type=int, default=None)
    bias.add_argument("--threads", type=int, default=1)
    bias.add_argument("--out", required=True, help="output directory")
    bias.set_defaults(func=cmd_bias_scan)

    life = commands.add_parser("lifetime-fit",
                               help="fit the metastable lifetime from decay samples")
    life.add_argument("samples", help="CSV of (delay, decayed[, trials]) rows")
    life.add_argument("--out", default=None, help="output directory")
    life.set_defaults(func=cmd_lifetime_fit)

    return parser


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, list(argv))
    except ThresholdSeparationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEPARATION
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
