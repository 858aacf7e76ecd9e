"""Command line entry points.

Exit codes: 0 on success, 2 for configuration or usage problems, 3 when a
calibration cannot be completed (dead address, accumulator saturation).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .errors import CalibrationError, ConfigError
from .experiments import (
    ExperimentConfig,
    PRESET_PERIODS_PS,
    load_config,
    run_calibrate,
    run_efficiency,
    run_interval_tests,
    run_mbar_sweep,
    run_multichannel,
    run_profile,
    run_resolution_sweep,
    validate_config,
)


def _add_common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", default=None, help="experiment config (json)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", type=Path, default=Path(out_default), help="report directory")
    p.add_argument(
        "--preset",
        choices=sorted(PRESET_PERIODS_PS),
        default=None,
        help="override the clock period with a named preset",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcotdc",
        description="Behavioral model and width calibration for a gray-code oscillator TDC channel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="synthesize channel bin profiles")
    _add_common(p, "runs/profile")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("calibrate", help="two-pass calibration plus linearity replay")
    _add_common(p, "runs/calibrate")
    p.add_argument("--mbar", type=int, default=None, help="coefficient fraction bits")
    p.add_argument("--exact", action="store_true", help="replay with exact rational coefficients")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("sweep-mbar", help="linearity versus coefficient word length")
    _add_common(p, "runs/sweep-mbar")
    p.add_argument("--exact", action="store_true", help="append an exact-coefficient row")
    p.set_defaults(func=_cmd_sweep_mbar)

    p = sub.add_parser("sweep-resolution", help="linearity versus virtual grid size")
    _add_common(p, "runs/sweep-resolution")
    p.add_argument("--mbar", type=int, default=None, help="coefficient fraction bits")
    p.add_argument("--exact", action="store_true", help="replay with exact rational coefficients")
    p.set_defaults(func=_cmd_sweep_resolution)

    p = sub.add_parser("interval-test", help="fixed-interval RMS resolution test")
    _add_common(p, "runs/interval-test")
    p.add_argument("--mbar", type=int, default=None, help="coefficient fraction bits")
    p.set_defaults(func=_cmd_interval_test)

    p = sub.add_parser("multichannel", help="per-channel calibrated DNL matrix")
    _add_common(p, "runs/multichannel")
    p.add_argument("--mbar", type=int, default=None, help="coefficient fraction bits")
    p.set_defaults(func=_cmd_multichannel)

    p = sub.add_parser("efficiency", help="score a resolution/cost survey table")
    p.add_argument("--table", default=None, help="survey csv (device,matrix_order,lsb_ps,luts)")
    p.add_argument("--out", type=Path, default=Path("runs/efficiency"), help="report directory")
    p.set_defaults(func=_cmd_efficiency)

    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    overrides = {}
    if getattr(args, "preset", None) is not None:
        overrides["clock_period_ps"] = PRESET_PERIODS_PS[args.preset]
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "mbar", None) is not None:
        overrides["mbar"] = args.mbar
    if getattr(args, "exact", False):
        overrides["exact_mode"] = True
    if overrides:
        cfg = replace(cfg, **overrides)
        validate_config(cfg)
    return cfg


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _print_rows(rows, keys) -> None:
    for row in rows:
        parts = [f"{k}={_fmt(row[k])}" for k in keys if row.get(k) is not None]
        if row.get("error") is not None:
            parts.append(f"error={row['error']}")
        print("  " + " ".join(parts))


def _emit(bundle, out: Path, keys) -> int:
    _print_rows(bundle.summary["rows"], keys)
    bundle.write(out)
    print(f"wrote {out / 'summary.json'}")
    return 0


def _cmd_profile(args) -> int:
    bundle = run_profile(_config_from_args(args))
    return _emit(bundle, args.out, ("channel", "n", "lsb_ps"))


def _cmd_calibrate(args) -> int:
    bundle = run_calibrate(_config_from_args(args))
    return _emit(bundle, args.out, ("channel", "n_vir", "lsb_ps", "dnl_pk_pk", "inl_pk_pk"))


def _cmd_sweep_mbar(args) -> int:
    bundle = run_mbar_sweep(_config_from_args(args))
    rows = [
        {**row, "mbar": "exact" if row["mbar"] is None else row["mbar"]}
        for row in bundle.summary["rows"]
    ]
    _print_rows(rows, ("mbar", "dnl_pk_pk", "inl_pk_pk"))
    bundle.write(args.out)
    print(f"wrote {args.out / 'summary.json'}")
    return 0


def _cmd_sweep_resolution(args) -> int:
    bundle = run_resolution_sweep(_config_from_args(args))
    return _emit(bundle, args.out, ("kind", "n_vir", "lsb_ps", "dnl_pk_pk", "inl_pk_pk"))


def _cmd_interval_test(args) -> int:
    bundle = run_interval_tests(_config_from_args(args))
    return _emit(bundle, args.out, ("n_vir", "lsb_ps", "sigma_valid_ps", "sigma_valid_lsb"))


def _cmd_multichannel(args) -> int:
    bundle = run_multichannel(_config_from_args(args))
    keys = ["n_vir"]
    if bundle.summary["rows"]:
        keys += [k for k in bundle.summary["rows"][0] if k.startswith("ch")]
    keys.append("average")
    return _emit(bundle, args.out, keys)


def _cmd_efficiency(args) -> int:
    if args.table is not None:
        bundle = run_efficiency(args.table)
    else:
        table = resources.files("gcotdc").joinpath("data/sampling_factor_survey.csv")
        with resources.as_file(table) as path:
            bundle = run_efficiency(path)
    return _emit(bundle, args.out, ("device", "matrix_order", "lsb_ps", "luts", "e_m"))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
