"""Seeded experiment runners and the on-disk report bundle.

Every runner is a pure function of (config, derived seeds): channel c's
profile and density passes draw their seeds from blake2b(master_seed, c,
purpose), so report bundles are byte-identical across runs and channels or
sweep rows can be dispatched to worker threads without losing that.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import _kernels as kernels
from .channel import ChannelConfig, synthesize_bin_profile, write_profile_csv
from .density import (
    accumulate_raw_histogram,
    build_virtual_grid,
    generate_uniform_hits,
    RawHistogram,
    cumulative_timestamps,
)
from .errors import CalibrationError, ConfigError
from .metrics import (
    efficiency_series,
    linearity_from_histogram,
    rms_resolution,
    valid_rms,
    write_linearity_csv,
    write_linearity_json,
)
from .vbcm import (
    CompensatedHistogram,
    _occurrences_from_hist,
    apply_measurement_exact,
    apply_measurement_hist,
    compute_compensation,
    compute_width_calibration,
    write_cc_table_bin,
    write_cc_table_csv,
)

# seed purposes
PROFILE, PASS1, PASS2, EVAL, INTERVAL = range(5)

PRESET_PERIODS_PS = {"226mhz": 4424.78, "156mhz": 6410.26}


def derive_seed(master_seed: int, channel: int, purpose: int) -> int:
    """Stable per-(channel, purpose) u64 seed."""
    if not 0 <= master_seed < 2**64:
        raise ConfigError("master_seed must be an unsigned 64-bit integer")
    if channel < 0 or purpose < 0:
        raise ConfigError("channel and purpose must be nonnegative")
    payload = struct.pack("<QQQ", master_seed, channel, purpose)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a runner needs; mirrors the JSON config keys one to one."""

    clock_period_ps: float = PRESET_PERIODS_PS["226mhz"]
    plain_bin_count: int = 25
    matrix_order: int = 8
    width_dispersion: float = 0.3
    wide_bin_fraction: float = 0.0
    wide_bin_scale: float = 1.0
    channel_count: int = 1
    n_vir_values: tuple | None = None
    resolutions_ps: tuple | None = None
    mbar: int = 5
    mbar_values: tuple = (1, 2, 3, 4, 5, 6)
    exact_mode: bool = False
    rounding: str = "floor"
    hits_pass1: int = 10_000_000
    hits_pass2: int = 10_000_000
    hits_eval: int = 10_000_000
    interval_count: int = 20
    shots_per_interval: int = 10_000
    jitter_ps: float = 0.0
    master_seed: int = 20260814
    jobs: int = 1

    def channel_config(self, channel: int) -> ChannelConfig:
        return ChannelConfig(
            clock_period_ps=self.clock_period_ps,
            plain_bin_count=self.plain_bin_count,
            matrix_order=self.matrix_order,
            seed=derive_seed(self.master_seed, channel, PROFILE),
            width_dispersion=self.width_dispersion,
            wide_bin_fraction=self.wide_bin_fraction,
            wide_bin_scale=self.wide_bin_scale,
        )

    @property
    def fine_bin_count(self) -> int:
        return self.plain_bin_count * self.matrix_order


def validate_config(cfg: ExperimentConfig) -> None:
    """Config-level invariants; raises ConfigError, warns on thin statistics."""
    cfg.channel_config(0)  # channel template invariants
    if cfg.channel_count < 1:
        raise ConfigError("channel_count must be >= 1")
    if cfg.n_vir_values is not None and cfg.resolutions_ps is not None:
        raise ConfigError("give n_vir_values or resolutions_ps, not both")
    for name in ("mbar",):
        if not 1 <= getattr(cfg, name) <= 32:
            raise ConfigError("mbar must lie in [1, 32]")
    if not cfg.mbar_values or any(not 1 <= int(m) <= 32 for m in cfg.mbar_values):
        raise ConfigError("mbar_values must be a non-empty list within [1, 32]")
    if cfg.rounding not in ("floor", "nearest"):
        raise ConfigError("rounding must be 'floor' or 'nearest'")
    for name in ("hits_pass1", "hits_pass2", "hits_eval"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.interval_count < 1:
        raise ConfigError("interval_count must be >= 1")
    if cfg.shots_per_interval < 2:
        raise ConfigError("shots_per_interval must be >= 2")
    if cfg.jitter_ps < 0:
        raise ConfigError("jitter_ps must be >= 0")
    if not 0 <= cfg.master_seed < 2**64:
        raise ConfigError("master_seed must be an unsigned 64-bit integer")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    max_n_vir = max(
        (v for v, err in resolve_n_vir(cfg, cfg.fine_bin_count) if err is None),
        default=cfg.fine_bin_count,
    )
    floor = min(cfg.hits_pass1, cfg.hits_pass2, cfg.hits_eval)
    if floor < 10 * max_n_vir:
        raise ConfigError(f"hit counts must be >= 10 * n_vir ({10 * max_n_vir})")
    if floor < 100 * max_n_vir:
        warnings.warn(
            f"hit counts below 100 * n_vir ({100 * max_n_vir}); expect noisy calibration",
            stacklevel=2,
        )


def resolve_n_vir(cfg: ExperimentConfig, n: int) -> list:
    """Requested virtual grid sizes as (n_vir, error) rows; default is n_vir = n."""
    out = []
    if cfg.resolutions_ps is not None:
        for r in cfg.resolutions_ps:
            if not r > 0:
                out.append((None, f"resolution {r} ps is not positive"))
                continue
            n_vir = int(round(cfg.clock_period_ps / r))
            if not 1 <= n_vir <= n:
                out.append((n_vir, f"resolution {r} ps needs {n_vir} virtual bins; raw channel has {n}"))
            else:
                out.append((n_vir, None))
    elif cfg.n_vir_values is not None:
        for v in cfg.n_vir_values:
            v = int(v)
            if not 1 <= v <= n:
                out.append((v, f"n_vir {v} outside [1, {n}]"))
            else:
                out.append((v, None))
    else:
        out.append((n, None))
    return out


_CONFIG_KEYS = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = dict(data)
    for key in ("n_vir_values", "resolutions_ps", "mbar_values"):
        if key in data and data[key] is not None:
            data[key] = tuple(data[key])
    cfg = ExperimentConfig(**data)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(data)


def canonical_config(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def config_sha256(cfg: ExperimentConfig) -> str:
    blob = json.dumps(canonical_config(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _provenance(cfg: ExperimentConfig) -> dict:
    return {
        "artifact_version": __version__,
        "backend": kernels.BACKEND,
        "config_sha256": config_sha256(cfg),
        "master_seed": cfg.master_seed,
    }


@dataclass
class ReportBundle:
    """Deterministically ordered result set with its on-disk layout."""

    kind: str
    provenance: dict
    summary: dict
    artifacts: list = field(default_factory=list)

    def add(self, relpath: str, tag: str, payload) -> None:
        self.artifacts.append((relpath, tag, payload))

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for relpath, tag, payload in self.artifacts:
            path = out / relpath
            if tag == "profile":
                write_profile_csv(payload, path)
            elif tag == "cctable_csv":
                write_cc_table_csv(payload[0], payload[1], path)
            elif tag == "cctable_bin":
                write_cc_table_bin(payload[0], payload[1], path)
            elif tag == "linearity_csv":
                write_linearity_csv(payload, path)
            elif tag == "linearity_json":
                write_linearity_json(payload, path)
            elif tag == "rows":
                fieldnames, rows = payload
                with open(path, "w", newline="") as fh:
                    writer = csv.DictWriter(fh, fieldnames=fieldnames)
                    writer.writeheader()
                    for row in rows:
                        writer.writerow({k: _csv_cell(row.get(k)) for k in fieldnames})
            else:
                raise ValueError(f"unknown artifact tag {tag}")
        doc = {"kind": self.kind, "provenance": self.provenance, **self.summary}
        with open(out / "summary.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return out


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _channel_seeds(cfg: ExperimentConfig, channel: int) -> dict:
    return {
        "profile": derive_seed(cfg.master_seed, channel, PROFILE),
        "pass1": derive_seed(cfg.master_seed, channel, PASS1),
        "pass2": derive_seed(cfg.master_seed, channel, PASS2),
        "eval": derive_seed(cfg.master_seed, channel, EVAL),
        "interval": derive_seed(cfg.master_seed, channel, INTERVAL),
    }


@dataclass
class _ChannelRun:
    """One channel's density tests, shared by every row that reuses them."""

    channel: int
    config: ChannelConfig
    profile: object
    seeds: dict
    hist1: RawHistogram
    hist2: RawHistogram
    hist_eval: RawHistogram
    eval_ds: object


def _run_channel_passes(cfg: ExperimentConfig, channel: int, keep_eval_ds: bool = False) -> _ChannelRun:
    ch = cfg.channel_config(channel)
    profile = synthesize_bin_profile(ch)
    seeds = _channel_seeds(cfg, channel)
    ds1 = generate_uniform_hits(profile, cfg.hits_pass1, seeds["pass1"])
    hist1 = accumulate_raw_histogram(ds1)
    ds2 = generate_uniform_hits(profile, cfg.hits_pass2, seeds["pass2"])
    hist2 = accumulate_raw_histogram(ds2)
    ds_eval = generate_uniform_hits(profile, cfg.hits_eval, seeds["eval"])
    hist_eval = accumulate_raw_histogram(ds_eval)
    return _ChannelRun(
        channel=channel,
        config=ch,
        profile=profile,
        seeds=seeds,
        hist1=hist1,
        hist2=hist2,
        hist_eval=hist_eval,
        eval_ds=ds_eval if keep_eval_ds else None,
    )


def _calibrate_from_run(run: _ChannelRun, cfg: ExperimentConfig, n_vir: int, mbar: int):
    """Compensation + calibration for one grid size from the shared passes."""
    grid = build_virtual_grid(cfg.hits_pass1, run.profile.n, n_vir, cfg.clock_period_ps)
    comp = compute_compensation(cumulative_timestamps(run.hist1), grid)
    occ = _occurrences_from_hist(run.hist2.counts, comp)
    hit_com = CompensatedHistogram(occurrences=occ, n_hits=run.hist2.n_hits)
    cal = compute_width_calibration(hit_com, comp, grid, mbar, cfg.rounding)
    return grid, comp, cal


def _calibrated_counts(run: _ChannelRun, comp, cal, exact: bool) -> np.ndarray:
    if exact:
        counts = apply_measurement_exact(run.eval_ds, comp, cal)
        return np.array([float(c) for c in counts])
    return apply_measurement_hist(run.hist_eval, comp, cal).counts


def run_profile(cfg: ExperimentConfig) -> ReportBundle:
    """Synthesize and report every channel's bin profile."""
    rows = []
    bundle = ReportBundle(kind="profile", provenance=_provenance(cfg), summary={})
    for c in range(cfg.channel_count):
        ch = cfg.channel_config(c)
        profile = synthesize_bin_profile(ch)
        rows.append(
            {
                "channel": c,
                "n": profile.n,
                "lsb_ps": profile.q_ps,
                "min_width_ps": float(profile.widths_ps.min()),
                "max_width_ps": float(profile.widths_ps.max()),
                "seed": ch.seed,
            }
        )
        bundle.add(f"profile_ch{c}.csv", "profile", profile)
    bundle.summary = {"config": canonical_config(cfg), "rows": rows}
    bundle.add(
        "profiles.csv",
        "rows",
        (["channel", "n", "lsb_ps", "min_width_ps", "max_width_ps", "seed"], rows),
    )
    return bundle


def run_calibrate(cfg: ExperimentConfig) -> ReportBundle:
    """Calibrate every channel at every requested grid size and report linearity."""
    bundle = ReportBundle(kind="calibrate", provenance=_provenance(cfg), summary={})
    rows = []
    for c in range(cfg.channel_count):
        run = _run_channel_passes(cfg, c, keep_eval_ds=cfg.exact_mode)
        bundle.add(f"profile_ch{c}.csv", "profile", run.profile)
        raw_rep = linearity_from_histogram(run.hist_eval.counts, cfg.clock_period_ps)
        bundle.add(f"linearity_raw_ch{c}.csv", "linearity_csv", raw_rep)
        bundle.add(f"linearity_raw_ch{c}.json", "linearity_json", raw_rep)
        for n_vir, err in resolve_n_vir(cfg, run.profile.n):
            if err is not None:
                rows.append({"channel": c, "n_vir": n_vir, "error": err})
                continue
            try:
                grid, comp, cal = _calibrate_from_run(run, cfg, n_vir, cfg.mbar)
                counts = _calibrated_counts(run, comp, cal, cfg.exact_mode)
                rep = linearity_from_histogram(counts, cfg.clock_period_ps)
            except CalibrationError as exc:
                rows.append({"channel": c, "n_vir": n_vir, "error": str(exc)})
                continue
            rows.append(
                {
                    "channel": c,
                    "n_vir": n_vir,
                    "mbar": cfg.mbar,
                    "missing_bin_free": comp.missing_bin_free,
                    **rep.summary(),
                    **{f"seed_{k}": v for k, v in run.seeds.items() if k in ("pass1", "pass2", "eval")},
                    "error": None,
                }
            )
            bundle.add(f"cctable_ch{c}_nvir{n_vir}.csv", "cctable_csv", (comp, cal))
            bundle.add(f"cctable_ch{c}_nvir{n_vir}.bin", "cctable_bin", (comp, cal))
            bundle.add(f"linearity_ch{c}_nvir{n_vir}.csv", "linearity_csv", rep)
            bundle.add(f"linearity_ch{c}_nvir{n_vir}.json", "linearity_json", rep)
    bundle.summary = {"config": canonical_config(cfg), "rows": rows}
    fields = [
        "channel", "n_vir", "mbar", "missing_bin_free",
        "lsb_ps", "dnl_pk_pk", "sigma_dnl", "inl_pk_pk", "sigma_inl",
        "omega_eq_ps", "sigma_eq_lsb",
        "seed_pass1", "seed_pass2", "seed_eval", "error",
    ]
    bundle.add("calibrate.csv", "rows", (fields, rows))
    return bundle


def run_mbar_sweep(cfg: ExperimentConfig) -> ReportBundle:
    """Sweep the coefficient word length at n_vir = n on one channel.

    The density passes are shared across rows: the word length only changes
    the fixed-point image of the coefficients, so per-row work is O(n) and
    rows differ exactly and only by quantization.
    """
    run = _run_channel_passes(cfg, 0, keep_eval_ds=True)
    n = run.profile.n
    bundle = ReportBundle(kind="sweep-mbar", provenance=_provenance(cfg), summary={})
    bundle.add("profile_ch0.csv", "profile", run.profile)
    raw_rep = linearity_from_histogram(run.hist_eval.counts, cfg.clock_period_ps)
    rows = []
    seeds = {f"seed_{k}": v for k, v in run.seeds.items() if k in ("pass1", "pass2", "eval")}
    for mbar in cfg.mbar_values:
        try:
            grid, comp, cal = _calibrate_from_run(run, cfg, n, int(mbar))
            counts = apply_measurement_hist(run.hist_eval, comp, cal).counts
            rep = linearity_from_histogram(counts, cfg.clock_period_ps)
        except CalibrationError as exc:
            rows.append({"mbar": int(mbar), "error": str(exc), **seeds})
            continue
        rows.append(
            {
                "mbar": int(mbar),
                "dnl_pk_pk": rep.dnl_pk_pk,
                "inl_pk_pk": rep.inl_pk_pk,
                "error": None,
                **seeds,
            }
        )
        bundle.add(f"linearity_mbar{int(mbar)}.csv", "linearity_csv", rep)
        bundle.add(f"linearity_mbar{int(mbar)}.json", "linearity_json", rep)
    if cfg.exact_mode:
        try:
            grid, comp, cal = _calibrate_from_run(run, cfg, n, 1)
            counts = _calibrated_counts(run, comp, cal, exact=True)
            rep = linearity_from_histogram(counts, cfg.clock_period_ps)
            rows.append(
                {
                    "mbar": None,
                    "dnl_pk_pk": rep.dnl_pk_pk,
                    "inl_pk_pk": rep.inl_pk_pk,
                    "error": None,
                    **seeds,
                }
            )
            bundle.add("linearity_exact.csv", "linearity_csv", rep)
            bundle.add("linearity_exact.json", "linearity_json", rep)
        except CalibrationError as exc:
            rows.append({"mbar": None, "error": str(exc), **seeds})
    bundle.summary = {
        "config": canonical_config(cfg),
        "raw": raw_rep.summary(),
        "rows": rows,
    }
    bundle.add(
        "mbar_sweep.csv",
        "rows",
        (["mbar", "dnl_pk_pk", "inl_pk_pk", "seed_pass1", "seed_pass2", "seed_eval", "error"],
         [{**r, "mbar": "exact" if r["mbar"] is None else r["mbar"]} for r in rows]),
    )
    return bundle


def run_resolution_sweep(cfg: ExperimentConfig) -> ReportBundle:
    """Raw versus calibrated linearity across the requested grid sizes."""
    run = _run_channel_passes(cfg, 0, keep_eval_ds=cfg.exact_mode)
    bundle = ReportBundle(kind="sweep-resolution", provenance=_provenance(cfg), summary={})
    bundle.add("profile_ch0.csv", "profile", run.profile)
    raw_rep = linearity_from_histogram(run.hist_eval.counts, cfg.clock_period_ps)
    bundle.add("linearity_raw_ch0.csv", "linearity_csv", raw_rep)
    bundle.add("linearity_raw_ch0.json", "linearity_json", raw_rep)
    rows = [{"kind": "raw", "n_vir": run.profile.n, "error": None, **raw_rep.summary()}]
    seeds = {f"seed_{k}": v for k, v in run.seeds.items() if k in ("pass1", "pass2", "eval")}
    for n_vir, err in resolve_n_vir(cfg, run.profile.n):
        if err is not None:
            rows.append({"kind": "rejected", "n_vir": n_vir, "error": err})
            continue
        try:
            grid, comp, cal = _calibrate_from_run(run, cfg, n_vir, cfg.mbar)
            counts = _calibrated_counts(run, comp, cal, cfg.exact_mode)
            rep = linearity_from_histogram(counts, cfg.clock_period_ps)
        except CalibrationError as exc:
            rows.append({"kind": "calibrated", "n_vir": n_vir, "error": str(exc)})
            continue
        rows.append(
            {
                "kind": "calibrated",
                "n_vir": n_vir,
                "missing_bin_free": comp.missing_bin_free,
                "error": None,
                **rep.summary(),
                **seeds,
            }
        )
        bundle.add(f"cctable_ch0_nvir{n_vir}.csv", "cctable_csv", (comp, cal))
        bundle.add(f"linearity_ch0_nvir{n_vir}.csv", "linearity_csv", rep)
        bundle.add(f"linearity_ch0_nvir{n_vir}.json", "linearity_json", rep)
    bundle.summary = {"config": canonical_config(cfg), "rows": rows}
    fields = [
        "kind", "n_vir", "missing_bin_free",
        "lsb_ps", "dnl_pk_pk", "sigma_dnl", "inl_pk_pk", "sigma_inl",
        "omega_eq_ps", "sigma_eq_lsb",
        "seed_pass1", "seed_pass2", "seed_eval", "error",
    ]
    bundle.add("resolution_sweep.csv", "rows", (fields, rows))
    return bundle


def _vector_capture(profile, events: np.ndarray):
    """Vectorized capture_timestamp: (coarse codes, fine times)."""
    period = profile.total_ps
    coarse = np.floor(events / period).astype(np.int64)
    tau = (coarse + 1) * period - events
    high = tau > period
    coarse[high] -= 1
    tau[high] -= period
    low = tau <= 0
    coarse[low] += 1
    tau[low] += period
    return coarse, tau


def run_interval_tests(cfg: ExperimentConfig) -> ReportBundle:
    """Repeated fixed-interval shots through the calibrated channel.

    Each shot's fine code is remapped through its middle compensation address
    and read out as a uniform draw inside that virtual bin, so a jitter-free
    ideal channel measures sigma_valid = LSB / sqrt(12).
    """
    run = _run_channel_passes(cfg, 0)
    period = cfg.clock_period_ps
    h = cfg.interval_count
    shots = cfg.shots_per_interval
    bundle = ReportBundle(kind="interval-test", provenance=_provenance(cfg), summary={})
    bundle.add("profile_ch0.csv", "profile", run.profile)
    rows = []
    for n_vir, err in resolve_n_vir(cfg, run.profile.n):
        if err is not None:
            rows.append({"n_vir": n_vir, "error": err})
            continue
        try:
            grid, comp, cal = _calibrate_from_run(run, cfg, n_vir, cfg.mbar)
        except CalibrationError as exc:
            rows.append({"n_vir": n_vir, "error": str(exc)})
            continue
        resolution = grid.resolution_ps
        rng = np.random.default_rng(run.seeds["interval"])
        delays = [i * period / (h + 1) for i in range(1, h + 1)]
        means = []
        sigmas = []
        detail_rows = []
        for i, delay in enumerate(delays, start=1):
            events = np.full(shots, delay)
            if cfg.jitter_ps > 0:
                events = events + rng.normal(0.0, cfg.jitter_ps, size=shots)
                np.clip(events, 0.0, None, out=events)
            coarse, tau = _vector_capture(run.profile, events)
            codes = kernels.fine_bins_from_times(run.profile.edges_ps, tau)
            mids = comp.addr_m[codes.astype(np.int64) - 1]
            tau_hat = (mids - 1 + rng.uniform(size=shots)) * resolution
            estimates = (coarse + 1) * period - tau_hat
            mean, sigma = rms_resolution(estimates)
            means.append(mean)
            sigmas.append(sigma)
            detail_rows.append(
                {"interval": i, "delay_ps": delay, "mean_ps": mean, "sigma_ps": sigma}
            )
        sigma_valid = valid_rms(sigmas)
        rows.append(
            {
                "n_vir": n_vir,
                "lsb_ps": resolution,
                "sigma_valid_ps": sigma_valid,
                "sigma_valid_lsb": sigma_valid / resolution,
                "interval_count": h,
                "shots_per_interval": shots,
                "jitter_ps": cfg.jitter_ps,
                "seed_interval": run.seeds["interval"],
                "error": None,
            }
        )
        bundle.add(
            f"interval_test_nvir{n_vir}.csv",
            "rows",
            (["interval", "delay_ps", "mean_ps", "sigma_ps"], detail_rows),
        )
    bundle.summary = {"config": canonical_config(cfg), "rows": rows}
    fields = [
        "n_vir", "lsb_ps", "sigma_valid_ps", "sigma_valid_lsb",
        "interval_count", "shots_per_interval", "jitter_ps", "seed_interval", "error",
    ]
    bundle.add("interval_tests.csv", "rows", (fields, rows))
    return bundle


def _multichannel_channel(cfg: ExperimentConfig, c: int) -> dict:
    run = _run_channel_passes(cfg, c)
    out = {"channel": c, "profile": run.profile, "cells": {}}
    for n_vir, err in resolve_n_vir(cfg, run.profile.n):
        if err is not None:
            out["cells"][n_vir] = {"error": err}
            continue
        try:
            grid, comp, cal = _calibrate_from_run(run, cfg, n_vir, cfg.mbar)
            counts = apply_measurement_hist(run.hist_eval, comp, cal).counts
            rep = linearity_from_histogram(counts, cfg.clock_period_ps)
            out["cells"][n_vir] = {"dnl_pk_pk": rep.dnl_pk_pk, "error": None}
        except CalibrationError as exc:
            out["cells"][n_vir] = {"error": str(exc)}
    return out


def run_multichannel(cfg: ExperimentConfig) -> ReportBundle:
    """Per-channel calibrated DNL across the grid sizes, with row averages.

    Channels are independent (fresh derived seeds per channel); with jobs > 1
    they run on a thread pool and are still assembled in channel order.
    """
    bundle = ReportBundle(kind="multichannel", provenance=_provenance(cfg), summary={})
    channels = list(range(cfg.channel_count))
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda c: _multichannel_channel(cfg, c), channels))
    else:
        results = [_multichannel_channel(cfg, c) for c in channels]
    for res in results:
        bundle.add(f"profile_ch{res['channel']}.csv", "profile", res["profile"])
    n_vir_keys = list(results[0]["cells"].keys())
    rows = []
    for n_vir in n_vir_keys:
        row = {"n_vir": n_vir}
        values = []
        for res in results:
            cell = res["cells"][n_vir]
            row[f"ch{res['channel']}"] = cell.get("dnl_pk_pk")
            if cell.get("error") is None:
                values.append(cell["dnl_pk_pk"])
            else:
                row["error"] = cell["error"]
        row["average"] = float(np.mean(values)) if values else None
        rows.append(row)
    bundle.summary = {"config": canonical_config(cfg), "rows": rows}
    fields = ["n_vir", *[f"ch{c}" for c in channels], "average", "error"]
    for row in rows:
        row.setdefault("error", None)
    bundle.add("multichannel.csv", "rows", (fields, rows))
    return bundle


def read_efficiency_table(path) -> list:
    """Parse a survey CSV (device, matrix_order, lsb_ps, luts) into device blocks."""
    path = Path(path)
    devices = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["device", "matrix_order", "lsb_ps", "luts"]:
            raise ConfigError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ConfigError(f"{path}: line {lineno}: expected 4 columns, got {len(row)}")
            try:
                device = row[0]
                triple = (int(row[1]), float(row[2]), int(row[3]))
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
            if device not in devices:
                devices[device] = []
                order.append(device)
            devices[device].append(triple)
    if not order:
        raise ConfigError(f"{path}: empty survey table")
    return [(device, devices[device]) for device in order]


def run_efficiency(table_path) -> ReportBundle:
    """Score every device block of a survey table."""
    blocks = read_efficiency_table(table_path)
    table_hash = hashlib.sha256(Path(table_path).read_bytes()).hexdigest()
    provenance = {
        "artifact_version": __version__,
        "backend": kernels.BACKEND,
        "table_sha256": table_hash,
    }
    bundle = ReportBundle(kind="efficiency", provenance=provenance, summary={})
    rows = []
    for device, triples in blocks:
        for rec in efficiency_series(triples):
            rows.append(
                {
                    "device": device,
                    "matrix_order": rec.matrix_order,
                    "lsb_ps": rec.lsb_ps,
                    "luts": rec.luts,
                    "e_m": rec.e_m,
                    "error": rec.error,
                }
            )
    bundle.summary = {"table": str(table_path), "rows": rows}
    bundle.add(
        "efficiency.csv",
        "rows",
        (["device", "matrix_order", "lsb_ps", "luts", "e_m", "error"], rows),
    )
    return bundle
