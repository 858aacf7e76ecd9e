"""Linearity, equivalent resolution and RMS precision figures.

Widths derive from code density: W[k] = counts[k] / total * T. DNL is the
per-bin width error in LSB, INL its running sum. The equivalent width
omega_eq = sqrt(sum(W**3) / T) collapses the width distribution into the
uniform step with the same quantization noise power; sigma_eq = omega_eq /
(sqrt(12) * Q) expresses it as an RMS fraction of the ideal LSB.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SUMMARY_KEYS = (
    "lsb_ps",
    "dnl_pk_pk",
    "sigma_dnl",
    "inl_pk_pk",
    "sigma_inl",
    "omega_eq_ps",
    "sigma_eq_lsb",
)


@dataclass
class LinearityReport:
    """DNL/INL series plus scalar linearity and resolution figures."""

    lsb_ps: float
    dnl: np.ndarray
    inl: np.ndarray
    dnl_pk_pk: float
    sigma_dnl: float
    inl_pk_pk: float
    sigma_inl: float
    omega_eq_ps: float
    sigma_eq_lsb: float

    @property
    def n(self) -> int:
        return self.dnl.size

    def summary(self) -> dict:
        return {k: float(getattr(self, k)) for k in SUMMARY_KEYS}


@dataclass
class RmsReport:
    """Repeated-interval precision: per-interval mean and sigma, pooled sigma."""

    interval_count: int
    shots_per_interval: int
    mean_outputs: list
    per_interval_sigma: list
    sigma_valid: float


@dataclass
class EfficiencyRecord:
    """One sampling-matrix survey row and its efficiency versus the previous row."""

    matrix_order: int
    lsb_ps: float
    luts: int
    e_m: float | None = None
    error: str | None = None


def linearity_from_histogram(counts, period_ps: float) -> LinearityReport:
    """Linearity report for any histogram spanning one clock period.

    counts may be raw integers or calibrated (fractional) estimates; only
    their proportions matter. The ideal step is Q = period / n.
    """
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ConfigError("counts must be a non-empty 1-d array")
    if np.any(counts < 0):
        raise ConfigError("counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ConfigError("counts must not be all zero")
    if not (np.isfinite(period_ps) and period_ps > 0):
        raise ConfigError("period_ps must be finite and positive")
    n = counts.size
    q = period_ps / n
    # W[k]/Q = counts[k]*n/total with the period cancelled algebraically, so a
    # uniform histogram gives DNL of exactly zero and omega_eq of exactly Q.
    ratios = counts * n / total
    dnl = ratios - 1.0
    inl = np.cumsum(dnl)
    omega_eq = q * math.sqrt(float(np.mean(ratios**3)))
    return LinearityReport(
        lsb_ps=q,
        dnl=dnl,
        inl=inl,
        dnl_pk_pk=float(dnl.max() - dnl.min()),
        sigma_dnl=float(dnl.std()),
        inl_pk_pk=float(inl.max() - inl.min()),
        sigma_inl=float(inl.std()),
        omega_eq_ps=omega_eq,
        sigma_eq_lsb=omega_eq / (math.sqrt(12.0) * q),
    )


def rms_resolution(outputs) -> tuple:
    """Mean and sample standard deviation (N - 1) of repeated measurements."""
    outputs = np.ascontiguousarray(outputs, dtype=np.float64)
    if outputs.size < 2:
        raise ConfigError("rms_resolution needs at least two shots")
    return float(outputs.mean()), float(outputs.std(ddof=1))


def valid_rms(sigmas) -> float:
    """Pooled sigma over intervals: sqrt of the mean per-interval variance."""
    sigmas = np.ascontiguousarray(sigmas, dtype=np.float64)
    if sigmas.size == 0:
        raise ConfigError("valid_rms needs at least one interval")
    return float(np.sqrt(np.mean(sigmas**2)))


def efficiency_series(rows) -> list:
    """Resolution gain per LUT cost for a sampling-matrix survey.

    rows: iterable of (matrix_order, lsb_ps, luts) with the plain channel
    (matrix_order 1) first and orders strictly increasing. For each later row,

        E = ((lsb_prev - lsb) / lsb_plain) / ((luts - luts_prev) / luts_plain)

    A row repeating the previous LUT count cannot be scored; it carries an
    error note instead of a value.
    """
    rows = list(rows)
    if not rows:
        raise ConfigError("efficiency_series needs at least one row")
    orders = [r[0] for r in rows]
    if orders[0] != 1:
        raise ConfigError("the first survey row must be the plain channel (matrix_order 1)")
    if any(b <= a for a, b in zip(orders, orders[1:])):
        raise ConfigError("matrix orders must be strictly increasing")
    lsb_plain = float(rows[0][1])
    luts_plain = int(rows[0][2])
    if lsb_plain <= 0 or luts_plain <= 0:
        raise ConfigError("the plain row must have positive lsb and luts")
    out = [EfficiencyRecord(matrix_order=orders[0], lsb_ps=lsb_plain, luts=luts_plain)]
    for (_, lsb_prev, luts_prev), (m, lsb, luts) in zip(rows, rows[1:]):
        rec = EfficiencyRecord(matrix_order=m, lsb_ps=float(lsb), luts=int(luts))
        if int(luts) == int(luts_prev):
            rec.error = "zero LUT increment; efficiency undefined"
        else:
            gain = (float(lsb_prev) - float(lsb)) / lsb_plain
            cost = (int(luts) - int(luts_prev)) / luts_plain
            rec.e_m = gain / cost
        out.append(rec)
    return out


def write_linearity_csv(report: LinearityReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "dnl", "inl"])
        for i in range(report.n):
            writer.writerow([i + 1, repr(float(report.dnl[i])), repr(float(report.inl[i]))])


def write_linearity_json(report: LinearityReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
