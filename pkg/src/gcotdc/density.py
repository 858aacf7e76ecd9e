"""Code density testing: uniform hit generation, raw histograms, cumulative
timestamps and the virtual bin grid that anchors the calibration."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _kernels as kernels
from .channel import BinProfile
from .errors import ConfigError

_DENSITY_MAGIC = b"GCOD"
_DENSITY_VERSION = 1


@dataclass
class DensityDataset:
    """Stream of fine codes produced by a density test (codes are 1-indexed)."""

    fine_codes: np.ndarray
    n: int
    seed: int | None = None

    def __post_init__(self):
        self.fine_codes = np.ascontiguousarray(self.fine_codes, dtype=np.uint16)
        if self.fine_codes.size:
            lo = int(self.fine_codes.min())
            hi = int(self.fine_codes.max())
            if lo < 1 or hi > self.n:
                raise ConfigError(f"fine codes must lie in [1, {self.n}]")

    @property
    def n_hits(self) -> int:
        return self.fine_codes.size


@dataclass
class RawHistogram:
    """Per-bin hit counts of a density test."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size == 0:
            raise ConfigError("counts must be a non-empty 1-d array")
        if self.counts.min() < 0:
            raise ConfigError("counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.counts.size

    @property
    def n_hits(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class VirtualBinGrid:
    """Uniform virtual grid: n_vir bins over one period, hit_vir hits each.

    hit_vir = n_hits / n_vir is kept exact (a rational), so grid timestamps
    t_vir[m] = m * hit_vir compare exactly against integer cumulative counts.
    """

    n_hits: int
    n: int
    n_vir: int
    clock_period_ps: float

    @property
    def hit_vir(self) -> Fraction:
        return Fraction(self.n_hits, self.n_vir)

    @property
    def resolution_ps(self) -> float:
        """Configured virtual LSB, T / n_vir."""
        return self.clock_period_ps / self.n_vir

    def t_vir(self, m: int) -> Fraction:
        """Virtual timestamp of grid line m (m = 0 is the period start)."""
        return self.hit_vir * m


def build_virtual_grid(n_hits: int, n: int, n_vir: int, clock_period_ps: float) -> VirtualBinGrid:
    """Validate and build the virtual grid for a calibration run."""
    if n_hits < 1:
        raise ConfigError("n_hits must be >= 1")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 1 <= n_vir <= n:
        raise ConfigError(f"n_vir must lie in [1, {n}] (virtual bins cannot outnumber raw bins)")
    if not (np.isfinite(clock_period_ps) and clock_period_ps > 0):
        raise ConfigError("clock_period_ps must be finite and positive")
    return VirtualBinGrid(n_hits=n_hits, n=n, n_vir=n_vir, clock_period_ps=clock_period_ps)


def grid_from_resolution(n_hits: int, n: int, resolution_ps: float, clock_period_ps: float) -> VirtualBinGrid:
    """Build the grid for a configured LSB; n_vir is the nearest integer T / R."""
    if not (np.isfinite(resolution_ps) and resolution_ps > 0):
        raise ConfigError("resolution_ps must be finite and positive")
    n_vir = int(round(clock_period_ps / resolution_ps))
    return build_virtual_grid(n_hits, n, n_vir, clock_period_ps)


def generate_uniform_hits(profile: BinProfile, n_hits: int, seed: int) -> DensityDataset:
    """Run a density test: n_hits events uniform over one clock period.

    Event times t ~ U[0, T) are latched on the period's closing edge, so the
    fine times T - t sweep (0, T] and land in the cumulative-width bins.
    """
    if n_hits < 1:
        raise ConfigError("n_hits must be >= 1")
    if profile.n >= 1 << 16:
        raise ConfigError("profiles beyond 65535 bins do not fit the u16 code space")
    rng = np.random.default_rng(seed)
    taus = profile.total_ps - rng.uniform(0.0, profile.total_ps, size=n_hits)
    codes = kernels.fine_bins_from_times(profile.edges_ps, taus)
    return DensityDataset(fine_codes=codes, n=profile.n, seed=seed)


def accumulate_raw_histogram(ds: DensityDataset, n: int | None = None) -> RawHistogram:
    """Histogram a dataset; rejects codes outside [1, n]."""
    if n is None:
        n = ds.n
    return RawHistogram(counts=kernels.count_codes(ds.fine_codes, n))


def cumulative_timestamps(hist: RawHistogram) -> np.ndarray:
    """Raw timestamps T_raw[k]: hits at or below bin k (int64 prefix sums)."""
    return np.cumsum(hist.counts, dtype=np.int64)


def uniformity_flags(hist: RawHistogram) -> np.ndarray:
    """1-indexed bins deviating more than 5 binomial sigma from n_hits / n.

    A non-empty result flags suspicious non-uniformity of the hit source; it
    is advisory and never raised as an error.
    """
    n = hist.n
    n_hits = hist.n_hits
    p = 1.0 / n
    mean = n_hits * p
    sigma = np.sqrt(n_hits * p * (1.0 - p))
    dev = np.abs(hist.counts - mean)
    return np.flatnonzero(dev > 5.0 * sigma) + 1


def write_histogram_csv(hist: RawHistogram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_index", "count"])
        for i, c in enumerate(hist.counts, start=1):
            writer.writerow([i, int(c)])


def read_histogram_csv(path) -> RawHistogram:
    path = Path(path)
    counts = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["bin_index", "count"]:
            raise ConfigError(f"{path}: unexpected header {header}")
        for row in reader:
            if len(row) != 2:
                raise ConfigError(f"{path}: malformed row {row}")
            counts.append(int(row[1]))
    return RawHistogram(counts=np.asarray(counts, dtype=np.int64))


def write_density_bin(ds: DensityDataset, path) -> None:
    """Binary dataset: 8-byte header (magic, u16 version, u16 n), then u16 codes."""
    with open(path, "wb") as fh:
        fh.write(_DENSITY_MAGIC)
        fh.write(struct.pack("<HH", _DENSITY_VERSION, ds.n))
        fh.write(ds.fine_codes.astype("<u2", copy=False).tobytes())


def read_density_bin(path) -> DensityDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != _DENSITY_MAGIC:
        raise ConfigError(f"{path}: not a density dataset")
    version, n = struct.unpack("<HH", raw[4:8])
    if version != _DENSITY_VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    body = raw[8:]
    if len(body) % 2:
        raise ConfigError(f"{path}: truncated code stream")
    codes = np.frombuffer(body, dtype="<u2").astype(np.uint16)
    return DensityDataset(fine_codes=codes, n=n)
