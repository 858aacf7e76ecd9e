"""Single-channel behavioral model of a gray-code-oscillator TDC.

A channel is a clock period tiled by n = plain_bin_count * matrix_order fine
bins. The oscillator walks a 5-bit gray cycle, one state per plain bin, and a
switch-matrix of phase-offset DFF groups subdivides each plain bin into
matrix_order sub-bins.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidSampleError, ProfileError

GRAY_BITS = 5
GRAY_CYCLE = 1 << GRAY_BITS

MATRIX_ORDERS = (1, 2, 4, 8, 16)


def gray_encode(index: int) -> int:
    """Gray word for a cycle position in [0, 32)."""
    if not 0 <= index < GRAY_CYCLE:
        raise ValueError(f"cycle position {index} outside [0, {GRAY_CYCLE})")
    return (index >> 1) ^ index


def gray_decode(word: int) -> int:
    """Cycle position for a 5-bit gray word (inverse of gray_encode)."""
    if not 0 <= word < GRAY_CYCLE:
        raise InvalidSampleError(f"gray word {word} outside [0, {GRAY_CYCLE})")
    word ^= word >> 1
    word ^= word >> 2
    word ^= word >> 4
    return word


@dataclass(frozen=True)
class ChannelConfig:
    """Static description of one TDC channel.

    Parameters
    ----------
    clock_period_ps : float
        Sampling clock period T.
    plain_bin_count : int
        Gray states traversed per period, 2..32 (the 5-bit cycle must not
        repeat within a period or the decoder becomes ambiguous).
    matrix_order : int
        Sampling-matrix group count M, one of 1, 2, 4, 8, 16.
    seed : int
        64-bit seed for profile synthesis.
    width_dispersion : float
        Coefficient of variation of the synthesized fine-bin widths.
    wide_bin_fraction : float
        Share of bins stretched by wide_bin_scale before renormalization.
    wide_bin_scale : float
        Stretch factor applied to the selected wide bins.
    """

    clock_period_ps: float
    plain_bin_count: int
    matrix_order: int
    seed: int
    width_dispersion: float = 0.0
    wide_bin_fraction: float = 0.0
    wide_bin_scale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.clock_period_ps) and self.clock_period_ps > 0):
            raise ConfigError("clock_period_ps must be finite and positive")
        if not 2 <= self.plain_bin_count <= GRAY_CYCLE:
            raise ConfigError(f"plain_bin_count must lie in [2, {GRAY_CYCLE}]")
        if self.matrix_order not in MATRIX_ORDERS:
            raise ConfigError(f"matrix_order must be one of {MATRIX_ORDERS}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.width_dispersion < 0:
            raise ConfigError("width_dispersion must be >= 0")
        if not 0 <= self.wide_bin_fraction < 1:
            raise ConfigError("wide_bin_fraction must lie in [0, 1)")
        if self.wide_bin_scale <= 0:
            raise ConfigError("wide_bin_scale must be positive")

    @property
    def fine_bin_count(self) -> int:
        return self.plain_bin_count * self.matrix_order

    @property
    def plain_lsb_ps(self) -> float:
        """Quantization step of the plain oscillator alone."""
        return self.clock_period_ps / self.plain_bin_count

    @property
    def nominal_lsb_ps(self) -> float:
        """Nominal fine step: the plain step divided by the matrix order."""
        return self.plain_lsb_ps / self.matrix_order


@dataclass
class BinProfile:
    """Realized fine-bin widths tiling one clock period."""

    widths_ps: np.ndarray
    total_ps: float

    def __post_init__(self):
        self.widths_ps = np.ascontiguousarray(self.widths_ps, dtype=np.float64)
        if self.widths_ps.ndim != 1 or self.widths_ps.size == 0:
            raise ProfileError("widths_ps must be a non-empty 1-d array")
        if not np.all(self.widths_ps > 0):
            raise ProfileError("every bin width must be positive")
        if abs(self.widths_ps.sum() - self.total_ps) > 1e-9 * self.total_ps:
            raise ProfileError("widths must tile the full period")

    @property
    def n(self) -> int:
        return self.widths_ps.size

    @property
    def q_ps(self) -> float:
        """Ideal uniform width T / n."""
        return self.total_ps / self.n

    @cached_property
    def edges_ps(self) -> np.ndarray:
        """Cumulative right edges; the last edge is pinned to total_ps exactly."""
        edges = np.cumsum(self.widths_ps)
        edges[-1] = self.total_ps
        return edges


@dataclass(frozen=True)
class TimestampRecord:
    """One captured event: coarse count, fine code and the exact fine time."""

    coarse_code: int
    fine_bin: int
    fine_time_ps: float


@dataclass(frozen=True)
class FineSample:
    """Gray words latched by the sampling-matrix groups for one event.

    Group 0 sits at the end of the delay chain, so its view of the oscillator
    is the most advanced; leading rows flip to the next gray state first as
    the fine time sweeps across a plain bin.
    """

    gray_samples: tuple
    group_phase_offsets_ps: tuple


def synthesize_bin_profile(cfg: ChannelConfig) -> BinProfile:
    """Draw a reproducible bin profile for a channel.

    Widths are gamma distributed with mean T/n and coefficient of variation
    cfg.width_dispersion, optionally stretched for a wide-bin share, then
    renormalized so they tile the period.

    Raises
    ------
    ProfileError
        If the requested dispersion/scale drives any width to zero.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.fine_bin_count
    q = cfg.clock_period_ps / n
    if cfg.width_dispersion == 0:
        widths = np.full(n, q)
    else:
        shape = cfg.width_dispersion**-2
        widths = rng.gamma(shape, scale=q / shape, size=n)
    n_wide = int(round(cfg.wide_bin_fraction * n))
    if n_wide:
        wide_idx = rng.choice(n, size=n_wide, replace=False)
        widths[wide_idx] *= cfg.wide_bin_scale
    total = widths.sum()
    if not np.all(widths > 0) or total <= 0:
        raise ProfileError("dispersion/scale produced a nonpositive width")
    widths *= cfg.clock_period_ps / total
    # absorb the renormalization residual (a few ulp) in the last bin
    widths[-1] += cfg.clock_period_ps - widths.sum()
    if not np.all(widths > 0):
        raise ProfileError("dispersion/scale produced a nonpositive width")
    return BinProfile(widths_ps=widths, total_ps=cfg.clock_period_ps)


def capture_timestamp(profile: BinProfile, event_time_ps: float) -> TimestampRecord:
    """Latch one event against the free-running clock.

    The event at time t >= 0 is sampled on the first clock edge after it;
    an event exactly on an edge is held for one full period. The coarse code
    counts whole periods before the sampling edge and the fine time is the
    gap from the event to that edge, in (0, T].
    """
    if event_time_ps < 0:
        raise ValueError("event_time_ps must be >= 0")
    period = profile.total_ps
    coarse = int(event_time_ps // period)
    tau = (coarse + 1) * period - event_time_ps
    # guard the two float-division edge cases so tau stays in (0, T]
    if tau > period:
        coarse -= 1
        tau -= period
    elif tau <= 0:
        coarse += 1
        tau += period
    fine_bin = int(np.searchsorted(profile.edges_ps, tau, side="left")) + 1
    return TimestampRecord(coarse_code=coarse, fine_bin=fine_bin, fine_time_ps=tau)


def reconstruct_interval(rec: TimestampRecord, cfg: ChannelConfig) -> float:
    """Measured interval: (coarse + 1) periods minus the fine time."""
    return (rec.coarse_code + 1) * cfg.clock_period_ps - rec.fine_time_ps


def _locate(profile: BinProfile, cfg: ChannelConfig, fine_time_ps: float):
    """Split a fine time into (plain state, 1-based sub-bin position)."""
    if not 0 < fine_time_ps <= profile.total_ps:
        raise ValueError("fine_time_ps must lie in (0, T]")
    if profile.n != cfg.fine_bin_count:
        raise ConfigError("profile size does not match the channel config")
    k = int(np.searchsorted(profile.edges_ps, fine_time_ps, side="left")) + 1
    state = (k - 1) // cfg.matrix_order
    position = k - state * cfg.matrix_order
    return state, position


def encode_sample_matrix(profile: BinProfile, cfg: ChannelConfig, fine_time_ps: float) -> FineSample:
    """Latch the M sampling-group gray words for one fine time.

    Group g's sampling instant is delayed by the cumulative sub-bin widths
    above boundary g+1 of the local plain bin, so by the time the fine time
    has crossed sub-bin boundary j, exactly j leading groups have already
    seen the oscillator advance to the next gray state.
    """
    m = cfg.matrix_order
    state, position = _locate(profile, cfg, fine_time_ps)
    edges = profile.edges_ps
    base = state * m
    right = edges[base + m - 1]
    offsets = tuple(float(right - edges[base + g]) for g in range(m))
    current = gray_encode(state % GRAY_CYCLE)
    advanced = gray_encode((state + 1) % GRAY_CYCLE)
    words = tuple(advanced if g < position - 1 else current for g in range(m))
    return FineSample(gray_samples=words, group_phase_offsets_ps=offsets)


def decode_sample_matrix(sample: FineSample, cfg: ChannelConfig) -> int:
    """Recover the fine bin from the latched gray words.

    The trailing run of rows carries the plain state; the count of leading
    rows that already show the next state is the sub-bin position. Word sets
    with more than one transition, non-adjacent states or a state outside the
    period are rejected.
    """
    m = cfg.matrix_order
    words = sample.gray_samples
    if len(words) != m:
        raise InvalidSampleError(f"expected {m} gray words, got {len(words)}")
    states = [gray_decode(w) for w in words]
    split = 0
    for g in range(m):
        if states[g] != states[0]:
            split = g
            break
    else:
        split = 0  # all rows agree
    if split:
        tail = states[split]
        if any(s != tail for s in states[split:]):
            raise InvalidSampleError("more than one transition across the groups")
        if states[0] != (tail + 1) % GRAY_CYCLE:
            raise InvalidSampleError("groups latched non-adjacent gray states")
        state = tail
        leading = split
    else:
        state = states[0]
        leading = 0
    if state >= cfg.plain_bin_count:
        raise InvalidSampleError(f"plain state {state} outside the period")
    return state * m + leading + 1


def write_profile_csv(profile: BinProfile, path) -> None:
    """Write one row per bin, full decimal precision (lossless roundtrip)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_index", "width_ps"])
        for i, w in enumerate(profile.widths_ps, start=1):
            writer.writerow([i, repr(float(w))])


def read_profile_csv(path) -> BinProfile:
    """Read a profile written by write_profile_csv."""
    path = Path(path)
    widths = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["bin_index", "width_ps"]:
            raise ProfileError(f"{path}: unexpected header {header}")
        for row in reader:
            if len(row) != 2:
                raise ProfileError(f"{path}: malformed row {row}")
            widths.append(float(row[1]))
    arr = np.asarray(widths, dtype=np.float64)
    return BinProfile(widths_ps=arr, total_ps=float(arr.sum()))
