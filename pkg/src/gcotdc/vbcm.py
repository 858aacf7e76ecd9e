"""Virtual bin calibration: compensation addressing, occurrence accumulation,
width coefficients and histogram replay.

Calibration runs in two density-test passes. Pass 1 locates every raw bin's
cumulative timestamp on the virtual grid and assigns it three virtual
addresses (left, middle, right). Pass 2 counts how often each virtual bin is
addressed; the per-address coefficient hit_vir / occurrences then levels the
replayed histogram at exactly hit_vir hits per virtual bin.
"""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _kernels as kernels
from .channel import BinProfile
from .density import (
    DensityDataset,
    RawHistogram,
    VirtualBinGrid,
    accumulate_raw_histogram,
    cumulative_timestamps,
    generate_uniform_hits,
)
from .errors import CalibrationError, ConfigError, CoverageWarning, DeadAddressError, SaturationError

_CC_MAGIC = b"GCCT"
_CC_VERSION = 1

ROUNDING_MODES = ("floor", "nearest")


@dataclass
class CompensationTable:
    """Three virtual addresses per raw bin (all 1-indexed)."""

    addr_l: np.ndarray
    addr_m: np.ndarray
    addr_r: np.ndarray
    n_vir: int
    coverage_gaps: tuple = ()

    def __post_init__(self):
        self.addr_l = np.ascontiguousarray(self.addr_l, dtype=np.int32)
        self.addr_m = np.ascontiguousarray(self.addr_m, dtype=np.int32)
        self.addr_r = np.ascontiguousarray(self.addr_r, dtype=np.int32)
        if not (self.addr_l.size == self.addr_m.size == self.addr_r.size > 0):
            raise ConfigError("address columns must share a positive length")
        for name, a in (("addr_l", self.addr_l), ("addr_m", self.addr_m), ("addr_r", self.addr_r)):
            if a.min() < 1 or a.max() > self.n_vir:
                raise ConfigError(f"{name} entries must lie in [1, {self.n_vir}]")
        if np.any(self.addr_l > self.addr_m) or np.any(self.addr_m > self.addr_r):
            raise ConfigError("addresses must satisfy addr_l <= addr_m <= addr_r")
        if np.any(self.addr_r - self.addr_l > 3):
            raise ConfigError("a raw bin may span at most addr_l + 3")

    @property
    def n(self) -> int:
        return self.addr_l.size

    @property
    def missing_bin_free(self) -> bool:
        """True when no raw bin overflowed its four-virtual-bin window."""
        return not self.coverage_gaps


@dataclass
class CompensatedHistogram:
    """Occurrence counts per virtual bin; each hit contributes three increments."""

    occurrences: np.ndarray
    n_hits: int

    def __post_init__(self):
        self.occurrences = np.ascontiguousarray(self.occurrences, dtype=np.int64)
        if int(self.occurrences.sum()) != 3 * self.n_hits:
            raise CalibrationError("occurrences must total exactly 3 * n_hits")

    @property
    def n_vir(self) -> int:
        return self.occurrences.size


@dataclass
class CalibrationTable:
    """Per-slot width coefficients, exact and fixed-point.

    coe_*[k] = hit_vir / occurrences[addr_*[k]] as exact rationals;
    coe_*_fx[k] is the same value in 2**-fraction_bits units. occurrences and
    hit_vir are retained for exact-mode replay; tables restored from files
    carry only the dequantized fixed-point values (occurrences is None).
    """

    coe_l: tuple
    coe_m: tuple
    coe_r: tuple
    coe_l_fx: np.ndarray
    coe_m_fx: np.ndarray
    coe_r_fx: np.ndarray
    fraction_bits: int
    hit_vir: Fraction | None = None
    occurrences: np.ndarray | None = None

    def __post_init__(self):
        self.coe_l_fx = np.ascontiguousarray(self.coe_l_fx, dtype=np.int64)
        self.coe_m_fx = np.ascontiguousarray(self.coe_m_fx, dtype=np.int64)
        self.coe_r_fx = np.ascontiguousarray(self.coe_r_fx, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.coe_l_fx.size


@dataclass
class CalibratedHistogram:
    """Replayed histogram in fixed-point units of 2**-fraction_bits."""

    accumulators: np.ndarray
    fraction_bits: int
    n_hits: int

    def __post_init__(self):
        self.accumulators = np.ascontiguousarray(self.accumulators, dtype=np.int64)

    @property
    def n_vir(self) -> int:
        return self.accumulators.size

    @property
    def counts(self) -> np.ndarray:
        """Per-bin hit estimates (accumulators scaled back to hits)."""
        return self.accumulators / float(1 << self.fraction_bits)


def compute_compensation(t_raw: np.ndarray, grid: VirtualBinGrid) -> CompensationTable:
    """Assign each raw bin its (left, middle, right) virtual addresses.

    Walking the raw cumulative timestamps against the virtual grid, each bin
    restarts at the previous bin's highest address (start = 0 before bin 1)
    and takes the first window that holds its timestamp:

        T_raw <= t_vir[start]     -> (start,   start,   start)
        T_raw <= t_vir[start + 1] -> (start,   start+1, start+1)
        T_raw <= t_vir[start + 2] -> (start,   start+1, start+2)
        otherwise                 -> (start+1, start+2, start+3)

    Addresses are clamped into [1, n_vir]. A bin that still exceeds
    t_vir[start + 3] in the last branch spans more than four virtual bins;
    it is recorded as a coverage gap and raises CoverageWarning, and the
    missing-bin-free guarantee is withdrawn.

    Comparisons against the rational grid timestamps m * n_hits / n_vir are
    done in exact integer cross-multiplied form.
    """
    t_raw = np.ascontiguousarray(t_raw, dtype=np.int64)
    if t_raw.ndim != 1 or t_raw.size == 0:
        raise ConfigError("t_raw must be a non-empty 1-d array")
    if t_raw[0] < 0 or np.any(np.diff(t_raw) < 0):
        raise ConfigError("t_raw must be nondecreasing and nonnegative")
    if int(t_raw[-1]) != grid.n_hits:
        raise ConfigError("t_raw and grid disagree on the total hit count")
    n = t_raw.size
    n_vir = grid.n_vir
    total = grid.n_hits
    addr_l = np.empty(n, dtype=np.int32)
    addr_m = np.empty(n, dtype=np.int32)
    addr_r = np.empty(n, dtype=np.int32)
    gaps = []
    start = 0
    for k in range(n):
        # T_raw[k] <= t_vir[m] in exact arithmetic: T_raw[k] * n_vir <= n_hits * m
        lhs = int(t_raw[k]) * n_vir
        if lhs <= total * start:
            l, m, r = start, start, start
        elif lhs <= total * (start + 1):
            l, m, r = start, start + 1, start + 1
        elif lhs <= total * (start + 2):
            l, m, r = start, start + 1, start + 2
        else:
            l, m, r = start + 1, start + 2, start + 3
            if lhs > total * (start + 3):
                gaps.append(k + 1)
                warnings.warn(
                    CoverageWarning(f"raw bin {k + 1} spans more than 4 virtual bins"),
                    stacklevel=2,
                )
        l = min(max(l, 1), n_vir)
        m = min(max(m, 1), n_vir)
        r = min(max(r, 1), n_vir)
        addr_l[k] = l
        addr_m[k] = m
        addr_r[k] = r
        start = r
    return CompensationTable(
        addr_l=addr_l, addr_m=addr_m, addr_r=addr_r, n_vir=n_vir, coverage_gaps=tuple(gaps)
    )


def accumulate_compensated(ds: DensityDataset, table: CompensationTable) -> CompensatedHistogram:
    """Pass-2 accumulation: every hit increments its raw bin's three addresses."""
    if ds.n != table.n:
        raise ConfigError("dataset and compensation table disagree on the bin count")
    occ = kernels.occurrences_from_codes(
        ds.fine_codes, table.addr_l, table.addr_m, table.addr_r, table.n_vir
    )
    return CompensatedHistogram(occurrences=occ, n_hits=ds.n_hits)


def _occurrences_from_hist(hist_counts: np.ndarray, table: CompensationTable) -> np.ndarray:
    """Aggregated form of accumulate_compensated (identical integer result)."""
    occ = np.zeros(table.n_vir, dtype=np.int64)
    for addr in (table.addr_l, table.addr_m, table.addr_r):
        np.add.at(occ, addr - 1, hist_counts)
    return occ


def compute_width_calibration(
    hit_com: CompensatedHistogram,
    table: CompensationTable,
    grid: VirtualBinGrid,
    fraction_bits: int,
    rounding: str = "floor",
) -> CalibrationTable:
    """Derive the per-slot coefficients hit_vir / occurrences.

    The numerator is re-derived from the occurrence total (n_hits = sum / 3),
    so a pass-2 dataset of any size replays to exactly hit_vir per bin. The
    fixed-point image floors (or rounds, per `rounding`) the exact rational
    into 2**-fraction_bits units.
    """
    if hit_com.n_vir != table.n_vir or table.n_vir != grid.n_vir:
        raise ConfigError("hit_com, table and grid disagree on n_vir")
    if not 1 <= fraction_bits <= 32:
        raise ConfigError("fraction_bits must lie in [1, 32]")
    if rounding not in ROUNDING_MODES:
        raise ConfigError(f"rounding must be one of {ROUNDING_MODES}")
    occ = hit_com.occurrences
    n_hits = hit_com.n_hits
    n_vir = grid.n_vir
    hit_vir = Fraction(n_hits, n_vir)
    referenced = np.zeros(n_vir, dtype=bool)
    for addr in (table.addr_l, table.addr_m, table.addr_r):
        referenced[addr - 1] = True
    dead = np.flatnonzero(referenced & (occ == 0)) + 1
    if dead.size:
        raise DeadAddressError(f"referenced virtual bins with zero occurrences: {dead.tolist()}")

    scaled = n_hits << fraction_bits
    occ_list = occ.tolist()

    def fx_for(address: int) -> int:
        den = n_vir * occ_list[address - 1]
        if rounding == "floor":
            return scaled // den
        return (2 * scaled + den) // (2 * den)

    slots_exact = []
    slots_fx = []
    for addr in (table.addr_l, table.addr_m, table.addr_r):
        addr_list = addr.tolist()
        slots_exact.append(tuple(hit_vir / occ_list[a - 1] for a in addr_list))
        slots_fx.append(np.fromiter((fx_for(a) for a in addr_list), dtype=np.int64, count=len(addr_list)))
    return CalibrationTable(
        coe_l=slots_exact[0],
        coe_m=slots_exact[1],
        coe_r=slots_exact[2],
        coe_l_fx=slots_fx[0],
        coe_m_fx=slots_fx[1],
        coe_r_fx=slots_fx[2],
        fraction_bits=fraction_bits,
        hit_vir=hit_vir,
        occurrences=occ.copy(),
    )


def _check_saturation(hist_counts: np.ndarray, cal: CalibrationTable) -> None:
    """Exact-integer bound on the accumulator totals before running the kernels."""
    # sum in Python ints: the per-bin weight alone can overflow int64
    weights = zip(cal.coe_l_fx.tolist(), cal.coe_m_fx.tolist(), cal.coe_r_fx.tolist())
    total = sum(h * (l + m + r) for h, (l, m, r) in zip(hist_counts.tolist(), weights))
    if total >= 1 << 63:
        raise SaturationError("accumulator total would exceed the 64-bit range")


def apply_measurement(
    ds: DensityDataset, comp: CompensationTable, cal: CalibrationTable
) -> CalibratedHistogram:
    """Replay a dataset through the calibration: per hit, the three slot
    weights are added to the three addressed accumulators."""
    if ds.n != comp.n or comp.n != cal.n:
        raise ConfigError("dataset, compensation and calibration sizes disagree")
    hist = kernels.count_codes(ds.fine_codes, ds.n)
    _check_saturation(hist, cal)
    acc = kernels.measure_from_codes(
        ds.fine_codes,
        comp.addr_l,
        comp.addr_m,
        comp.addr_r,
        cal.coe_l_fx,
        cal.coe_m_fx,
        cal.coe_r_fx,
        comp.n_vir,
    )
    return CalibratedHistogram(accumulators=acc, fraction_bits=cal.fraction_bits, n_hits=ds.n_hits)


def apply_measurement_hist(
    hist: RawHistogram, comp: CompensationTable, cal: CalibrationTable
) -> CalibratedHistogram:
    """Aggregated replay from a raw histogram (identical to apply_measurement)."""
    if hist.n != comp.n or comp.n != cal.n:
        raise ConfigError("histogram, compensation and calibration sizes disagree")
    _check_saturation(hist.counts, cal)
    acc = np.zeros(comp.n_vir, dtype=np.int64)
    for addr, coe in (
        (comp.addr_l, cal.coe_l_fx),
        (comp.addr_m, cal.coe_m_fx),
        (comp.addr_r, cal.coe_r_fx),
    ):
        np.add.at(acc, addr - 1, hist.counts * coe)
    return CalibratedHistogram(
        accumulators=acc, fraction_bits=cal.fraction_bits, n_hits=hist.n_hits
    )


def apply_measurement_exact(
    ds: DensityDataset, comp: CompensationTable, cal: CalibrationTable
) -> tuple:
    """Exact-rational replay: per-bin counts as Fractions.

    Every contribution landing on virtual bin i carries the same weight
    hit_vir / occurrences[i], so the exact count is that weight times the
    measured occurrence count; this equals the literal per-hit rational sum.
    """
    if cal.occurrences is None or cal.hit_vir is None:
        raise CalibrationError("exact replay needs a table with retained occurrences")
    if ds.n != comp.n or comp.n != cal.n:
        raise ConfigError("dataset, compensation and calibration sizes disagree")
    occ_meas = kernels.occurrences_from_codes(
        ds.fine_codes, comp.addr_l, comp.addr_m, comp.addr_r, comp.n_vir
    )
    hit_vir = cal.hit_vir
    occ_cal = cal.occurrences.tolist()
    return tuple(
        hit_vir * int(o) / occ_cal[i] if occ_cal[i] else Fraction(0)
        for i, o in enumerate(occ_meas.tolist())
    )


def calibrate_channel(
    profile: BinProfile,
    grid: VirtualBinGrid,
    n_hits_pass1: int,
    n_hits_pass2: int,
    fraction_bits: int,
    seeds: tuple,
    rounding: str = "floor",
):
    """Full two-pass calibration of one channel.

    Returns (CompensationTable, CalibrationTable). The grid must be built for
    the pass-1 hit count. Passing the same seed and hit count for both passes
    reproduces the same-dataset replay mode used by the conservation checks.
    """
    if grid.n_hits != n_hits_pass1:
        raise ConfigError("grid must be built for the pass-1 hit count")
    if grid.n != profile.n:
        raise ConfigError("grid and profile disagree on the raw bin count")
    seed1, seed2 = seeds
    ds1 = generate_uniform_hits(profile, n_hits_pass1, seed1)
    t_raw = cumulative_timestamps(accumulate_raw_histogram(ds1))
    comp = compute_compensation(t_raw, grid)
    ds2 = generate_uniform_hits(profile, n_hits_pass2, seed2)
    hit_com = accumulate_compensated(ds2, comp)
    cal = compute_width_calibration(hit_com, comp, grid, fraction_bits, rounding)
    return comp, cal


def write_cc_table_csv(comp: CompensationTable, cal: CalibrationTable, path) -> None:
    """Merged compensation-and-calibration table, one row per raw bin."""
    if comp.n != cal.n:
        raise ConfigError("compensation and calibration sizes disagree")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "addr_l", "addr_m", "addr_r", "coe_l_fx", "coe_m_fx", "coe_r_fx", "mbar"])
        for k in range(comp.n):
            writer.writerow(
                [
                    k + 1,
                    int(comp.addr_l[k]),
                    int(comp.addr_m[k]),
                    int(comp.addr_r[k]),
                    int(cal.coe_l_fx[k]),
                    int(cal.coe_m_fx[k]),
                    int(cal.coe_r_fx[k]),
                    cal.fraction_bits,
                ]
            )


def _tables_from_columns(addr_cols, fx_cols, mbar: int):
    addr_l, addr_m, addr_r = (np.asarray(c, dtype=np.int32) for c in addr_cols)
    # the final raw bin always reaches the top of the grid, so the largest
    # address recovers n_vir
    n_vir = int(addr_r.max())
    comp = CompensationTable(addr_l=addr_l, addr_m=addr_m, addr_r=addr_r, n_vir=n_vir)
    fx_l, fx_m, fx_r = (np.asarray(c, dtype=np.int64) for c in fx_cols)
    scale = 1 << mbar
    cal = CalibrationTable(
        coe_l=tuple(Fraction(int(v), scale) for v in fx_l),
        coe_m=tuple(Fraction(int(v), scale) for v in fx_m),
        coe_r=tuple(Fraction(int(v), scale) for v in fx_r),
        coe_l_fx=fx_l,
        coe_m_fx=fx_m,
        coe_r_fx=fx_r,
        fraction_bits=mbar,
    )
    return comp, cal


def read_cc_table_csv(path):
    """Restore (CompensationTable, CalibrationTable) written by write_cc_table_csv.

    The fixed-point columns are authoritative; exact rationals and the
    coverage status are not persisted.
    """
    path = Path(path)
    cols = [[] for _ in range(6)]
    mbar = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["k", "addr_l", "addr_m", "addr_r", "coe_l_fx", "coe_m_fx", "coe_r_fx", "mbar"]
        if header != expected:
            raise ConfigError(f"{path}: unexpected header {header}")
        for idx, row in enumerate(reader, start=1):
            if len(row) != 8 or int(row[0]) != idx:
                raise ConfigError(f"{path}: malformed row {row}")
            for j in range(6):
                cols[j].append(int(row[j + 1]))
            row_mbar = int(row[7])
            if mbar is None:
                mbar = row_mbar
            elif mbar != row_mbar:
                raise ConfigError(f"{path}: inconsistent mbar column")
    if mbar is None:
        raise ConfigError(f"{path}: empty table")
    return _tables_from_columns(cols[:3], cols[3:], mbar)


def write_cc_table_bin(comp: CompensationTable, cal: CalibrationTable, path) -> None:
    """Binary C&C table: 12-byte header, then one packed record per raw bin."""
    if comp.n != cal.n:
        raise ConfigError("compensation and calibration sizes disagree")
    rec = struct.Struct("<HHHxx3Q")
    with open(path, "wb") as fh:
        fh.write(_CC_MAGIC)
        fh.write(struct.pack("<HHHBx", _CC_VERSION, comp.n, comp.n_vir, cal.fraction_bits))
        for k in range(comp.n):
            fh.write(
                rec.pack(
                    int(comp.addr_l[k]),
                    int(comp.addr_m[k]),
                    int(comp.addr_r[k]),
                    int(cal.coe_l_fx[k]),
                    int(cal.coe_m_fx[k]),
                    int(cal.coe_r_fx[k]),
                )
            )


def read_cc_table_bin(path):
    """Restore (CompensationTable, CalibrationTable) written by write_cc_table_bin."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != _CC_MAGIC:
        raise ConfigError(f"{path}: not a C&C table")
    version, n, n_vir, mbar = struct.unpack("<HHHB", raw[4:11])
    if version != _CC_VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    rec = struct.Struct("<HHHxx3Q")
    if len(raw) != 12 + n * rec.size:
        raise ConfigError(f"{path}: truncated table")
    addr_cols = [[], [], []]
    fx_cols = [[], [], []]
    for k in range(n):
        vals = rec.unpack_from(raw, 12 + k * rec.size)
        for j in range(3):
            addr_cols[j].append(vals[j])
            fx_cols[j].append(vals[3 + j])
    comp, cal = _tables_from_columns(addr_cols, fx_cols, mbar)
    if comp.n_vir != n_vir:
        comp = CompensationTable(
            addr_l=comp.addr_l, addr_m=comp.addr_m, addr_r=comp.addr_r, n_vir=n_vir
        )
    return comp, cal
