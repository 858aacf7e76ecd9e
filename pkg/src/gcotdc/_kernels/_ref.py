"""Pure-numpy kernel implementations (fallback backend).

Every function mirrors gcotdc._kernels._core bit for bit: the accumulations
are integer and order-independent, so aggregating the code stream into a
histogram first gives results identical to the compiled per-hit loops.
"""
from __future__ import annotations

import numpy as np


def _check_addresses(addr: np.ndarray, n_vir: int, name: str) -> np.ndarray:
    addr = np.ascontiguousarray(addr, dtype=np.int32)
    if addr.size and (addr.min() < 1 or addr.max() > n_vir):
        raise ValueError(f"{name} entries must lie in [1, {n_vir}]")
    return addr


def fine_bins_from_times(edges, taus):
    """Map fine times to 1-indexed bin codes.

    Bin k covers (edges[k-1], edges[k]]; a time landing exactly on a boundary
    stays in the lower bin.
    """
    edges = np.ascontiguousarray(edges, dtype=np.float64)
    taus = np.ascontiguousarray(taus, dtype=np.float64)
    return (np.searchsorted(edges, taus, side="left") + 1).astype(np.uint16)


def count_codes(codes, n):
    """Histogram 1-indexed fine codes into int64 counts of length n.

    Raises ValueError if any code falls outside [1, n].
    """
    codes = np.ascontiguousarray(codes, dtype=np.uint16)
    if codes.size:
        lo = int(codes.min())
        hi = int(codes.max())
        if lo < 1 or hi > n:
            raise ValueError(f"fine code {lo if lo < 1 else hi} outside [1, {n}]")
    return np.bincount(codes.astype(np.int64), minlength=n + 1)[1:].astype(np.int64)


def occurrences_from_codes(codes, addr_l, addr_m, addr_r, n_vir):
    """Count address occurrences: each hit increments its raw bin's three slots by 1."""
    n = len(addr_l)
    hist = count_codes(codes, n)
    occ = np.zeros(n_vir, dtype=np.int64)
    for addr, name in ((addr_l, "addr_l"), (addr_m, "addr_m"), (addr_r, "addr_r")):
        addr = _check_addresses(addr, n_vir, name)
        # bincount weights are float64; totals stay below 2**53 so this is exact
        occ += np.bincount(addr - 1, weights=hist, minlength=n_vir).astype(np.int64)
    return occ


def measure_from_codes(codes, addr_l, addr_m, addr_r, coe_l, coe_m, coe_r, n_vir):
    """Accumulate fixed-point slot weights: acc[addr_s[k]-1] += coe_s[k] per hit.

    The caller is responsible for checking that the totals fit in int64.
    """
    n = len(addr_l)
    hist = count_codes(codes, n)
    acc = np.zeros(n_vir, dtype=np.int64)
    for addr, coe, name in (
        (addr_l, coe_l, "addr_l"),
        (addr_m, coe_m, "addr_m"),
        (addr_r, coe_r, "addr_r"),
    ):
        addr = _check_addresses(addr, n_vir, name)
        coe = np.ascontiguousarray(coe, dtype=np.int64)
        np.add.at(acc, addr - 1, hist * coe)
    return acc
