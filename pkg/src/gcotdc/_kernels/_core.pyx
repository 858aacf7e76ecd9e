# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-hit kernels: fine-bin capture, code histograms and the
three-slot calibration accumulators. Semantics match _ref exactly."""

import numpy as np


def fine_bins_from_times(edges, taus):
    """Map fine times to 1-indexed bin codes; boundary hits stay in the lower bin."""
    cdef double[::1] e = np.ascontiguousarray(edges, dtype=np.float64)
    cdef double[::1] t = np.ascontiguousarray(taus, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0]
    cdef Py_ssize_t m = t.shape[0]
    out_arr = np.empty(m, dtype=np.uint16)
    cdef unsigned short[::1] out = out_arr
    cdef Py_ssize_t i, lo, hi, mid
    cdef double v
    with nogil:
        for i in range(m):
            v = t[i]
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) >> 1
                if e[mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
            out[i] = <unsigned short> (lo + 1)
    return out_arr


def count_codes(codes, n):
    """Histogram 1-indexed fine codes into int64 counts of length n."""
    cdef unsigned short[::1] c = np.ascontiguousarray(codes, dtype=np.uint16)
    cdef Py_ssize_t nn = n
    out_arr = np.zeros(nn, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i, m = c.shape[0]
    cdef unsigned short v
    cdef long long bad = -1
    with nogil:
        for i in range(m):
            v = c[i]
            if v < 1 or v > nn:
                bad = v
                break
            out[v - 1] += 1
    if bad >= 0:
        raise ValueError(f"fine code {bad} outside [1, {n}]")
    return out_arr


cdef int _check_addr(int[::1] addr, Py_ssize_t n_vir) nogil:
    cdef Py_ssize_t k
    for k in range(addr.shape[0]):
        if addr[k] < 1 or addr[k] > n_vir:
            return 0
    return 1


def occurrences_from_codes(codes, addr_l, addr_m, addr_r, n_vir):
    """Count address occurrences: each hit increments its raw bin's three slots by 1."""
    cdef unsigned short[::1] c = np.ascontiguousarray(codes, dtype=np.uint16)
    cdef int[::1] al = np.ascontiguousarray(addr_l, dtype=np.int32)
    cdef int[::1] am = np.ascontiguousarray(addr_m, dtype=np.int32)
    cdef int[::1] ar = np.ascontiguousarray(addr_r, dtype=np.int32)
    cdef Py_ssize_t n = al.shape[0]
    cdef Py_ssize_t nv = n_vir
    if not (_check_addr(al, nv) and _check_addr(am, nv) and _check_addr(ar, nv)):
        raise ValueError(f"address entries must lie in [1, {n_vir}]")
    occ_arr = np.zeros(nv, dtype=np.int64)
    cdef long long[::1] occ = occ_arr
    cdef Py_ssize_t i, m = c.shape[0]
    cdef unsigned short v
    cdef long long bad = -1
    with nogil:
        for i in range(m):
            v = c[i]
            if v < 1 or v > n:
                bad = v
                break
            occ[al[v - 1] - 1] += 1
            occ[am[v - 1] - 1] += 1
            occ[ar[v - 1] - 1] += 1
    if bad >= 0:
        raise ValueError(f"fine code {bad} outside [1, {n}]")
    return occ_arr


def measure_from_codes(codes, addr_l, addr_m, addr_r, coe_l, coe_m, coe_r, n_vir):
    """Accumulate fixed-point slot weights: acc[addr_s[k]-1] += coe_s[k] per hit.

    The caller is responsible for checking that the totals fit in int64.
    """
    cdef unsigned short[::1] c = np.ascontiguousarray(codes, dtype=np.uint16)
    cdef int[::1] al = np.ascontiguousarray(addr_l, dtype=np.int32)
    cdef int[::1] am = np.ascontiguousarray(addr_m, dtype=np.int32)
    cdef int[::1] ar = np.ascontiguousarray(addr_r, dtype=np.int32)
    cdef long long[::1] wl = np.ascontiguousarray(coe_l, dtype=np.int64)
    cdef long long[::1] wm = np.ascontiguousarray(coe_m, dtype=np.int64)
    cdef long long[::1] wr = np.ascontiguousarray(coe_r, dtype=np.int64)
    cdef Py_ssize_t n = al.shape[0]
    cdef Py_ssize_t nv = n_vir
    if not (_check_addr(al, nv) and _check_addr(am, nv) and _check_addr(ar, nv)):
        raise ValueError(f"address entries must lie in [1, {n_vir}]")
    acc_arr = np.zeros(nv, dtype=np.int64)
    cdef long long[::1] acc = acc_arr
    cdef Py_ssize_t i, m = c.shape[0]
    cdef unsigned short v
    cdef long long bad = -1
    with nogil:
        for i in range(m):
            v = c[i]
            if v < 1 or v > n:
                bad = v
                break
            acc[al[v - 1] - 1] += wl[v - 1]
            acc[am[v - 1] - 1] += wm[v - 1]
            acc[ar[v - 1] - 1] += wr[v - 1]
    if bad >= 0:
        raise ValueError(f"fine code {bad} outside [1, {n}]")
    return acc_arr
