# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the hot-loop kernels.

Bit-for-bit equivalent to ``_pykernels``: same sequential IEEE double
arithmetic, same 64-bit integer mixing.
"""

import numpy as np

from libc.math cimport isnan

BACKEND = "cython"

cdef extern from *:
    """
    #include <stdint.h>

    static uint64_t db_splitmix64(uint64_t x) {
        uint64_t z = x + 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    """
    unsigned long long db_splitmix64(unsigned long long x) nogil


def splitmix64(x):
    """One splitmix64 step: 64-bit seed in, 64-bit pseudo-random value out."""
    return int(db_splitmix64(<unsigned long long> (x & 0xFFFFFFFFFFFFFFFF)))


def mix2(a, b):
    """Combine two 64-bit values into one well-mixed 64-bit key."""
    cdef unsigned long long ua = <unsigned long long> (a & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long ub = <unsigned long long> (b & 0xFFFFFFFFFFFFFFFF)
    return int(db_splitmix64(db_splitmix64(ua) ^ ub))


def uniform_below(key, n):
    """Exact uniform draw in [0, n) as a pure function of ``key``."""
    if n <= 0:
        raise ValueError("n must be positive")
    cdef unsigned long long un = <unsigned long long> n
    # remainder of 2**64 mod n without leaving 64 bits; when it is zero the
    # raw draw is already uniform and no rejection happens
    cdef unsigned long long rem = ((<unsigned long long> 0xFFFFFFFFFFFFFFFF) % un + 1) % un
    cdef unsigned long long limit = (<unsigned long long> 0) - rem
    cdef unsigned long long v = db_splitmix64(<unsigned long long> (key & 0xFFFFFFFFFFFFFFFF))
    if rem != 0:
        while v >= limit:
            v = db_splitmix64(v)
    return int(v % un)


def allocate_chunk(double[:] durs, long long[:] toks, double[:] dbounds,
                   tbounds, Py_ssize_t n_subbins, bint flexible, double tps_threshold):
    """Map a chunk of samples to flat bucket codes (see _pykernels)."""
    cdef Py_ssize_t n = durs.shape[0]
    cdef Py_ssize_t nbins = dbounds.shape[0]
    out_arr = np.empty(n, dtype=np.int32)
    cdef int[:] out = out_arr
    cdef long long[:] tb
    cdef bint has_tb = tbounds is not None
    if has_tb:
        tb = tbounds
    cdef bint use_tps = (not isnan(tps_threshold)) and tps_threshold > 0
    cdef Py_ssize_t k, i, j, base
    cdef double d
    cdef long long t
    cdef int code
    for k in range(n):
        d = durs[k]
        t = toks[k]
        if use_tps and t / d > tps_threshold:
            out[k] = -4
            continue
        i = 0
        while i < nbins and dbounds[i] < d:
            i += 1
        if i == nbins:
            out[k] = -3 if flexible else -1
            continue
        if not has_tb:
            out[k] = <int> i
            continue
        base = i * n_subbins
        j = 0
        while j < n_subbins and tb[base + j] < t:
            j += 1
        if j < n_subbins:
            out[k] = <int> (base + j)
            continue
        if not flexible:
            out[k] = -2
            continue
        code = -3
        i += 1
        while i < nbins:
            base = i * n_subbins
            j = 0
            while j < n_subbins and tb[base + j] < t:
                j += 1
            if j < n_subbins:
                code = <int> (base + j)
                break
            i += 1
        out[k] = code
    return out_arr


def padding_cells(double[:] durs, long long[:] toks, Py_ssize_t start,
                  Py_ssize_t count, double pad_in, long long pad_out):
    """Padded-cell accounting via per-row gaps (see _pykernels)."""
    cdef double in_gap = 0.0
    cdef long long out_gap = 0
    cdef Py_ssize_t k
    for k in range(start, start + count):
        in_gap += pad_in - durs[k]
        out_gap += pad_out - toks[k]
    return count * pad_in, in_gap, count * pad_out, out_gap


def sum_range(double[:] vals, Py_ssize_t start, Py_ssize_t count):
    """Sequential sum of ``vals[start:start+count]``."""
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(start, start + count):
        acc += vals[k]
    return acc


def prefix_duration(double[:] durs, Py_ssize_t start, double threshold):
    """Shortest prefix of ``durs[start:]`` reaching ``threshold``."""
    cdef double acc = 0.0
    cdef Py_ssize_t n = durs.shape[0]
    cdef Py_ssize_t k = start
    while k < n:
        acc += durs[k]
        k += 1
        if acc >= threshold:
            return k - start, True
    return n - start, False


def greedy_bounds(double[:] vals, Py_ssize_t num_bins):
    """Equal-occupancy greedy binning over sorted values (see _pykernels)."""
    cdef Py_ssize_t n = vals.shape[0]
    if n == 0:
        raise ValueError("empty value array")
    cdef double total = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        total += vals[k]
    cdef double last = vals[n - 1]
    if num_bins <= 1 or total <= 0.0:
        return [last]
    cdef double target = total / num_bins
    bounds = []
    cdef double acc = 0.0
    cdef double v
    cdef Py_ssize_t i = 0
    while i < n:
        if len(bounds) == num_bins - 1:
            bounds.append(last)
            return bounds
        acc += vals[i]
        if acc >= target:
            v = vals[i]
            while i + 1 < n and vals[i + 1] == v:
                i += 1
                acc += vals[i]
            bounds.append(v)
            acc -= target
        i += 1
    if not bounds or bounds[len(bounds) - 1] < last:
        bounds.append(last)
    return bounds
