"""Pure-Python backend for the hot-loop kernels.

Semantics here are the reference; the compiled backend in ``_ckernels.pyx``
must match bit for bit (all float work is sequential IEEE double arithmetic,
all integer work is 64-bit wrapping).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: 64-bit seed in, 64-bit pseudo-random value out."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix2(a: int, b: int) -> int:
    """Combine two 64-bit values into one well-mixed 64-bit key."""
    return splitmix64((splitmix64(a & _MASK64) ^ (b & _MASK64)) & _MASK64)


def uniform_below(key: int, n: int) -> int:
    """Exact uniform draw in [0, n) as a pure function of ``key``.

    Rejection sampling over splitmix64 iterates removes modulo bias, so the
    draw is uniform and reproducible on any platform.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    limit = (2**64 // n) * n
    v = splitmix64(key & _MASK64)
    while v >= limit:
        v = splitmix64(v)
    return v % n


def allocate_chunk(durs, toks, dbounds, tbounds, n_subbins, flexible, tps_threshold):
    """Map a chunk of samples to flat bucket codes.

    ``tbounds`` is a flat row-major array of per-bin token bounds (or None for
    duration-only bucketing).  Returns an int32 array: >= 0 is a flat bucket
    index, negative values are the CODE_* discard constants.
    """
    n = len(durs)
    nbins = len(dbounds)
    out = np.empty(n, dtype=np.int32)
    use_tps = tps_threshold == tps_threshold and tps_threshold > 0  # NaN check
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
        if tbounds is None:
            out[k] = i
            continue
        j = 0
        base = i * n_subbins
        while j < n_subbins and tbounds[base + j] < t:
            j += 1
        if j < n_subbins:
            out[k] = base + j
            continue
        if not flexible:
            out[k] = -2
            continue
        code = -3
        i += 1
        while i < nbins:
            base = i * n_subbins
            j = 0
            while j < n_subbins and tbounds[base + j] < t:
                j += 1
            if j < n_subbins:
                code = base + j
                break
            i += 1
        out[k] = code
    return out


def padding_cells(durs, toks, start, count, pad_in, pad_out):
    """Padded-cell accounting for ``count`` samples starting at ``start``.

    Returns (total_input, padded_input, total_output, padded_output); input
    cells are seconds, output cells are integer token slots.  Padded cells
    accumulate as per-row gaps so a row matching the padded shape
    contributes exactly zero.
    """
    in_gap = 0.0
    out_gap = 0
    for k in range(start, start + count):
        in_gap += pad_in - durs[k]
        out_gap += pad_out - toks[k]
    return count * pad_in, in_gap, count * pad_out, out_gap


def sum_range(vals, start, count):
    """Sequential sum of ``vals[start:start+count]``."""
    acc = 0.0
    for k in range(start, start + count):
        acc += vals[k]
    return acc


def prefix_duration(durs, start, threshold):
    """Length of the shortest prefix of ``durs[start:]`` whose cumulative
    duration reaches ``threshold`` (crossing element included).

    Returns (count, reached); when the whole tail stays below the threshold
    the count covers the tail and ``reached`` is False.
    """
    acc = 0.0
    n = len(durs)
    k = start
    while k < n:
        acc += durs[k]
        k += 1
        if acc >= threshold:
            return k - start, True
    return n - start, False


def greedy_bounds(vals, num_bins):
    """Equal-occupancy greedy binning over sorted values.

    Occupancy is measured as the cumulative sum of the values themselves.
    A bin closes once the running mass reaches total/num_bins, extends
    through ties of the closing value, and carries the surplus into the
    next bin.  The final bound always equals the maximum value.
    """
    n = len(vals)
    if n == 0:
        raise ValueError("empty value array")
    total = 0.0
    for k in range(n):
        total += vals[k]
    last = vals[n - 1]
    if num_bins <= 1 or total <= 0.0:
        return [last]
    target = total / num_bins
    bounds: list[float] = []
    acc = 0.0
    i = 0
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
    if not bounds or bounds[-1] < last:
        bounds.append(last)
    return bounds
