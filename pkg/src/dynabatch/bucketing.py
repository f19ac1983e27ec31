"""Bucket bin estimation and sample-to-bucket allocation.

Buckets stratify on input duration, optionally sub-stratified on output
token count (a 2D spec).  Bins are estimated for equal occupancy: duration
bins balance cumulative seconds, token sub-bins balance cumulative tokens
within their duration bin.  Flat bucket (i, j) has index i * S + j where S
is the sub-bin count.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from . import _kernels as K
from .datamodel import Sample

log = logging.getLogger(__name__)


class EstimationError(ValueError):
    """Raised when bucket bins cannot be estimated."""


class DiscardReason(enum.Enum):
    EXCEEDS_MAX_DURATION = "exceeds-max-duration"
    EXCEEDS_TOKEN_BOUND_STRICT = "exceeds-token-bound-strict"
    EXCEEDS_ALL_BUCKETS_FLEXIBLE = "exceeds-all-buckets-flexible"
    TPS_FILTERED = "tps-filtered"


_CODE_TO_REASON = {
    K.CODE_EXCEEDS_MAX_DURATION: DiscardReason.EXCEEDS_MAX_DURATION,
    K.CODE_EXCEEDS_TOKEN_BOUND_STRICT: DiscardReason.EXCEEDS_TOKEN_BOUND_STRICT,
    K.CODE_EXCEEDS_ALL_BUCKETS_FLEXIBLE: DiscardReason.EXCEEDS_ALL_BUCKETS_FLEXIBLE,
    K.CODE_TPS_FILTERED: DiscardReason.TPS_FILTERED,
}


@dataclass(frozen=True, slots=True)
class Allocation:
    """Outcome of mapping one sample to a bucket: assigned or discarded."""

    bucket_index: Optional[int]
    reason: Optional[DiscardReason]

    @property
    def assigned(self) -> bool:
        return self.bucket_index is not None

    @classmethod
    def assign(cls, index: int) -> "Allocation":
        return cls(bucket_index=index, reason=None)

    @classmethod
    def discard(cls, reason: DiscardReason) -> "Allocation":
        return cls(bucket_index=None, reason=reason)

    @classmethod
    def from_code(cls, code: int) -> "Allocation":
        if code >= 0:
            return cls.assign(int(code))
        return cls.discard(_CODE_TO_REASON[int(code)])


@dataclass(frozen=True)
class BucketSpec:
    """Ordered duration bins with optional per-bin token sub-bins.

    ``duration_bounds`` are strictly increasing upper bounds in seconds; the
    last bound is the maximum admissible duration.  ``token_bounds``, when
    present, holds one strictly increasing token bound list per duration bin,
    all of equal length.
    """

    duration_bounds: Tuple[float, ...]
    token_bounds: Optional[Tuple[Tuple[int, ...], ...]] = None

    def __post_init__(self) -> None:
        if not self.duration_bounds:
            raise ValueError("duration_bounds must be non-empty")
        prev = 0.0
        for b in self.duration_bounds:
            if b <= prev:
                raise ValueError("duration_bounds must be strictly increasing and positive")
            prev = b
        if self.token_bounds is not None:
            if len(self.token_bounds) != len(self.duration_bounds):
                raise ValueError("token_bounds must have one row per duration bin")
            widths = {len(row) for row in self.token_bounds}
            if len(widths) != 1 or 0 in widths:
                raise ValueError("token bound rows must be non-empty and equally sized")
            for row in self.token_bounds:
                prev_t = -1
                for t in row:
                    if t < 0 or t <= prev_t:
                        raise ValueError("token bounds must be non-negative and strictly increasing")
                    prev_t = t

    @property
    def num_duration_bins(self) -> int:
        return len(self.duration_bounds)

    @property
    def num_subbins(self) -> int:
        return len(self.token_bounds[0]) if self.token_bounds else 1

    @property
    def num_flat(self) -> int:
        return self.num_duration_bins * self.num_subbins

    @property
    def max_duration(self) -> float:
        return self.duration_bounds[-1]

    def corner(self, flat_index: int) -> Tuple[float, Optional[int]]:
        """Upper-bound (duration, tokens) corner of a flat bucket."""
        if not 0 <= flat_index < self.num_flat:
            raise IndexError(f"flat bucket {flat_index} out of range")
        i, j = divmod(flat_index, self.num_subbins)
        tok = self.token_bounds[i][j] if self.token_bounds else None
        return self.duration_bounds[i], tok

    def to_arrays(self) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Bounds as (float64 duration array, flat int64 token array or None)."""
        db = np.asarray(self.duration_bounds, dtype=np.float64)
        if self.token_bounds is None:
            return db, None
        tb = np.asarray(self.token_bounds, dtype=np.int64).reshape(-1)
        return db, tb


def allocate_codes(
    durs: np.ndarray,
    toks: np.ndarray,
    spec: BucketSpec,
    flexible: bool,
    tps_threshold: Optional[float] = None,
) -> np.ndarray:
    """Vectorized allocation of many samples; returns flat codes per sample."""
    db, tb = spec.to_arrays()
    thr = float("nan") if tps_threshold is None else float(tps_threshold)
    return K.allocate_chunk(durs, toks, db, tb, spec.num_subbins, flexible, thr)


def _allocate_one(sample: Sample, spec: BucketSpec, flexible: bool) -> Allocation:
    durs = np.array([sample.input_len], dtype=np.float64)
    toks = np.array([sample.output_len], dtype=np.int64)
    code = allocate_codes(durs, toks, spec, flexible)[0]
    return Allocation.from_code(int(code))


def allocate_strict(sample: Sample, spec: BucketSpec) -> Allocation:
    """Two-stage lookup: duration bin first, then token sub-bin within it.

    A sample whose token count exceeds every sub-bin of its duration bin is
    discarded.
    """
    return _allocate_one(sample, spec, flexible=False)


def allocate_flexible(sample: Sample, spec: BucketSpec) -> Allocation:
    """Smallest bucket that fits both axes.

    Smallest is ordered by (duration bound, token bound, bin, sub-bin); a
    token outlier may land in a longer-duration bucket instead of being
    discarded, trading input padding for coverage.
    """
    return _allocate_one(sample, spec, flexible=True)


def _merged(bounds: list[float]) -> list[float]:
    out: list[float] = []
    for b in bounds:
        if out and b == out[-1]:
            continue
        out.append(b)
    dropped = len(bounds) - len(out)
    if dropped:
        log.warning("merged %d duplicate bucket bounds (degenerate population)", dropped)
    return out


def estimate_duration_bins(samples: Iterable[Sample], num_buckets: int) -> BucketSpec:
    """Estimate 1D duration bins balancing cumulative seconds per bin.

    May return fewer bins than requested when duplicate bounds merge.
    """
    if num_buckets < 1:
        raise EstimationError("num_buckets must be >= 1")
    durs = np.asarray(sorted(s.input_len for s in samples), dtype=np.float64)
    if durs.size == 0:
        raise EstimationError("cannot estimate bins from an empty sample stream")
    bounds = _merged(K.greedy_bounds(durs, num_buckets))
    return BucketSpec(duration_bounds=tuple(bounds))


def _strict_subbins(values: list[int], num_subbins: int) -> Tuple[int, ...]:
    """Equal-token-occupancy sub-bounds, padded to a strictly increasing
    row of exactly ``num_subbins`` entries."""
    arr = np.asarray(sorted(values), dtype=np.float64)
    raw = [int(round(b)) for b in K.greedy_bounds(arr, num_subbins)]
    row: list[int] = []
    for b in raw:
        row.append(b if not row or b > row[-1] else row[-1] + 1)
    while len(row) < num_subbins:
        row.append(row[-1] + 1)
    return tuple(row)


def estimate_token_subbins(
    samples: Iterable[Sample], spec1d: BucketSpec, num_subbins: int
) -> BucketSpec:
    """Sub-divide each duration bin into token sub-bins of equal token mass.

    Duration bins left empty by the sample stream inherit the sub-bounds of
    the nearest non-empty bin below them (or above, for leading bins).
    """
    if spec1d.token_bounds is not None:
        raise EstimationError("spec1d must be a pure 1D spec")
    if num_subbins < 1:
        raise EstimationError("num_subbins must be >= 1")
    db, _ = spec1d.to_arrays()
    members: list[list[int]] = [[] for _ in range(spec1d.num_duration_bins)]
    for s in samples:
        i = int(np.searchsorted(db, s.input_len, side="left"))
        if i < len(members):
            members[i].append(s.output_len)

    rows: list[Optional[Tuple[int, ...]]] = [
        _strict_subbins(vals, num_subbins) if vals else None for vals in members
    ]
    last: Optional[Tuple[int, ...]] = None
    for i, row in enumerate(rows):
        if row is not None:
            last = row
        elif last is not None:
            rows[i] = last
    nxt: Optional[Tuple[int, ...]] = None
    for i in range(len(rows) - 1, -1, -1):
        if rows[i] is not None:
            nxt = rows[i]
        else:
            rows[i] = nxt
    if any(row is None for row in rows):
        raise EstimationError("no samples fall inside the 1D spec")
    return BucketSpec(
        duration_bounds=spec1d.duration_bounds,
        token_bounds=tuple(rows),  # type: ignore[arg-type]
    )


SPEC_HEADER = "dynabatch-bucketspec v1"


def spec_to_text(spec: BucketSpec) -> str:
    """Serialize a BucketSpec to its canonical text document."""
    lines = [
        SPEC_HEADER,
        f"duration_bins {spec.num_duration_bins}",
        f"token_subbins {spec.num_subbins if spec.token_bounds else 'none'}",
    ]
    for i, b in enumerate(spec.duration_bounds):
        row = repr(float(b))
        if spec.token_bounds:
            row += " " + " ".join(str(t) for t in spec.token_bounds[i])
        lines.append(row)
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> BucketSpec:
    """Parse the canonical BucketSpec text document."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SPEC_HEADER:
        raise ValueError(f"not a bucket spec document (expected {SPEC_HEADER!r})")
    try:
        nbins = int(lines[1].split()[1])
        sub_field = lines[2].split()[1]
        nsub = None if sub_field == "none" else int(sub_field)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed bucket spec header: {exc}") from exc
    rows = lines[3:]
    if len(rows) != nbins:
        raise ValueError(f"expected {nbins} bound rows, found {len(rows)}")
    dbounds: list[float] = []
    tbounds: list[Tuple[int, ...]] = []
    for row in rows:
        parts = row.split()
        dbounds.append(float(parts[0]))
        if nsub is not None:
            toks = tuple(int(p) for p in parts[1:])
            if len(toks) != nsub:
                raise ValueError(f"expected {nsub} token bounds per row, got {len(toks)}")
            tbounds.append(toks)
    return BucketSpec(
        duration_bounds=tuple(dbounds),
        token_bounds=tuple(tbounds) if nsub is not None else None,
    )
