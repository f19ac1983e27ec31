"""Per-bucket batch size calibration against an analytic memory model.

Each bucket is calibrated at its upper-bound corner (the worst shape it can
admit), so batches drawn under the calibrated sizes never exceed the memory
budget.  The search doubles until infeasible, then bisects, using
O(log max_batch) model evaluations per bucket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Tuple

from .bucketing import BucketSpec
from .datamodel import MiniBatch


class CalibrationError(RuntimeError):
    """Raised when a bucket cannot fit even a single sample."""


@dataclass(frozen=True, slots=True)
class MemoryModel:
    """Polynomial memory surrogate.

    m(B, Tin, Tout) = c0 + B * (c1*Tin + c2*Tin^2 + c3*Tout + c4*Tout^2
    + c5*Tin*Tout), in fixed but arbitrary units.  Quadratic terms capture
    attention's super-linear growth with sequence length.
    """

    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0

    def __post_init__(self) -> None:
        coeffs = (self.c0, self.c1, self.c2, self.c3, self.c4, self.c5)
        if any(c < 0 for c in coeffs):
            raise ValueError("memory model coefficients must be non-negative")
        if all(c == 0 for c in coeffs[1:]):
            raise ValueError("at least one per-sample coefficient must be positive")

    def __call__(self, batch_size: float, t_in: float, t_out: float) -> float:
        return self.c0 + batch_size * (
            self.c1 * t_in
            + self.c2 * t_in * t_in
            + self.c3 * t_out
            + self.c4 * t_out * t_out
            + self.c5 * t_in * t_out
        )


# Reference models.  TRANSFORMER_LIKE reads in MB with Tin in seconds and
# Tout in tokens: ~4 GB fixed state plus linear and quadratic per-sample
# terms on both axes; it pairs with DEFAULT_MEMORY_CAPACITY below (a 48 GB
# class budget).  LINEAR_INPUT is the closed-form-checkable model used by
# oracle tests.
TRANSFORMER_LIKE = MemoryModel(c0=4000.0, c1=10.0, c2=0.1, c3=0.7, c4=0.0006, c5=0.008)
LINEAR_INPUT = MemoryModel(c1=1.0)

DEFAULT_MEMORY_CAPACITY = 48_000.0
DEFAULT_MAX_BATCH = 2**16


@dataclass(frozen=True)
class BucketBatchSizes:
    """Calibrated batch size for every flat bucket of a spec."""

    sizes: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("batch sizes must be positive for every bucket")

    def __getitem__(self, flat_index: int) -> int:
        return self.sizes[flat_index]

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def max_size(self) -> int:
        return max(self.sizes)

    def as_mapping(self) -> Mapping[int, int]:
        return dict(enumerate(self.sizes))


def _max_feasible(
    model: MemoryModel, capacity: float, t_in: float, t_out: float, max_batch: int
) -> int:
    """Largest B <= max_batch with m(B) <= capacity, or 0 when B=1 fails."""
    if model(1, t_in, t_out) > capacity:
        return 0
    lo = 1
    hi = 1
    while hi < max_batch and model(hi * 2, t_in, t_out) <= capacity:
        hi *= 2
    hi = min(hi * 2, max_batch)
    if model(hi, t_in, t_out) <= capacity:
        return hi
    # invariant: m(lo) <= capacity < m(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if model(mid, t_in, t_out) <= capacity:
            lo = mid
        else:
            hi = mid
    return lo


def oomptimize(
    spec: BucketSpec,
    model: MemoryModel,
    capacity: float,
    max_batch: int = DEFAULT_MAX_BATCH,
) -> BucketBatchSizes:
    """Calibrate the maximal safe batch size for every flat bucket.

    The returned size B satisfies m(B, Tin*, Tout*) <= capacity and either
    B == max_batch or m(B+1) > capacity, where (Tin*, Tout*) is the bucket's
    corner.  Requires a spec with token bounds (the corner needs both axes).
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if max_batch < 1:
        raise ValueError("max_batch must be >= 1")
    if spec.token_bounds is None:
        raise CalibrationError(
            "spec has no token bounds; estimate sub-bins (>= 1) before calibration"
        )
    sizes: list[int] = []
    for flat in range(spec.num_flat):
        t_in, t_out = spec.corner(flat)
        best = _max_feasible(model, capacity, t_in, float(t_out), max_batch)
        if best == 0:
            raise CalibrationError(
                f"bucket {flat} (duration {t_in}s, tokens {t_out}) too large for "
                f"capacity {capacity}"
            )
        sizes.append(best)
    return BucketBatchSizes(sizes=tuple(sizes))


@dataclass(frozen=True, slots=True)
class MemoryTrace:
    """Per-step memory values with summary statistics."""

    values: Tuple[float, ...]
    max: float
    mean: float
    cv: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "MemoryTrace":
        vals = tuple(values)
        if not vals:
            nan = math.nan
            return cls(values=(), max=nan, mean=nan, cv=nan)
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        cv = math.sqrt(var) / mean if mean > 0 else math.nan
        return cls(values=vals, max=max(vals), mean=mean, cv=cv)


def memory_trace(batches: Iterable[MiniBatch], model: MemoryModel) -> MemoryTrace:
    """Evaluate the memory model on each batch's padded shape."""
    return MemoryTrace.from_values(
        [model(len(b), b.max_input, b.max_output) for b in batches]
    )


SIZES_HEADER = "dynabatch-bucketsizes v1"


def sizes_to_text(sizes: BucketBatchSizes) -> str:
    """Serialize calibrated sizes to their canonical text document."""
    lines = [SIZES_HEADER, f"flat_buckets {len(sizes)}"]
    lines.extend(f"{i} {s}" for i, s in enumerate(sizes.sizes))
    return "\n".join(lines) + "\n"


def sizes_from_text(text: str) -> BucketBatchSizes:
    """Parse the canonical BucketBatchSizes text document."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SIZES_HEADER:
        raise ValueError(f"not a bucket sizes document (expected {SIZES_HEADER!r})")
    try:
        count = int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed bucket sizes header: {exc}") from exc
    rows = lines[2:]
    if len(rows) != count:
        raise ValueError(f"expected {count} size rows, found {len(rows)}")
    sizes = [0] * count
    for row in rows:
        idx_s, size_s = row.split()
        sizes[int(idx_s)] = int(size_s)
    return BucketBatchSizes(sizes=tuple(sizes))
