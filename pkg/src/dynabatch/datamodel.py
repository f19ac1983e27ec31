"""Core record types, padding accounting and token-rate statistics.

Every sample carries two sequence-length axes: input length in seconds and
output length in tokens.  Padding is accounted separately per axis because a
batch pads each axis to its own maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple


@dataclass(frozen=True, slots=True)
class Sample:
    """One record: identifier, input duration in seconds, output token count."""

    id: str
    input_len: float
    output_len: int

    def __post_init__(self) -> None:
        if not (self.input_len > 0 and math.isfinite(self.input_len)):
            raise ValueError(f"input_len must be positive and finite, got {self.input_len!r}")
        if self.output_len < 0:
            raise ValueError(f"output_len must be non-negative, got {self.output_len!r}")


def tps(sample: Sample) -> float:
    """Output token rate of a sample: tokens per second of input."""
    return sample.output_len / sample.input_len


@dataclass(frozen=True, slots=True)
class MiniBatch:
    """A non-empty group of samples plus its padded-shape accounting."""

    samples: Tuple[Sample, ...]
    bucket_id: Optional[int]
    max_input: float
    max_output: int

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError("a mini-batch must contain at least one sample")
        if self.max_input != max(s.input_len for s in self.samples):
            raise ValueError("max_input does not match contained samples")
        if self.max_output != max(s.output_len for s in self.samples):
            raise ValueError("max_output does not match contained samples")

    @classmethod
    def from_samples(
        cls, samples: Iterable[Sample], bucket_id: Optional[int] = None
    ) -> "MiniBatch":
        group = tuple(samples)
        if not group:
            raise ValueError("a mini-batch must contain at least one sample")
        return cls(
            samples=group,
            bucket_id=bucket_id,
            max_input=max(s.input_len for s in group),
            max_output=max(s.output_len for s in group),
        )

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True, slots=True)
class PaddingStats:
    """Per-axis padded-cell totals and fractions.

    Input cells are measured in seconds times batch rows, output cells in
    integer token slots.
    """

    input_pad_frac: float
    output_pad_frac: float
    total_input_cells: float
    padded_input_cells: float
    total_output_cells: int
    padded_output_cells: int

    @classmethod
    def from_cells(
        cls,
        total_input: float,
        padded_input: float,
        total_output: int,
        padded_output: int,
    ) -> "PaddingStats":
        if padded_input < 0 or padded_output < 0:
            raise ValueError("padded cell counts must be non-negative")
        # 1-ulp-scale float slack: padded cells accumulate as per-row sums
        if padded_input > total_input * (1 + 1e-9) or padded_output > total_output:
            raise ValueError("padded cells cannot exceed total cells")
        input_frac = min(1.0, padded_input / total_input) if total_input > 0 else 0.0
        return cls(
            input_pad_frac=input_frac,
            output_pad_frac=padded_output / total_output if total_output > 0 else 0.0,
            total_input_cells=total_input,
            padded_input_cells=padded_input,
            total_output_cells=total_output,
            padded_output_cells=padded_output,
        )


def padding_stats(
    batch: MiniBatch, pad_to: Optional[Tuple[float, int]] = None
) -> PaddingStats:
    """Padding accounting for one batch.

    Without ``pad_to`` each axis pads to the batch maximum; with ``pad_to``
    both axes pad to the given fixed (seconds, tokens) shape, which must not
    be smaller than the batch maxima.
    """
    if pad_to is None:
        pad_in, pad_out = batch.max_input, batch.max_output
    else:
        pad_in, pad_out = pad_to
        if pad_in < batch.max_input or pad_out < batch.max_output:
            raise ValueError(
                f"pad_to {pad_to!r} is smaller than batch maxima "
                f"({batch.max_input}, {batch.max_output})"
            )
    n = len(batch.samples)
    total_in = n * pad_in
    total_out = n * pad_out
    # per-row gaps: exact zeros when a sample matches the padded shape
    padded_in = sum(pad_in - s.input_len for s in batch.samples)
    padded_out = sum(pad_out - s.output_len for s in batch.samples)
    return PaddingStats.from_cells(total_in, padded_in, total_out, padded_out)


def nearest_rank(sorted_vals: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile over pre-sorted values."""
    if not sorted_vals:
        raise ValueError("empty value sequence")
    if not 0 < pct <= 100:
        raise ValueError("percentile must be in (0, 100]")
    rank = math.ceil(pct / 100.0 * len(sorted_vals))
    return sorted_vals[rank - 1]


@dataclass(frozen=True, slots=True)
class TpsBin:
    """Token-rate summary for one half-open duration bin [lo, hi)."""

    lo: float
    hi: float
    count: int
    mean: float
    p50: float
    p90: float
    p99: float

    @classmethod
    def empty(cls, lo: float, hi: float) -> "TpsBin":
        nan = math.nan
        return cls(lo=lo, hi=hi, count=0, mean=nan, p50=nan, p90=nan, p99=nan)


def tps_histogram(samples: Iterable[Sample], duration_bin_width: float) -> list[TpsBin]:
    """Group samples into half-open duration bins and summarize TPS per bin.

    A sample exactly on a bin boundary belongs to the upper bin.  Bins
    between zero and the longest observed duration are all reported; empty
    ones carry count 0 and NaN statistics.  An empty input yields an empty
    histogram.
    """
    if duration_bin_width <= 0:
        raise ValueError("duration_bin_width must be positive")
    per_bin: dict[int, list[float]] = {}
    for s in samples:
        k = int(s.input_len // duration_bin_width)
        per_bin.setdefault(k, []).append(tps(s))
    if not per_bin:
        return []
    bins: list[TpsBin] = []
    for k in range(max(per_bin) + 1):
        lo = k * duration_bin_width
        hi = (k + 1) * duration_bin_width
        rates = per_bin.get(k)
        if not rates:
            bins.append(TpsBin.empty(lo, hi))
            continue
        rates.sort()
        bins.append(
            TpsBin(
                lo=lo,
                hi=hi,
                count=len(rates),
                mean=sum(rates) / len(rates),
                p50=nearest_rank(rates, 50),
                p90=nearest_rank(rates, 90),
                p99=nearest_rank(rates, 99),
            )
        )
    return bins
