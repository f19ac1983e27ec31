"""Dynamic bucketing mini-batch sampler with rank-synchronized selection.

The sampler buffers a bounded number of samples into per-bucket FIFO queues
(fed through an optional token-rate filter and the configured allocation
policy) and emits batches from one bucket at a time.  Bucket selection is a
stateless deterministic function of (seed, step): with a SyncConfig, every
rank draws the same target bucket without communicating and falls back to
its closest ready bucket when the target has no batch yet.
"""

from __future__ import annotations

from array import array
from bisect import bisect_left
from dataclasses import dataclass
from itertools import islice
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels as K
from .bucketing import BucketSpec
from .datamodel import MiniBatch, PaddingStats, Sample, tps
from .oomptimizer import BucketBatchSizes

_CHUNK = 2048
_COMPACT_MIN = 8192


def filter_tps(sample: Sample, threshold: float) -> bool:
    """True to keep the sample, False to drop it.

    Drops only rates strictly above the threshold: a sample exactly at the
    threshold is kept.
    """
    if threshold <= 0:
        raise ValueError("tps threshold must be positive")
    return tps(sample) <= threshold


@dataclass(frozen=True, slots=True)
class DurationHeuristic:
    """Emit a batch once its cumulative duration reaches the threshold."""

    threshold_seconds: float


@dataclass(frozen=True, slots=True)
class FixedBatch:
    """Constant batch size in stream order, padded to a fixed shape."""

    size: int
    pad_to_input_seconds: float
    pad_to_output_tokens: int


@dataclass(frozen=True, slots=True)
class PerBucketSizes:
    """Calibrated per-bucket batch sizes (one per flat bucket)."""

    sizes: BucketBatchSizes


BatchingMode = Union[DurationHeuristic, FixedBatch, PerBucketSizes]


@dataclass(frozen=True, slots=True)
class SyncConfig:
    """Shared-seed bucket selection state for one rank of a distributed job."""

    shared_seed: int
    rank: int = 0
    world_size: int = 1

    def __post_init__(self) -> None:
        if self.world_size < 1 or not 0 <= self.rank < self.world_size:
            raise ValueError("require 0 <= rank < world_size")


@dataclass(frozen=True)
class SamplerConfig:
    """Everything that determines a sampler run over a given stream."""

    batching_mode: BatchingMode
    spec: Optional[BucketSpec] = None
    buffer_capacity: int = 10_000
    tps_threshold: Optional[float] = None
    allocation: str = "strict"
    sync: Optional[SyncConfig] = None
    seed: int = 0
    occupancy_weighted: bool = False

    def __post_init__(self) -> None:
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.tps_threshold is not None and self.tps_threshold <= 0:
            raise ValueError("tps_threshold must be positive")
        if self.allocation not in ("strict", "flexible"):
            raise ValueError("allocation must be 'strict' or 'flexible'")
        mode = self.batching_mode
        if isinstance(mode, FixedBatch):
            if mode.size < 1:
                raise ValueError("FixedBatch size must be >= 1")
            if mode.pad_to_input_seconds <= 0 or mode.pad_to_output_tokens < 0:
                raise ValueError("FixedBatch pad-to shape must be positive")
            return
        if self.spec is None:
            raise ValueError(f"{type(mode).__name__} batching requires a bucket spec")
        if isinstance(mode, DurationHeuristic):
            if mode.threshold_seconds <= 0:
                raise ValueError("duration threshold must be positive")
        elif isinstance(mode, PerBucketSizes):
            if len(mode.sizes) != self.spec.num_flat:
                raise ValueError(
                    f"sizes cover {len(mode.sizes)} buckets, spec has {self.spec.num_flat}"
                )
            if self.buffer_capacity < mode.sizes.max_size:
                raise ValueError("buffer_capacity must cover the largest bucket batch size")


@dataclass
class SamplerStats:
    """Counters and padded-cell aggregates accumulated over a sampler run."""

    batches_emitted: int = 0
    samples_emitted: int = 0
    samples_filtered_tps: int = 0
    samples_discarded_allocation: int = 0
    fallback_selections: int = 0
    total_input_cells: float = 0.0
    padded_input_cells: float = 0.0
    total_output_cells: int = 0
    padded_output_cells: int = 0

    @property
    def mean_batch_size(self) -> float:
        if self.batches_emitted == 0:
            return 0.0
        return self.samples_emitted / self.batches_emitted

    @property
    def padding(self) -> PaddingStats:
        return PaddingStats.from_cells(
            self.total_input_cells,
            self.padded_input_cells,
            self.total_output_cells,
            self.padded_output_cells,
        )

    def as_flat_dict(self) -> Dict[str, Union[int, float]]:
        pad = self.padding
        return {
            "batches_emitted": self.batches_emitted,
            "samples_emitted": self.samples_emitted,
            "samples_filtered_tps": self.samples_filtered_tps,
            "samples_discarded_allocation": self.samples_discarded_allocation,
            "fallback_selections": self.fallback_selections,
            "mean_batch_size": self.mean_batch_size,
            "padding.input_pad_frac": pad.input_pad_frac,
            "padding.output_pad_frac": pad.output_pad_frac,
            "padding.total_input_cells": pad.total_input_cells,
            "padding.padded_input_cells": pad.padded_input_cells,
            "padding.total_output_cells": pad.total_output_cells,
            "padding.padded_output_cells": pad.padded_output_cells,
        }


def synced_target(sync: SyncConfig, step: int, total_buckets: int) -> int:
    """Uniform target bucket for a step: identical on every rank."""
    return K.uniform_below(K.mix2(sync.shared_seed, step), total_buckets)


def select_bucket_synced(
    sync: SyncConfig, step: int, ready: Iterable[int], total_buckets: int
) -> int:
    """Rank-synchronized bucket choice without inter-rank communication.

    The target is a uniform draw over all buckets as a pure function of
    (shared_seed, step).  A rank whose target holds no ready batch takes the
    closest ready flat index instead, ties broken toward the lower index.
    """
    ready_sorted = sorted(ready)
    if not ready_sorted:
        raise ValueError("ready set must be non-empty")
    target = synced_target(sync, step, total_buckets)
    pos = bisect_left(ready_sorted, target)
    if pos < len(ready_sorted) and ready_sorted[pos] == target:
        return target
    if pos == 0:
        return ready_sorted[0]
    if pos == len(ready_sorted):
        return ready_sorted[-1]
    below, above = ready_sorted[pos - 1], ready_sorted[pos]
    return above if above - target < target - below else below


class _BucketQueue:
    """FIFO sample queue with parallel duration/token buffers."""

    __slots__ = ("samples", "durs", "toks", "head", "dursum")

    def __init__(self) -> None:
        self.samples: List[Sample] = []
        self.durs = array("d")
        self.toks = array("q")
        self.head = 0
        self.dursum = 0.0

    def __len__(self) -> int:
        return len(self.samples) - self.head

    def append(self, sample: Sample, dur: float, tok: int) -> None:
        self.samples.append(sample)
        self.durs.append(dur)
        self.toks.append(tok)
        self.dursum += dur

    def resync(self) -> None:
        self.dursum = K.sum_range(self.durs, self.head, len(self))

    def pop(self, count: int) -> List[Sample]:
        out = self.samples[self.head : self.head + count]
        self.head += count
        if self.head >= _COMPACT_MIN and self.head * 2 >= len(self.samples):
            self.samples = self.samples[self.head :]
            self.durs = self.durs[self.head :]
            self.toks = self.toks[self.head :]
            self.head = 0
        self.resync()
        return out


class DynamicBucketingSampler:
    """Single-consumer batch sampler over a sample stream.

    Iterate it (or call ``next_batch`` until None) to drain the stream;
    every kept sample is emitted exactly once, and identical
    (stream, config) pairs produce identical batch sequences.
    """

    def __init__(self, stream: Iterable[Sample], config: SamplerConfig) -> None:
        self.config = config
        self.stats = SamplerStats()
        self._stream = iter(stream)
        self._exhausted = False
        self._step = 0
        mode = config.batching_mode
        self._fixed = isinstance(mode, FixedBatch)
        if self._fixed:
            self._pending: List[Sample] = []
            return
        assert config.spec is not None
        self._db, self._tb = config.spec.to_arrays()
        self._nsub = config.spec.num_subbins
        self._nflat = config.spec.num_flat
        self._flexible = config.allocation == "flexible"
        self._thr = float("nan") if config.tps_threshold is None else config.tps_threshold
        self._queues = [_BucketQueue() for _ in range(self._nflat)]
        self._buffered = 0
        self._ready: set[int] = set()
        if isinstance(mode, PerBucketSizes):
            self._sizes: Optional[Sequence[int]] = mode.sizes.sizes
            self._threshold = 0.0
        else:
            assert isinstance(mode, DurationHeuristic)
            self._sizes = None
            self._threshold = mode.threshold_seconds

    def __iter__(self) -> Iterator[MiniBatch]:
        while True:
            batch = self.next_batch()
            if batch is None:
                return
            yield batch

    def next_batch(self) -> Optional[MiniBatch]:
        """Next mini-batch, or None once every queue has drained."""
        if self._fixed:
            return self._next_fixed()
        return self._next_bucketed()

    # -- shared accounting ------------------------------------------------

    def _account(self, batch: MiniBatch, cells: Tuple[float, float, int, int]) -> None:
        self.stats.batches_emitted += 1
        self.stats.samples_emitted += len(batch)
        ti, pi, to, po = cells
        self.stats.total_input_cells += ti
        self.stats.padded_input_cells += pi
        self.stats.total_output_cells += to
        self.stats.padded_output_cells += po

    # -- fixed-batch mode ---------------------------------------------------

    def _next_fixed(self) -> Optional[MiniBatch]:
        mode = self.config.batching_mode
        assert isinstance(mode, FixedBatch)
        thr = self.config.tps_threshold
        while len(self._pending) < mode.size and not self._exhausted:
            block = list(islice(self._stream, _CHUNK))
            if not block:
                self._exhausted = True
                break
            if thr is None:
                self._pending.extend(block)
            else:
                for s in block:
                    if filter_tps(s, thr):
                        self._pending.append(s)
                    else:
                        self.stats.samples_filtered_tps += 1
        if not self._pending:
            return None
        group = self._pending[: mode.size]
        del self._pending[: mode.size]
        batch = MiniBatch.from_samples(group, bucket_id=None)
        pad_in, pad_out = mode.pad_to_input_seconds, mode.pad_to_output_tokens
        if batch.max_input > pad_in or batch.max_output > pad_out:
            raise ValueError(
                f"sample exceeds FixedBatch pad-to shape ({pad_in}s, {pad_out} tokens)"
            )
        n = len(group)
        cells = (
            n * pad_in,
            n * pad_in - sum(s.input_len for s in group),
            n * pad_out,
            n * pad_out - sum(s.output_len for s in group),
        )
        self._account(batch, cells)
        self._step += 1
        return batch

    # -- bucketed modes -------------------------------------------------------

    def _refill(self) -> None:
        cap = self.config.buffer_capacity
        while not self._exhausted and self._buffered < cap:
            want = min(_CHUNK, cap - self._buffered)
            block = list(islice(self._stream, want))
            if not block:
                self._exhausted = True
                for b, q in enumerate(self._queues):
                    if len(q):
                        self._ready.add(b)
                return
            n = len(block)
            durs = np.fromiter((s.input_len for s in block), np.float64, n)
            toks = np.fromiter((s.output_len for s in block), np.int64, n)
            codes = K.allocate_chunk(
                durs, toks, self._db, self._tb, self._nsub, self._flexible, self._thr
            ).tolist()
            dlist = durs.tolist()
            tlist = toks.tolist()
            queues = self._queues
            appended = 0
            touched: set[int] = set()
            for k in range(n):
                code = codes[k]
                if code >= 0:
                    queues[code].append(block[k], dlist[k], tlist[k])
                    appended += 1
                    touched.add(code)
                elif code == K.CODE_TPS_FILTERED:
                    self.stats.samples_filtered_tps += 1
                else:
                    self.stats.samples_discarded_allocation += 1
            self._buffered += appended
            for b in touched:
                if b not in self._ready and self._is_ready(b):
                    self._ready.add(b)

    def _is_ready(self, b: int) -> bool:
        q = self._queues[b]
        if len(q) == 0:
            return False
        if self._exhausted:
            return True
        if self._sizes is not None:
            return len(q) >= self._sizes[b]
        return q.dursum >= self._threshold

    def _batch_count(self, b: int, forced: bool = False) -> int:
        """Samples to emit from bucket b; 0 when it is not actually ready."""
        q = self._queues[b]
        if self._sizes is not None:
            size = self._sizes[b]
            if len(q) >= size:
                return size
            return len(q) if (self._exhausted or forced) else 0
        count, reached = K.prefix_duration(q.durs, q.head, self._threshold)
        if reached:
            return count
        return len(q) if (self._exhausted or forced) else 0

    def _select(self) -> Optional[Tuple[int, int]]:
        """Pick a bucket and its batch size; None when the ready set empties."""
        while self._ready:
            if self.config.sync is not None:
                choice = select_bucket_synced(
                    self.config.sync, self._step, self._ready, self._nflat
                )
                target = synced_target(self.config.sync, self._step, self._nflat)
                fell_back = choice != target
            else:
                ready_sorted = sorted(self._ready)
                key = K.mix2(self.config.seed, self._step)
                if self.config.occupancy_weighted:
                    total = sum(len(self._queues[b]) for b in ready_sorted)
                    u = K.uniform_below(key, total)
                    acc = 0
                    choice = ready_sorted[-1]
                    for b in ready_sorted:
                        acc += len(self._queues[b])
                        if u < acc:
                            choice = b
                            break
                else:
                    choice = ready_sorted[K.uniform_below(key, len(ready_sorted))]
                fell_back = False
            count = self._batch_count(choice)
            if count > 0:
                if fell_back:
                    self.stats.fallback_selections += 1
                return choice, count
            # stale readiness (accumulated float drift): resync and retry
            self._queues[choice].resync()
            self._ready.discard(choice)
        return None

    def _next_bucketed(self) -> Optional[MiniBatch]:
        while True:
            self._refill()
            selected: Optional[Tuple[int, int]] = None
            if self._ready:
                selected = self._select()
            if selected is None:
                if self._exhausted:
                    if self._ready:
                        continue
                    return None
                # buffer is full but no bucket is ready: flush the heaviest
                # queue so the stream keeps moving
                heaviest = max(
                    (b for b in range(self._nflat) if len(self._queues[b])),
                    key=lambda b: (self._queues[b].dursum, -b),
                )
                selected = heaviest, self._batch_count(heaviest, forced=True)
            b, count = selected
            q = self._queues[b]
            group = q.samples[q.head : q.head + count]
            batch = MiniBatch.from_samples(group, bucket_id=b)
            cells = K.padding_cells(
                q.durs, q.toks, q.head, count, batch.max_input, batch.max_output
            )
            q.pop(count)
            self._buffered -= count
            if not self._is_ready(b):
                self._ready.discard(b)
            self._account(batch, cells)
            self._step += 1
            return batch


def iter_batches(stream: Iterable[Sample], config: SamplerConfig) -> Iterator[MiniBatch]:
    """Convenience: iterate all batches of a fresh sampler over a stream."""
    return iter(DynamicBucketingSampler(stream, config))
