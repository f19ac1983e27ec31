"""Desk-scale simulators: DDP tail-worker effect and inference cost model.

``simulate_ddp`` replays synchronized vs. independent bucket selection over
identical per-rank data streams and measures the straggler cost: each global
step takes as long as the slowest rank's batch.  ``predict_rtfx`` is a
two-term analytic model of encoder/decoder inference cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from . import _kernels as K
from .bucketing import estimate_duration_bins, estimate_token_subbins
from .ingest import SynthSpec, generate
from .oomptimizer import MemoryModel, oomptimize
from .sampler import (
    DurationHeuristic,
    DynamicBucketingSampler,
    PerBucketSizes,
    SamplerConfig,
    SyncConfig,
)

_SEL_TAG = 0x73656C65
_DATA_TAG = 0x64617461
_EST_TAG = 0x65737469


class SimulationError(RuntimeError):
    """Raised when a simulated rank runs out of data before finishing."""


@dataclass(frozen=True, slots=True)
class StepCostModel:
    """Polynomial training-step time surrogate.

    t(B, Tin, Tout) = k0 + B * (k1*Tin + k2*Tin^2 + k3*Tout + k4*Tout^2),
    time units arbitrary but fixed; quadratic terms model attention cost.
    """

    k0: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0

    def __post_init__(self) -> None:
        if any(k < 0 for k in (self.k0, self.k1, self.k2, self.k3, self.k4)):
            raise ValueError("step cost coefficients must be non-negative")

    def __call__(self, batch_size: float, t_in: float, t_out: float) -> float:
        return self.k0 + batch_size * (
            self.k1 * t_in
            + self.k2 * t_in * t_in
            + self.k3 * t_out
            + self.k4 * t_out * t_out
        )


QUADRATIC_STEP_COST = StepCostModel(k0=50.0, k1=1.0, k2=0.05, k3=0.05, k4=2e-5)
CONSTANT_STEP_COST = StepCostModel(k0=100.0)


@dataclass(frozen=True, slots=True)
class InferenceCostModel:
    """Analytic encoder/decoder inference cost per second of audio.

    Wall time per audio second is enc_layers * enc_layer_cost +
    tokens_per_second_out * dec_layers * dec_layer_step_cost; the inverse is
    the real-time factor.
    """

    enc_layer_cost: float
    dec_layer_step_cost: float
    enc_layers: int
    dec_layers: int
    tokens_per_second_out: float = 1.0

    def __post_init__(self) -> None:
        if self.enc_layer_cost <= 0 or self.dec_layer_step_cost <= 0:
            raise ValueError("layer costs must be positive")
        if self.enc_layers < 1 or self.dec_layers < 0:
            raise ValueError("enc_layers must be >= 1 and dec_layers >= 0")
        if self.tokens_per_second_out < 0:
            raise ValueError("tokens_per_second_out must be non-negative")


def predict_rtfx(model: InferenceCostModel, audio_seconds: float = 1.0) -> float:
    """Seconds of audio processed per second of wall time.

    Independent of ``audio_seconds``: both wall time and workload scale
    linearly with it.
    """
    if audio_seconds <= 0:
        raise ValueError("audio_seconds must be positive")
    per_audio_second = (
        model.enc_layers * model.enc_layer_cost
        + model.tokens_per_second_out * model.dec_layers * model.dec_layer_step_cost
    )
    return audio_seconds / (audio_seconds * per_audio_second)


def fit_layer_costs(
    row_a: Tuple[int, int, float], row_b: Tuple[int, int, float]
) -> Tuple[float, float]:
    """Solve per-layer costs from two (enc_layers, dec_layers, rtfx) rows.

    Returns (enc_layer_cost, effective_dec_layer_cost); the token emission
    rate is folded into the decoder term, so models built from the fit use
    tokens_per_second_out = 1.
    """
    enc_a, dec_a, rtfx_a = row_a
    enc_b, dec_b, rtfx_b = row_b
    det = enc_a * dec_b - enc_b * dec_a
    if det == 0:
        raise ValueError("rows are linearly dependent; cannot fit layer costs")
    wall_a, wall_b = 1.0 / rtfx_a, 1.0 / rtfx_b
    e = (wall_a * dec_b - wall_b * dec_a) / det
    d = (enc_a * wall_b - enc_b * wall_a) / det
    if e <= 0 or d <= 0:
        raise ValueError("fitted layer costs are not positive; rows inconsistent")
    return e, d


@dataclass(frozen=True)
class DdpSimReport:
    """Straggler comparison between synchronized and independent selection."""

    world_size: int
    steps: int
    mean_step_time_synced: float
    mean_step_time_unsynced: float
    speedup_percent: float
    mean_batch_size_synced: float
    mean_batch_size_unsynced: float
    step_times_synced: Tuple[float, ...]
    step_times_unsynced: Tuple[float, ...]

    def to_dict(self) -> Dict[str, float]:
        return {
            "world_size": self.world_size,
            "steps": self.steps,
            "mean_step_time_synced": self.mean_step_time_synced,
            "mean_step_time_unsynced": self.mean_step_time_unsynced,
            "speedup_percent": self.speedup_percent,
            "mean_batch_size_synced": self.mean_batch_size_synced,
            "mean_batch_size_unsynced": self.mean_batch_size_unsynced,
        }


def rank_selection_seed(shared_seed: int, rank: int) -> int:
    """Independent per-rank selection seed; rank 0 keeps the shared seed so a
    single-rank world behaves identically in both modes."""
    return (shared_seed ^ K.splitmix64(rank) ^ K.splitmix64(0)) & 0xFFFFFFFFFFFFFFFF


def _estimate_batch_upper(cfg: SamplerConfig, data_spec: SynthSpec) -> int:
    mode = cfg.batching_mode
    if isinstance(mode, PerBucketSizes):
        sizes = mode.sizes.sizes
        return max(2, math.ceil(sum(sizes) / len(sizes) * 1.25))
    if isinstance(mode, DurationHeuristic):
        typical = math.exp(data_spec.duration_dist.mu)
        return max(2, math.ceil(mode.threshold_seconds / typical * 1.25))
    raise SimulationError("simulate_ddp requires a bucketed batching mode")


def _run_rank(
    cfg: SamplerConfig,
    data_spec: SynthSpec,
    data_seed: int,
    selection_seed: int,
    rank: int,
    world_size: int,
    steps: int,
    count: int,
) -> Optional[List[Tuple[int, float, int]]]:
    """Batch shapes for one rank, or None when ``count`` samples ran out."""
    stream_spec = replace(data_spec, count=count, seed=data_seed)
    rank_cfg = replace(
        cfg, sync=SyncConfig(shared_seed=selection_seed, rank=rank, world_size=world_size)
    )
    sampler = DynamicBucketingSampler(generate(stream_spec), rank_cfg)
    shapes: List[Tuple[int, float, int]] = []
    for _ in range(steps):
        batch = sampler.next_batch()
        if batch is None:
            return None
        shapes.append((len(batch), batch.max_input, batch.max_output))
    return shapes


def simulate_ddp(
    world_size: int,
    steps: int,
    sampler_cfg: SamplerConfig,
    cost: StepCostModel,
    seed: int,
    data_spec: Optional[SynthSpec] = None,
    samples_per_rank: Optional[int] = None,
) -> DdpSimReport:
    """Compare synced vs. unsynced bucket selection over identical streams.

    Every rank samples from its own synthetic stream (data seed derived from
    ``seed`` and the rank); the synced pass shares one selection seed across
    ranks, the unsynced pass derives an independent one per rank.  Global
    step time is the maximum of the per-rank step costs.
    """
    from .ingest import DEFAULT_SYNTH_SPEC

    if world_size < 1 or steps < 1:
        raise ValueError("world_size and steps must be >= 1")
    spec = data_spec if data_spec is not None else DEFAULT_SYNTH_SPEC
    shared = K.mix2(seed, _SEL_TAG)
    grow = samples_per_rank is None
    base_count = (
        samples_per_rank
        if samples_per_rank is not None
        else steps * _estimate_batch_upper(sampler_cfg, spec) + sampler_cfg.buffer_capacity
    )

    per_mode_shapes: Dict[bool, List[List[Tuple[int, float, int]]]] = {}
    for synced in (True, False):
        per_mode_shapes[synced] = []
    for rank in range(world_size):
        data_seed = K.mix2(K.mix2(seed, _DATA_TAG), rank)
        count = base_count
        while True:
            runs = {}
            for synced in (True, False):
                sel = shared if synced else rank_selection_seed(shared, rank)
                runs[synced] = _run_rank(
                    sampler_cfg, spec, data_seed, sel, rank, world_size, steps, count
                )
            if all(r is not None for r in runs.values()):
                break
            if not grow or count > base_count * 64:
                raise SimulationError(
                    f"rank {rank} exhausted its {count}-sample stream before "
                    f"{steps} steps"
                )
            count *= 2
        for synced in (True, False):
            per_mode_shapes[synced].append(runs[synced])  # type: ignore[arg-type]

    def _globalize(shapes: List[List[Tuple[int, float, int]]]) -> Tuple[List[float], float]:
        times = [
            max(cost(b, t_in, t_out) for (b, t_in, t_out) in (ranks[k] for ranks in shapes))
            for k in range(steps)
        ]
        total_samples = sum(b for ranks in shapes for (b, _, _) in ranks)
        return times, total_samples / (steps * world_size)

    sync_times, sync_mean_b = _globalize(per_mode_shapes[True])
    unsync_times, unsync_mean_b = _globalize(per_mode_shapes[False])
    mean_sync = sum(sync_times) / steps
    mean_unsync = sum(unsync_times) / steps
    speedup = (
        100.0 * (mean_unsync - mean_sync) / mean_unsync if mean_unsync > 0 else 0.0
    )
    return DdpSimReport(
        world_size=world_size,
        steps=steps,
        mean_step_time_synced=mean_sync,
        mean_step_time_unsynced=mean_unsync,
        speedup_percent=speedup,
        mean_batch_size_synced=sync_mean_b,
        mean_batch_size_unsynced=unsync_mean_b,
        step_times_synced=tuple(sync_times),
        step_times_unsynced=tuple(unsync_times),
    )


def reference_sim_sampler_config(
    seed: int,
    data_spec: Optional[SynthSpec] = None,
    num_buckets: int = 15,
    memory_model: Optional[MemoryModel] = None,
    memory_capacity: float = 9000.0,
    buffer_capacity: int = 2000,
) -> SamplerConfig:
    """Reference sampler configuration for the DDP simulation.

    Estimates duration bins with single token caps on a synthetic estimation
    stream derived from the seed, then calibrates per-bucket sizes against a
    memory model, giving buckets with genuinely different batch shapes.
    """
    from .ingest import DEFAULT_SYNTH_SPEC
    from .oomptimizer import TRANSFORMER_LIKE

    spec = data_spec if data_spec is not None else DEFAULT_SYNTH_SPEC
    model = memory_model if memory_model is not None else TRANSFORMER_LIKE
    est_spec = replace(spec, count=20_000, seed=K.mix2(seed, _EST_TAG))
    spec1d = estimate_duration_bins(generate(est_spec), num_buckets)
    spec2d = estimate_token_subbins(generate(est_spec), spec1d, 1)
    sizes = oomptimize(spec2d, model, memory_capacity)
    return SamplerConfig(
        batching_mode=PerBucketSizes(sizes=sizes),
        spec=spec2d,
        buffer_capacity=max(buffer_capacity, sizes.max_size),
        tps_threshold=25.0,
        allocation="flexible",
        seed=seed,
    )
