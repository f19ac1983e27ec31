"""Padding-minimizing mini-batch construction for variable-length sequences.

Dynamic 2D bucketing, token-rate filtering, synchronized distributed bucket
selection, concurrent buffered streaming, bisection-based batch size
calibration and desk-scale efficiency simulators.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .bucketing import (
    Allocation,
    BucketSpec,
    DiscardReason,
    EstimationError,
    allocate_flexible,
    allocate_strict,
    estimate_duration_bins,
    estimate_token_subbins,
    spec_from_text,
    spec_to_text,
)
from .datamodel import (
    MiniBatch,
    PaddingStats,
    Sample,
    TpsBin,
    padding_stats,
    tps,
    tps_histogram,
)
from .ingest import (
    DEFAULT_SYNTH_SPEC,
    FixedRate,
    GammaRate,
    LogNormalDuration,
    ManifestError,
    SynthSpec,
    generate,
    read_manifest,
    write_manifest,
)
from .oomptimizer import (
    BucketBatchSizes,
    CalibrationError,
    MemoryModel,
    MemoryTrace,
    TRANSFORMER_LIKE,
    memory_trace,
    oomptimize,
    sizes_from_text,
    sizes_to_text,
)
from .sampler import (
    DurationHeuristic,
    DynamicBucketingSampler,
    FixedBatch,
    PerBucketSizes,
    SamplerConfig,
    SamplerStats,
    SyncConfig,
    filter_tps,
    iter_batches,
    select_bucket_synced,
)
from .sim import (
    DdpSimReport,
    InferenceCostModel,
    QUADRATIC_STEP_COST,
    SimulationError,
    StepCostModel,
    fit_layer_costs,
    predict_rtfx,
    reference_sim_sampler_config,
    simulate_ddp,
)
from .stream import BufferedSampleStream, BufferedStreamConfig, open_buffered

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "BucketBatchSizes",
    "BucketSpec",
    "BufferedSampleStream",
    "BufferedStreamConfig",
    "CalibrationError",
    "DEFAULT_SYNTH_SPEC",
    "DdpSimReport",
    "DiscardReason",
    "DurationHeuristic",
    "DynamicBucketingSampler",
    "EstimationError",
    "FixedBatch",
    "FixedRate",
    "GammaRate",
    "InferenceCostModel",
    "KERNEL_BACKEND",
    "LogNormalDuration",
    "ManifestError",
    "MemoryModel",
    "MemoryTrace",
    "MiniBatch",
    "PaddingStats",
    "PerBucketSizes",
    "QUADRATIC_STEP_COST",
    "Sample",
    "SamplerConfig",
    "SamplerStats",
    "SimulationError",
    "StepCostModel",
    "SynthSpec",
    "SyncConfig",
    "TRANSFORMER_LIKE",
    "TpsBin",
    "allocate_flexible",
    "allocate_strict",
    "estimate_duration_bins",
    "estimate_token_subbins",
    "filter_tps",
    "fit_layer_costs",
    "generate",
    "iter_batches",
    "memory_trace",
    "oomptimize",
    "open_buffered",
    "padding_stats",
    "predict_rtfx",
    "read_manifest",
    "reference_sim_sampler_config",
    "select_bucket_synced",
    "simulate_ddp",
    "sizes_from_text",
    "sizes_to_text",
    "spec_from_text",
    "spec_to_text",
    "tps",
    "tps_histogram",
    "write_manifest",
]
