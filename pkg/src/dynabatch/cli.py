"""Command-line pipeline: generate data, estimate buckets, calibrate batch
sizes, sample, profile and simulate distributed selection.

Every command is deterministic given its flags (or config document) and
seed; reports are written with stable key order so repeated runs are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

from .bucketing import (
    EstimationError,
    estimate_duration_bins,
    estimate_token_subbins,
    spec_from_text,
    spec_to_text,
)
from .datamodel import padding_stats, tps, tps_histogram
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
    DEFAULT_MAX_BATCH,
    DEFAULT_MEMORY_CAPACITY,
    CalibrationError,
    LINEAR_INPUT,
    MemoryModel,
    TRANSFORMER_LIKE,
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
)
from .sim import (
    CONSTANT_STEP_COST,
    QUADRATIC_STEP_COST,
    SimulationError,
    StepCostModel,
    reference_sim_sampler_config,
    simulate_ddp,
)
from .stream import BufferedStreamConfig, open_buffered

SCHEMES = ("A", "B", "C", "D", "fixed")


def _fmt(v: Union[int, float, str]) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_report(path: Path, data: Mapping[str, Union[int, float, str]], fmt: str) -> None:
    if fmt == "json":
        path.write_text(json.dumps(dict(data), sort_keys=True, indent=2) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "value"])
            for k in sorted(data):
                writer.writerow([k, _fmt(data[k])])
    else:
        lines = [f"{k} {_fmt(data[k])}" for k in sorted(data)]
        path.write_text("\n".join(lines) + "\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _memory_model(text: str) -> MemoryModel:
    presets = {"transformer": TRANSFORMER_LIKE, "linear": LINEAR_INPUT}
    if text in presets:
        return presets[text]
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            "memory model must be 'transformer', 'linear' or six comma-separated coefficients"
        )
    return MemoryModel(*parts)


def _cost_model(text: str) -> StepCostModel:
    presets = {"quadratic": QUADRATIC_STEP_COST, "constant": CONSTANT_STEP_COST}
    if text in presets:
        return presets[text]
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 5:
        raise argparse.ArgumentTypeError(
            "cost model must be 'quadratic', 'constant' or five comma-separated coefficients"
        )
    return StepCostModel(*parts)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat option values for one command, loadable from a JSON document.

    Keys use the long flag spelling without the leading dashes (for example
    ``buffer-capacity``); explicit command-line flags override them.
    """

    values: Mapping[str, object]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict) or not all(isinstance(k, str) for k in raw):
            raise ValueError(f"{path}: config must be a JSON object with string keys")
        return cls(values=raw)


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse argv, letting --config provide defaults under explicit flags."""
    probe, _ = parser.parse_known_args(list(argv))
    config_path = getattr(probe, "config", None)
    if config_path:
        cfg = ExperimentConfig.load(config_path)
        known = {a.dest for a in parser._actions}
        defaults = {}
        for key, value in cfg.values.items():
            dest = key.replace("-", "_")
            if dest not in known:
                raise ValueError(f"unknown config key {key!r}")
            defaults[dest] = value
        parser.set_defaults(**defaults)
    return parser.parse_args(list(argv))


# --------------------------------------------------------------------------
# gen-data


def _build_gen_parser() -> argparse.ArgumentParser:
    d = DEFAULT_SYNTH_SPEC
    dd = d.duration_dist
    rd = d.rate_dist
    p = argparse.ArgumentParser(prog="dynabatch gen-data")
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=_positive_int, default=d.count)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--dur-mu", type=float, default=dd.mu)
    p.add_argument("--dur-sigma", type=float, default=dd.sigma)
    p.add_argument("--min-dur", type=_positive_float, default=dd.min_dur)
    p.add_argument("--max-dur", type=_positive_float, default=dd.max_dur)
    p.add_argument("--rate-shape", type=_positive_float, default=rd.shape)
    p.add_argument("--rate-scale", type=_positive_float, default=rd.scale)
    p.add_argument("--rate-fixed", type=float, default=None)
    p.add_argument("--prompt-tokens", type=int, default=d.prompt_tokens)
    p.add_argument("--outlier-frac", type=float, default=d.outlier_frac)
    p.add_argument("--outlier-factor", type=float, default=d.outlier_factor)
    p.add_argument("--id-prefix", default=d.id_prefix)
    p.add_argument("--config", default=None)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    return p


def _synth_spec_from_args(args: argparse.Namespace) -> SynthSpec:
    rate = (
        FixedRate(args.rate_fixed)
        if args.rate_fixed is not None
        else GammaRate(shape=args.rate_shape, scale=args.rate_scale)
    )
    return SynthSpec(
        count=args.count,
        duration_dist=LogNormalDuration(
            mu=args.dur_mu, sigma=args.dur_sigma, min_dur=args.min_dur, max_dur=args.max_dur
        ),
        rate_dist=rate,
        prompt_tokens=args.prompt_tokens,
        outlier_frac=args.outlier_frac,
        outlier_factor=args.outlier_factor,
        seed=args.seed,
        id_prefix=args.id_prefix,
    )


def cmd_gen_data(argv: Sequence[str]) -> int:
    args = _apply_config(_build_gen_parser(), argv)
    spec = _synth_spec_from_args(args)
    total_dur = 0.0
    total_tok = 0
    total_tps = 0.0

    def _tally():
        nonlocal total_dur, total_tok, total_tps
        for s in generate(spec):
            total_dur += s.input_len
            total_tok += s.output_len
            total_tps += tps(s)
            yield s

    count = write_manifest(_tally(), args.output)
    print(f"samples {count}")
    print(f"total_hours {_fmt(total_dur / 3600.0)}")
    print(f"mean_duration {_fmt(total_dur / count)}")
    print(f"mean_tokens {_fmt(total_tok / count)}")
    print(f"mean_tps {_fmt(total_tps / count)}")
    return 0


# --------------------------------------------------------------------------
# estimate-buckets


def _build_estimate_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynabatch estimate-buckets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--buckets", type=_positive_int, default=30)
    p.add_argument(
        "--sub-buckets",
        type=int,
        default=1,
        help="token sub-bins per duration bin; 0 disables token bounds",
    )
    p.add_argument("--tps-filter", type=_positive_float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    return p


def _filtered_manifest(path: str, threshold: Optional[float]):
    for s in read_manifest(path):
        if threshold is None or tps(s) <= threshold:
            yield s


def cmd_estimate_buckets(argv: Sequence[str]) -> int:
    args = _apply_config(_build_estimate_parser(), argv)
    if args.sub_buckets < 0:
        raise EstimationError("--sub-buckets must be >= 0")
    spec1d = estimate_duration_bins(
        _filtered_manifest(args.manifest, args.tps_filter), args.buckets
    )
    if args.sub_buckets >= 1:
        spec = estimate_token_subbins(
            _filtered_manifest(args.manifest, args.tps_filter), spec1d, args.sub_buckets
        )
    else:
        spec = spec1d
    Path(args.output).write_text(spec_to_text(spec))
    print(f"duration_bins {spec.num_duration_bins}")
    print(f"flat_buckets {spec.num_flat}")
    print(f"max_duration {_fmt(spec.max_duration)}")
    return 0


# --------------------------------------------------------------------------
# oomptimize


def _build_oomptimize_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynabatch oomptimize")
    p.add_argument("--spec", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--capacity", type=_positive_float, default=DEFAULT_MEMORY_CAPACITY)
    p.add_argument("--model", type=_memory_model, default=TRANSFORMER_LIKE)
    p.add_argument("--max-batch", type=_positive_int, default=DEFAULT_MAX_BATCH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    return p


def cmd_oomptimize(argv: Sequence[str]) -> int:
    args = _apply_config(_build_oomptimize_parser(), argv)
    spec = spec_from_text(Path(args.spec).read_text())
    sizes = oomptimize(spec, args.model, args.capacity, args.max_batch)
    Path(args.output).write_text(sizes_to_text(sizes))
    print(f"flat_buckets {len(sizes)}")
    print(f"min_batch_size {min(sizes.sizes)}")
    print(f"max_batch_size {sizes.max_size}")
    return 0


# --------------------------------------------------------------------------
# sample / profile


def _add_sampling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", choices=SCHEMES, default=None)
    p.add_argument("--spec", default=None)
    p.add_argument("--sizes", default=None)
    p.add_argument("--duration-threshold", type=_positive_float, default=None)
    p.add_argument("--fixed-batch", type=_positive_int, default=None)
    p.add_argument("--pad-to-input", type=_positive_float, default=40.0)
    p.add_argument("--pad-to-output", type=int, default=None)
    p.add_argument("--tps-filter", type=_positive_float, default=None)
    p.add_argument("--allocation", choices=("strict", "flexible"), default="strict")
    p.add_argument("--buffer-capacity", type=_positive_int, default=10_000)
    p.add_argument("--start-fraction", type=float, default=0.10)
    p.add_argument("--buckets", type=_positive_int, default=30)
    p.add_argument("--memory-model", type=_memory_model, default=TRANSFORMER_LIKE)
    p.add_argument("--capacity", type=_positive_float, default=DEFAULT_MEMORY_CAPACITY)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--config", default=None)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")


def _max_output_tokens(manifest: str) -> int:
    best = 0
    for s in read_manifest(manifest):
        if s.output_len > best:
            best = s.output_len
    return best


def build_scheme_config(
    scheme: str,
    manifest: str,
    seed: int,
    memory_model: MemoryModel,
    capacity: float,
    buffer_capacity: int,
    num_buckets: int = 30,
) -> Tuple[SamplerConfig, Dict[str, Union[int, float, str]]]:
    """Reference sampling schemes.

    fixed: constant 768-sample batches padded to a fixed shape.
    A: duration-heuristic batches (360 s) over duration-only buckets.
    B: A plus a token-rate filter at 25 tps.
    C: B with calibrated per-bucket batch sizes replacing the heuristic.
    D: C with two token sub-bins per duration bin, sizes re-calibrated.
    """
    meta: Dict[str, Union[int, float, str]] = {"scheme": scheme, "scheme_seed": seed}
    if scheme == "fixed":
        pad_out = _max_output_tokens(manifest)
        meta["pad_to_input_seconds"] = 40.0
        meta["pad_to_output_tokens"] = pad_out
        return (
            SamplerConfig(
                batching_mode=FixedBatch(size=768, pad_to_input_seconds=40.0, pad_to_output_tokens=pad_out),
                buffer_capacity=buffer_capacity,
                seed=seed,
            ),
            meta,
        )
    threshold = None if scheme == "A" else 25.0
    spec1d = estimate_duration_bins(_filtered_manifest(manifest, threshold), num_buckets)
    if scheme in ("A", "B"):
        cfg = SamplerConfig(
            batching_mode=DurationHeuristic(threshold_seconds=360.0),
            spec=spec1d,
            buffer_capacity=buffer_capacity,
            tps_threshold=threshold,
            allocation="strict",
            seed=seed,
        )
        meta["duration_threshold"] = 360.0
        return cfg, meta
    subbins = 1 if scheme == "C" else 2
    spec = estimate_token_subbins(_filtered_manifest(manifest, threshold), spec1d, subbins)
    sizes = oomptimize(spec, memory_model, capacity)
    meta["flat_buckets"] = spec.num_flat
    meta["memory_capacity"] = capacity
    cfg = SamplerConfig(
        batching_mode=PerBucketSizes(sizes=sizes),
        spec=spec,
        buffer_capacity=max(buffer_capacity, sizes.max_size),
        tps_threshold=threshold,
        allocation="flexible",
        seed=seed,
    )
    return cfg, meta


def _sampler_from_args(args: argparse.Namespace) -> Tuple[SamplerConfig, Dict[str, Union[int, float, str]]]:
    if args.scheme is not None:
        return build_scheme_config(
            args.scheme,
            args.manifest,
            args.seed,
            args.memory_model,
            args.capacity,
            args.buffer_capacity,
            args.buckets,
        )
    meta: Dict[str, Union[int, float, str]] = {}
    if args.fixed_batch is not None:
        pad_out = args.pad_to_output
        if pad_out is None:
            pad_out = _max_output_tokens(args.manifest)
        meta["pad_to_output_tokens"] = pad_out
        cfg = SamplerConfig(
            batching_mode=FixedBatch(
                size=args.fixed_batch,
                pad_to_input_seconds=args.pad_to_input,
                pad_to_output_tokens=pad_out,
            ),
            buffer_capacity=args.buffer_capacity,
            tps_threshold=args.tps_filter,
            seed=args.seed,
        )
        return cfg, meta
    if args.spec is None:
        raise ValueError("provide --scheme, --fixed-batch or --spec")
    spec = spec_from_text(Path(args.spec).read_text())
    if args.sizes is not None:
        sizes = sizes_from_text(Path(args.sizes).read_text())
        mode: Union[PerBucketSizes, DurationHeuristic] = PerBucketSizes(sizes=sizes)
        buffer_capacity = max(args.buffer_capacity, sizes.max_size)
    else:
        mode = DurationHeuristic(threshold_seconds=args.duration_threshold or 360.0)
        buffer_capacity = args.buffer_capacity
    cfg = SamplerConfig(
        batching_mode=mode,
        spec=spec,
        buffer_capacity=buffer_capacity,
        tps_threshold=args.tps_filter,
        allocation=args.allocation,
        sync=None,
        seed=args.seed,
    )
    return cfg, meta


def _open_manifest_stream(args: argparse.Namespace):
    return open_buffered(
        read_manifest(args.manifest),
        BufferedStreamConfig(
            capacity=args.buffer_capacity, start_fraction=args.start_fraction
        ),
    )


def _build_sample_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynabatch sample")
    _add_sampling_flags(p)
    p.add_argument("--output", required=True)
    p.add_argument("--stats", default=None)
    return p


def cmd_sample(argv: Sequence[str]) -> int:
    args = _apply_config(_build_sample_parser(), argv)
    cfg, _meta = _sampler_from_args(args)
    sampler = DynamicBucketingSampler(_open_manifest_stream(args), cfg)
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        for step, batch in enumerate(sampler):
            fh.write(
                json.dumps(
                    {
                        "step": step,
                        "bucket": batch.bucket_id,
                        "size": len(batch),
                        "max_input": batch.max_input,
                        "max_output": batch.max_output,
                        "sample_ids": [s.id for s in batch.samples],
                    }
                )
            )
            fh.write("\n")
    if args.stats:
        _write_report(Path(args.stats), sampler.stats.as_flat_dict(), args.format)
    print(f"batches {sampler.stats.batches_emitted}")
    print(f"samples {sampler.stats.samples_emitted}")
    return 0


def _build_profile_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynabatch profile")
    _add_sampling_flags(p)
    p.add_argument("--output", required=True)
    p.add_argument("--series", default=None)
    p.add_argument("--tps-hist", default=None)
    p.add_argument("--tps-hist-width", type=_positive_float, default=2.0)
    return p


def cmd_profile(argv: Sequence[str]) -> int:
    args = _apply_config(_build_profile_parser(), argv)
    cfg, meta = _sampler_from_args(args)
    model = args.memory_model
    sampler = DynamicBucketingSampler(_open_manifest_stream(args), cfg)
    series_fh = None
    writer = None
    if args.series:
        series_fh = open(args.series, "w", newline="\n")
        writer = csv.writer(series_fh)
        writer.writerow(
            ["step", "batch_size", "max_input", "max_output", "input_pad_frac", "output_pad_frac", "memory"]
        )
    try:
        for step, batch in enumerate(sampler):
            if writer is not None:
                mode = cfg.batching_mode
                pad_to = (
                    (mode.pad_to_input_seconds, mode.pad_to_output_tokens)
                    if isinstance(mode, FixedBatch)
                    else None
                )
                pstats = padding_stats(batch, pad_to)
                writer.writerow(
                    [
                        step,
                        len(batch),
                        _fmt(batch.max_input),
                        batch.max_output,
                        _fmt(pstats.input_pad_frac),
                        _fmt(pstats.output_pad_frac),
                        _fmt(model(len(batch), batch.max_input, batch.max_output)),
                    ]
                )
    finally:
        if series_fh is not None:
            series_fh.close()
    report = dict(sampler.stats.as_flat_dict())
    report.update(meta)
    _write_report(Path(args.output), report, args.format)
    if args.tps_hist:
        with open(args.tps_hist, "w", newline="\n") as fh:
            hist_writer = csv.writer(fh)
            hist_writer.writerow(["lo", "hi", "count", "mean", "p50", "p90", "p99"])
            for b in tps_histogram(read_manifest(args.manifest), args.tps_hist_width):
                hist_writer.writerow(
                    [_fmt(b.lo), _fmt(b.hi), b.count, _fmt(b.mean), _fmt(b.p50), _fmt(b.p90), _fmt(b.p99)]
                )
    print(f"batches {sampler.stats.batches_emitted}")
    print(f"mean_batch_size {_fmt(sampler.stats.mean_batch_size)}")
    print(f"input_pad_frac {_fmt(sampler.stats.padding.input_pad_frac)}")
    print(f"output_pad_frac {_fmt(sampler.stats.padding.output_pad_frac)}")
    return 0


# --------------------------------------------------------------------------
# simulate-ddp


def _build_ddp_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynabatch simulate-ddp")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--world-sizes", default="2,16,128")
    p.add_argument("--steps", type=_positive_int, default=1000)
    p.add_argument("--cost", type=_cost_model, default=QUADRATIC_STEP_COST)
    p.add_argument("--sim-buckets", type=_positive_int, default=15)
    p.add_argument("--sim-capacity", type=_positive_float, default=9000.0)
    p.add_argument("--samples-per-rank", type=_positive_int, default=None)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--config", default=None)
    p.add_argument("--format", choices=("text", "json", "csv"), default="json")
    return p


def cmd_simulate_ddp(argv: Sequence[str]) -> int:
    args = _apply_config(_build_ddp_parser(), argv)
    worlds = [int(w) for w in str(args.world_sizes).split(",") if w]
    if not worlds or any(w < 1 for w in worlds):
        raise SimulationError("world sizes must be positive integers")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = reference_sim_sampler_config(
        args.seed, num_buckets=args.sim_buckets, memory_capacity=args.sim_capacity
    )
    table = ["ranks | step speedup [%]", "----- | -----------------"]
    for world in worlds:
        report = simulate_ddp(
            world,
            args.steps,
            cfg,
            args.cost,
            args.seed,
            samples_per_rank=args.samples_per_rank,
        )
        ext = {"text": "txt", "json": "json", "csv": "csv"}[args.format]
        _write_report(out / f"report-w{world}.{ext}", report.to_dict(), args.format)
        if args.csv:
            with open(out / f"steps-w{world}.csv", "w", newline="\n") as fh:
                writer = csv.writer(fh)
                writer.writerow(["step", "time_synced", "time_unsynced"])
                for k in range(report.steps):
                    writer.writerow(
                        [k, _fmt(report.step_times_synced[k]), _fmt(report.step_times_unsynced[k])]
                    )
        table.append(f"{world:5d} | {report.speedup_percent:.2f}")
        print(f"world {world} speedup_percent {_fmt(report.speedup_percent)}")
    (out / "table.txt").write_text("\n".join(table) + "\n")
    return 0


# --------------------------------------------------------------------------


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "estimate-buckets": cmd_estimate_buckets,
    "oomptimize": cmd_oomptimize,
    "sample": cmd_sample,
    "profile": cmd_profile,
    "simulate-ddp": cmd_simulate_ddp,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        names = ", ".join(sorted(_COMMANDS))
        print(f"usage: dynabatch COMMAND [flags]\ncommands: {names}")
        return 0 if argv else 2
    command = argv[0]
    handler = _COMMANDS.get(command)
    if handler is None:
        print(f"unknown command {command!r}", file=sys.stderr)
        return 2
    try:
        return handler(argv[1:])
    except (
        ManifestError,
        EstimationError,
        CalibrationError,
        SimulationError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
