from __future__ import annotations

import math

import numpy as np
import pytest

from dynabatch.bucketing import BucketSpec
from dynabatch.datamodel import MiniBatch
from dynabatch.oomptimizer import (
    BucketBatchSizes,
    CalibrationError,
    LINEAR_INPUT,
    MemoryModel,
    TRANSFORMER_LIKE,
    memory_trace,
    oomptimize,
    sizes_from_text,
    sizes_to_text,
)

from conftest import make_samples


def linear_scan_oracle(model, capacity, t_in, t_out, max_batch):
    """Independent oracle: evaluate every batch size in one vector sweep."""
    bs = np.arange(1, max_batch + 1, dtype=np.float64)
    per = (
        model.c1 * t_in
        + model.c2 * t_in**2
        + model.c3 * t_out
        + model.c4 * t_out**2
        + model.c5 * t_in * t_out
    )
    feasible = np.nonzero(model.c0 + bs * per <= capacity)[0]
    return 0 if feasible.size == 0 else int(feasible[-1]) + 1


def random_instance(rng):
    nbins = int(rng.integers(1, 8))
    nsub = int(rng.integers(1, 3))
    dbounds = tuple(sorted(rng.uniform(0.5, 40.0, nbins).tolist()))
    rows = []
    for _ in range(nbins):
        row = sorted(set(int(v) for v in rng.integers(1, 900, nsub)))
        while len(row) < nsub:
            row.append(row[-1] + 1)
        rows.append(tuple(row))
    spec = BucketSpec(duration_bounds=dbounds, token_bounds=tuple(rows))
    coeffs = rng.uniform(0.0, 2.0, 6)
    coeffs[1 + rng.integers(0, 5)] += 0.5  # at least one per-sample term
    model = MemoryModel(*coeffs.tolist())
    worst = max(
        model(1, *map(float, (spec.corner(f)[0], spec.corner(f)[1])))
        for f in range(spec.num_flat)
    )
    capacity = float(worst * rng.uniform(1.0, 50.0))
    return spec, model, capacity


class TestMemoryModel:
    def test_evaluation(self):
        m = MemoryModel(c0=1.0, c1=2.0)
        assert m(3, 10.0, 0.0) == 1.0 + 3 * 20.0

    def test_rejects_negative_coefficients(self):
        with pytest.raises(ValueError):
            MemoryModel(c0=-1.0, c1=1.0)

    def test_rejects_constant_model(self):
        with pytest.raises(ValueError):
            MemoryModel(c0=5.0)

    def test_monotone_in_batch_size(self):
        m = TRANSFORMER_LIKE
        assert m(2, 10.0, 100.0) > m(1, 10.0, 100.0)


class TestOomptimize:
    def test_closed_form_linear_model(self):
        spec = BucketSpec(duration_bounds=(10.0,), token_bounds=((999,),))
        sizes = oomptimize(spec, LINEAR_INPUT, capacity=100.0)
        assert sizes[0] == 10

    def test_infeasible_capacity_names_bucket(self):
        spec = BucketSpec(duration_bounds=(10.0,), token_bounds=((999,),))
        with pytest.raises(CalibrationError, match="bucket 0"):
            oomptimize(spec, LINEAR_INPUT, capacity=5.0)

    def test_requires_token_bounds(self):
        with pytest.raises(CalibrationError):
            oomptimize(BucketSpec(duration_bounds=(10.0,)), LINEAR_INPUT, 100.0)

    def test_max_batch_cap(self):
        spec = BucketSpec(duration_bounds=(1.0,), token_bounds=((1,),))
        sizes = oomptimize(spec, LINEAR_INPUT, capacity=1e9, max_batch=64)
        assert sizes[0] == 64

    def test_matches_linear_scan_oracle_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            spec, model, capacity = random_instance(rng)
            max_batch = int(rng.integers(1, 400))
            try:
                sizes = oomptimize(spec, model, capacity, max_batch)
            except CalibrationError:
                assert any(
                    linear_scan_oracle(
                        model, capacity, spec.corner(f)[0], spec.corner(f)[1], max_batch
                    )
                    == 0
                    for f in range(spec.num_flat)
                )
                continue
            for f in range(spec.num_flat):
                t_in, t_out = spec.corner(f)
                assert sizes[f] == linear_scan_oracle(model, capacity, t_in, t_out, max_batch)

    def test_monotone_in_capacity(self):
        rng = np.random.default_rng(8)
        spec, model, capacity = random_instance(rng)
        small = oomptimize(spec, model, capacity)
        big = oomptimize(spec, model, capacity * 2)
        assert all(b >= s for s, b in zip(small.sizes, big.sizes))

    def test_monotone_in_bounds(self):
        spec_small = BucketSpec(duration_bounds=(5.0,), token_bounds=((50,),))
        spec_big = BucketSpec(duration_bounds=(10.0,), token_bounds=((100,),))
        m = TRANSFORMER_LIKE
        assert (
            oomptimize(spec_small, m, 48000.0)[0] >= oomptimize(spec_big, m, 48000.0)[0]
        )


class TestMemoryTrace:
    def test_empty(self):
        trace = memory_trace([], LINEAR_INPUT)
        assert trace.values == ()
        assert math.isnan(trace.max) and math.isnan(trace.cv)

    def test_single_batch_hand_value(self):
        batch = MiniBatch.from_samples(make_samples([(10, 5), (4, 5)]))
        trace = memory_trace([batch], MemoryModel(c1=1.0))
        assert trace.values == (20.0,)
        assert trace.max == trace.mean == 20.0
        assert trace.cv == 0.0

    def test_summary_statistics(self):
        batches = [
            MiniBatch.from_samples(make_samples([(d, 1)] * 2)) for d in (1.0, 2.0, 3.0)
        ]
        trace = memory_trace(batches, MemoryModel(c1=1.0))
        assert trace.values == (2.0, 4.0, 6.0)
        assert trace.mean == 4.0
        assert trace.max == 6.0
        assert trace.cv == pytest.approx(math.sqrt(8.0 / 3.0) / 4.0)


class TestSizesSerialization:
    def test_round_trip(self):
        sizes = BucketBatchSizes(sizes=(5, 1, 700))
        assert sizes_from_text(sizes_to_text(sizes)) == sizes

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            sizes_from_text("nope\n")
        with pytest.raises(ValueError):
            BucketBatchSizes(sizes=(0,))
