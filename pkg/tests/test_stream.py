from __future__ import annotations

import time
from collections import Counter

import pytest

from dynabatch.stream import BufferedStreamConfig, open_buffered

from conftest import make_samples


def source(n):
    return make_samples([(1.0 + i % 5, i % 11) for i in range(n)])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            BufferedStreamConfig(capacity=0)
        with pytest.raises(ValueError):
            BufferedStreamConfig(capacity=10, start_fraction=0.0)
        with pytest.raises(ValueError):
            BufferedStreamConfig(capacity=10, start_fraction=1.5)

    def test_start_threshold_ceil(self):
        assert BufferedStreamConfig(capacity=50, start_fraction=0.10).start_threshold == 5
        assert BufferedStreamConfig(capacity=7, start_fraction=0.10).start_threshold == 1
        assert BufferedStreamConfig(capacity=10, start_fraction=0.25).start_threshold == 3


class TestDelivery:
    def test_transparent_order_preserving(self):
        src = source(500)
        out = list(open_buffered(src, BufferedStreamConfig(capacity=32)))
        assert out == src

    def test_short_source_below_threshold(self):
        src = source(3)
        cfg = BufferedStreamConfig(capacity=1000, start_fraction=0.1)
        assert list(open_buffered(src, cfg)) == src

    def test_capacity_smaller_than_source(self):
        src = source(200)
        assert list(open_buffered(src, BufferedStreamConfig(capacity=3))) == src

    def test_capacity_larger_than_source(self):
        src = source(5)
        assert list(open_buffered(src, BufferedStreamConfig(capacity=64))) == src

    def test_exactly_once_under_random_delays(self):
        for seed in range(8):
            src = source(2000)
            def delay(i, seed=seed):
                return 1e-4 if (i * 2654435761 + seed) % 199 == 0 else 0.0
            cfg = BufferedStreamConfig(capacity=128, producer_delay=delay)
            out = list(open_buffered(src, cfg))
            assert out == src
            assert Counter(s.id for s in out) == Counter(s.id for s in src)

    def test_first_read_waits_for_start_threshold(self):
        src = source(100)
        cfg = BufferedStreamConfig(capacity=50, start_fraction=0.1, producer_delay=0.002)
        stream = open_buffered(src, cfg)
        first = next(stream)
        assert first == src[0]
        assert stream._produced >= cfg.start_threshold

    def test_iteration_after_drain_stays_stopped(self):
        stream = open_buffered(source(2), BufferedStreamConfig(capacity=4))
        assert len(list(stream)) == 2
        with pytest.raises(StopIteration):
            next(stream)


class TestErrorPropagation:
    def test_error_after_queued_samples_drain(self):
        good = source(4)

        def failing():
            yield from good
            raise ValueError("backing store failed")

        stream = open_buffered(failing(), BufferedStreamConfig(capacity=16))
        received = []
        with pytest.raises(ValueError, match="backing store failed"):
            for s in stream:
                received.append(s)
        assert received == good


class TestStartLatency:
    def test_low_start_fraction_reads_sooner(self):
        delay = 0.0015
        timings = {}
        for frac in (0.1, 1.0):
            src = source(200)
            cfg = BufferedStreamConfig(
                capacity=100, start_fraction=frac, producer_delay=delay
            )
            t0 = time.monotonic()
            stream = open_buffered(src, cfg)
            next(stream)
            timings[frac] = time.monotonic() - t0
            list(stream)
        assert timings[0.1] < timings[1.0]
