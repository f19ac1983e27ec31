"""Concurrent producer/consumer sample stream with a start threshold.

A background thread fills a bounded queue from the source; the consumer's
first read blocks until the queue holds a configurable fraction of its
capacity (or the producer finishes early), after which reads block only on
an empty queue.  Delivery is order-preserving and exactly-once; a producer
failure propagates to the consumer after the queued samples drain.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Union

from .datamodel import Sample

_END = object()


@dataclass(frozen=True, slots=True)
class BufferedStreamConfig:
    """Bounded queue capacity, start fraction and optional synthetic read latency."""

    capacity: int
    start_fraction: float = 0.10
    producer_delay: Optional[Union[float, Callable[[int], float]]] = None

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 < self.start_fraction <= 1.0:
            raise ValueError("start_fraction must be in (0, 1]")

    @property
    def start_threshold(self) -> int:
        return max(1, math.ceil(self.start_fraction * self.capacity))


class _Failure:
    __slots__ = ("error",)

    def __init__(self, error: BaseException) -> None:
        self.error = error


class BufferedSampleStream:
    """Iterator over a source that is filled by a producer thread."""

    def __init__(self, source: Iterable[Sample], cfg: BufferedStreamConfig) -> None:
        self.cfg = cfg
        self._queue: queue.Queue = queue.Queue(maxsize=cfg.capacity)
        self._started = threading.Event()
        self._produced = 0
        self._first_read_done = False
        self._done = False
        self._thread = threading.Thread(
            target=self._produce, args=(iter(source),), daemon=True
        )
        self._thread.start()

    def _produce(self, source: Iterator[Sample]) -> None:
        delay = self.cfg.producer_delay
        index = 0
        try:
            for sample in source:
                if delay is not None:
                    pause = delay(index) if callable(delay) else delay
                    if pause > 0:
                        time.sleep(pause)
                self._queue.put(sample)
                index += 1
                self._produced += 1
                if self._produced >= self.cfg.start_threshold:
                    self._started.set()
        except BaseException as exc:  # noqa: BLE001 - handed to the consumer
            self._queue.put(_Failure(exc))
        else:
            self._queue.put(_END)
        finally:
            self._started.set()

    def __iter__(self) -> Iterator[Sample]:
        return self

    def __next__(self) -> Sample:
        if self._done:
            raise StopIteration
        if not self._first_read_done:
            self._started.wait()
            self._first_read_done = True
        item = self._queue.get()
        if item is _END:
            self._done = True
            raise StopIteration
        if isinstance(item, _Failure):
            self._done = True
            raise item.error
        return item


def open_buffered(
    source: Iterable[Sample], cfg: BufferedStreamConfig
) -> BufferedSampleStream:
    """Wrap a sample source in a concurrently-filled bounded buffer."""
    return BufferedSampleStream(source, cfg)
