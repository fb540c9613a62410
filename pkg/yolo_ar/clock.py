"""Clocks used for timing and for simulated delays.

A clock exposes ``now()`` (integer nanoseconds, monotonic) and
``sleep(seconds)``. The wall clock really waits; the virtual clock only moves
its counter forward, which makes mock-driven reports byte-reproducible.
"""

import threading
import time

SPIN_THRESHOLD_S = 0.001


class WallClock:
    name = "wall"

    def now(self) -> int:
        return time.perf_counter_ns()

    def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        deadline = time.perf_counter() + seconds
        # coarse sleep, then spin for the last millisecond
        while True:
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                return
            if remaining > SPIN_THRESHOLD_S:
                time.sleep(remaining - SPIN_THRESHOLD_S / 2)


class VirtualClock:
    name = "virtual"

    def __init__(self, start_ns: int = 0):
        self._now = start_ns
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        with self._lock:
            self._now += round(seconds * 1e9)


Clock = WallClock | VirtualClock
