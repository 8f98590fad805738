"""Seeded discrete-event engine."""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field

# At equal times deliveries and arrivals run before timers, and metric samples last,
# so a response landing exactly on a deadline still counts.
RANK = {"deliver": 0, "packet_arrival": 0, "seal_tick": 1, "task_end": 1, "timer": 2, "sample": 3}


@dataclass
class SimEvent:
    time: float
    seq: int
    kind: str
    cancelled: bool = field(default=False, compare=False)


class Engine:
    def __init__(self):
        self.now = 0.0
        self.processed = 0
        self._heap: list = []
        self._seq = itertools.count()

    def schedule(self, time: float, kind: str, fn, *args) -> SimEvent:
        if time < self.now:
            raise ValueError(f"cannot schedule {kind} at {time} before clock {self.now}")
        ev = SimEvent(time, next(self._seq), kind)
        heapq.heappush(self._heap, (time, RANK[kind], ev.seq, ev, fn, args))
        return ev

    def after(self, delay: float, kind: str, fn, *args) -> SimEvent:
        return self.schedule(self.now + delay, kind, fn, *args)

    @staticmethod
    def cancel(ev: SimEvent) -> None:
        ev.cancelled = True

    def run(self, until: float) -> None:
        heap = self._heap
        while heap and heap[0][0] <= until:
            time, _, _, ev, fn, args = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = time
            self.processed += 1
            fn(*args)
        self.now = max(self.now, until)

    def pending(self) -> int:
        return sum(1 for item in self._heap if not item[3].cancelled)


def derive_rng(seed: int, stream: str) -> random.Random:
    """Independent stream per purpose; stable across processes (no str hashing)."""
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
