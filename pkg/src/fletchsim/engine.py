"""Discrete-event core: a heap of (time, seq) keyed callbacks."""

from __future__ import annotations

import heapq
import itertools


class InvariantViolation(Exception):
    """Raised when a run breaks one of the continuously checked properties."""


class Engine:
    """Events fire in (time, insertion order).

    Daemon events (periodic timers) never keep a run alive on their own:
    ``run`` returns once only daemon events are left.
    """

    def __init__(self):
        self.now = 0.0
        self._q: list = []
        self._seq = itertools.count()
        self._live = 0
        self.fired = 0

    def at(self, t: float, fn, *args, daemon: bool = False) -> None:
        if t < self.now:
            t = self.now
        if not daemon:
            self._live += 1
        heapq.heappush(self._q, (t, next(self._seq), daemon, fn, args))

    def after(self, dt: float, fn, *args, daemon: bool = False) -> None:
        self.at(self.now + dt, fn, *args, daemon=daemon)

    def next_time(self) -> float:
        """Time of the earliest pending event, or +inf."""
        return self._q[0][0] if self._q else float("inf")

    def advance_to(self, t: float) -> None:
        """Move the clock forward for work done inline; caller has checked
        that nothing else is due before ``t``."""
        self.now = t

    @property
    def pending(self) -> int:
        return self._live

    def run(self, until: float | None = None) -> None:
        q = self._q
        while q and self._live > 0:
            t = q[0][0]
            if until is not None and t > until:
                break
            t, _, daemon, fn, args = heapq.heappop(q)
            if not daemon:
                self._live -= 1
            self.now = t
            self.fired += 1
            fn(*args)
