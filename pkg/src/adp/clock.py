"""Logical time for the data plane.

Every timestamp in credentials, rate windows, and transcript records comes
from one monotone counter so that a run is replayable tick for tick.  Wall
clock time never enters any persisted structure.
"""
from __future__ import annotations

import threading


class LogicalClock:
    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def advance(self, ticks: int = 1) -> int:
        """Move time forward and return the new value. Never moves backward."""
        if ticks < 0:
            raise ValueError("clock cannot move backward")
        with self._lock:
            self._now += ticks
            return self._now
