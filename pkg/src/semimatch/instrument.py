"""Lightweight op counters used by tests and benchmark assertions.

A single process-wide counter table is enough at desk scale; the training
tape is single-threaded and benchmark runs pin one worker.
"""
from __future__ import annotations

from collections import Counter


class OpCounters:
    def __init__(self) -> None:
        self._counts: Counter[str] = Counter()

    def add(self, key: str, amount: int = 1) -> None:
        self._counts[key] += amount

    def __getitem__(self, key: str) -> int:
        return self._counts.get(key, 0)

    def reset(self, *keys: str) -> None:
        """Reset the given keys, or everything when called without arguments."""
        if keys:
            for key in keys:
                self._counts.pop(key, None)
        else:
            self._counts.clear()

    def snapshot(self) -> dict[str, int]:
        return dict(self._counts)


counters = OpCounters()
