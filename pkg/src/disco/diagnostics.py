"""Counters for rare repair/skip events inside the calibration loop."""

from __future__ import annotations

from collections import Counter


class Diagnostics:
    """Tallies repair events (corner swaps, clamps, skipped inputs).

    Functions that can repair or skip pathological inputs accept an
    optional instance and bump a named counter instead of logging, so
    reports can surface how often each repair fired.
    """

    def __init__(self) -> None:
        self.counts: Counter[str] = Counter()

    def bump(self, key: str, n: int = 1) -> None:
        if n:
            self.counts[key] += int(n)

    def merge(self, other: "Diagnostics") -> None:
        self.counts.update(other.counts)

    def as_dict(self) -> dict[str, int]:
        return {key: int(value) for key, value in sorted(self.counts.items())}
