"""Shared value types: versioned weights, gradient messages, staleness records."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class StalenessError(ValueError):
    """A gradient claims to come from weights newer than the server's."""


@dataclass(frozen=True)
class VersionedWeights:
    values: np.ndarray
    timestamp: int = 0

    def copy(self) -> VersionedWeights:
        return VersionedWeights(self.values.copy(), self.timestamp)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GradientMessage:
    """One learner's mini-batch gradient, already averaged over the batch."""

    gradient: np.ndarray
    learner_id: int
    computed_at: int


@dataclass(frozen=True)
class StalenessSample:
    update_index: int
    learner_id: int
    staleness: int

    def __post_init__(self):
        if self.staleness < 0:
            raise StalenessError(f"negative staleness {self.staleness}")


@dataclass
class StalenessTrace:
    samples: list[StalenessSample] = field(default_factory=list)
    protocol_n: int = 1
    lam: int = 1

    def __len__(self) -> int:
        return len(self.samples)

    def values(self) -> np.ndarray:
        return np.fromiter((s.staleness for s in self.samples), dtype=np.int64, count=len(self.samples))

    def per_update(self) -> list[list[int]]:
        """Group staleness values by update_index, preserving arrival order."""
        groups: list[list[int]] = []
        last = None
        for s in self.samples:
            if s.update_index != last:
                groups.append([])
                last = s.update_index
            groups[-1].append(s.staleness)
        return groups

    def extend(self, samples: Iterable[StalenessSample]) -> None:
        self.samples.extend(samples)


@dataclass(frozen=True)
class StalenessSummary:
    mean: float
    max: int
    histogram: dict[int, int]
    fraction_exceeding: float
    count: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "max": self.max,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "fraction_exceeding": self.fraction_exceeding,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> StalenessSummary:
        hist = {int(k): int(v) for k, v in d["histogram"].items()}
        return cls(float(d["mean"]), int(d["max"]), hist, float(d["fraction_exceeding"]), sum(hist.values()))


def compute_staleness(server_timestamp: int, gradient_timestamp: int) -> int:
    if gradient_timestamp < 0 or gradient_timestamp > server_timestamp:
        raise StalenessError(
            f"gradient timestamp {gradient_timestamp} is ahead of server timestamp {server_timestamp}"
        )
    return server_timestamp - gradient_timestamp


def summarize_staleness(trace: StalenessTrace) -> StalenessSummary:
    if not trace.samples:
        raise ValueError("cannot summarize an empty staleness trace")
    vals = trace.values()
    hist = Counter(vals.tolist())
    limit = 2 * trace.protocol_n
    return StalenessSummary(
        mean=float(vals.mean()),
        max=int(vals.max()),
        histogram=dict(sorted(hist.items())),
        fraction_exceeding=float(np.count_nonzero(vals > limit)) / vals.size,
        count=int(vals.size),
    )
