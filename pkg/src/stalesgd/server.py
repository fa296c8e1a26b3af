"""Parameter server with hardsync and n-softsync aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GradientMessage,
    StalenessSample,
    StalenessTrace,
    VersionedWeights,
    compute_staleness,
)
from .lr import LearningRatePolicy, epoch_of


class ProtocolViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    """``n=None`` means hardsync; otherwise n-softsync with 1 <= n <= lam."""

    lam: int
    mu: int
    n: int | None = None

    def __post_init__(self):
        if self.lam < 1 or self.mu < 1:
            raise ValueError("lam and mu must be >= 1")
        if self.n is not None and not 1 <= self.n <= self.lam:
            raise ValueError(f"softsync n={self.n} must satisfy 1 <= n <= lam={self.lam}")

    @classmethod
    def hardsync(cls, lam: int, mu: int) -> ProtocolConfig:
        return cls(lam, mu, None)

    @classmethod
    def softsync(cls, n: int, lam: int, mu: int) -> ProtocolConfig:
        return cls(lam, mu, n)

    @property
    def is_hardsync(self) -> bool:
        return self.n is None

    @property
    def c(self) -> int:
        """Gradients consumed per update."""
        return self.lam if self.is_hardsync else self.lam // self.n

    @property
    def staleness_n(self) -> int:
        return 1 if self.is_hardsync else self.n

    def describe(self) -> str:
        return "hardsync" if self.is_hardsync else f"{self.n}-softsync"


@dataclass
class UpdateRecord:
    update_index: int
    timestamp: int
    staleness: list[int]
    rates: list[float]
    learners: list[int]
    loss: float | None = None


@dataclass
class ParameterServer:
    """Single logical server. Mutate only through ``hardsync_update``,
    ``softsync_receive`` and ``current_weights``; callers that share one
    instance across threads must serialize those calls."""

    protocol: ProtocolConfig
    policy: LearningRatePolicy
    weights: VersionedWeights
    dataset_size: int
    momentum: float = 0.0
    pending: list[GradientMessage] = field(default_factory=list)
    trace: StalenessTrace = field(init=False)
    records: list[UpdateRecord] = field(default_factory=list)
    samples_processed: int = 0
    velocity: np.ndarray | None = None

    def __post_init__(self):
        self.trace = StalenessTrace(protocol_n=self.protocol.staleness_n, lam=self.protocol.lam)
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.momentum > 0 and self.velocity is None:
            self.velocity = np.zeros_like(self.weights.values)

    @classmethod
    def create(cls, protocol, policy, theta0, dataset_size, momentum=0.0) -> ParameterServer:
        w = VersionedWeights(np.array(theta0, dtype=np.float64), 0)
        return cls(protocol, policy, w, dataset_size, momentum)

    @property
    def timestamp(self) -> int:
        return self.weights.timestamp

    @property
    def epoch(self) -> float:
        return epoch_of(self.samples_processed, self.dataset_size)

    def current_weights(self) -> VersionedWeights:
        return self.weights.copy()

    def _check_learner(self, msg: GradientMessage):
        if not 0 <= msg.learner_id < self.protocol.lam:
            raise ProtocolViolation(f"unknown learner id {msg.learner_id}")
        if msg.gradient.shape != self.weights.values.shape:
            raise ProtocolViolation("gradient dimension does not match weights")

    def _apply(self, msgs: list[GradientMessage], divisor: int) -> UpdateRecord:
        i = self.timestamp
        epoch = self.epoch
        stale = [compute_staleness(i, m.computed_at) for m in msgs]
        rates = [self.policy.rate(s, epoch) for s in stale]
        if self.protocol.is_hardsync:
            # alpha * (1/lam) * sum, summed in learner order
            g = msgs[0].gradient.copy()
            for m in msgs[1:]:
                g += m.gradient
            g = rates[0] * (g / divisor)
        else:
            g = rates[0] * msgs[0].gradient
            for r, m in zip(rates[1:], msgs[1:]):
                g += r * m.gradient
            g /= divisor
        if self.velocity is not None:
            self.velocity = self.momentum * self.velocity + g
            g = self.velocity
        self.weights = VersionedWeights(self.weights.values - g, i + 1)
        self.samples_processed += len(msgs) * self.protocol.mu
        self.trace.extend(StalenessSample(i, m.learner_id, s) for m, s in zip(msgs, stale))
        rec = UpdateRecord(i, i + 1, stale, rates, [m.learner_id for m in msgs])
        self.records.append(rec)
        return rec

    def hardsync_update(self, gradients: list[GradientMessage]) -> UpdateRecord:
        if not self.protocol.is_hardsync:
            raise ProtocolViolation("hardsync_update called on a softsync server")
        lam = self.protocol.lam
        ids = sorted(m.learner_id for m in gradients)
        if ids != list(range(lam)):
            raise ProtocolViolation(f"hardsync needs exactly one gradient per learner, got ids {ids}")
        for m in gradients:
            self._check_learner(m)
            if m.computed_at != self.timestamp:
                raise ProtocolViolation(
                    f"learner {m.learner_id} gradient from timestamp {m.computed_at}, server at {self.timestamp}"
                )
        ordered = sorted(gradients, key=lambda m: m.learner_id)
        return self._apply(ordered, lam)

    def softsync_receive(self, msg: GradientMessage) -> UpdateRecord | None:
        """Queue one gradient; apply an update once c are held.

        Returns the update record when this message triggered an update,
        else None.
        """
        if self.protocol.is_hardsync:
            raise ProtocolViolation("softsync_receive called on a hardsync server")
        self._check_learner(msg)
        compute_staleness(self.timestamp, msg.computed_at)
        self.pending.append(msg)
        c = self.protocol.c
        if len(self.pending) < c:
            return None
        batch, self.pending = self.pending, []
        return self._apply(batch, c)
