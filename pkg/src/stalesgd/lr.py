"""Learning-rate policies applied per gradient by the parameter server."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum


class RateMode(str, Enum):
    CONSTANT = "constant"
    STALENESS_INVERSE = "staleness_inverse"
    EXPONENTIAL_PENALTY = "exponential_penalty"


@dataclass(frozen=True)
class StepDecay:
    milestones: tuple[float, ...] = ()
    factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(float(m) for m in self.milestones))
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("decay factor must lie in (0, 1)")

    def multiplier(self, epoch: float) -> float:
        return self.factor ** bisect.bisect_right(self.milestones, epoch)


@dataclass(frozen=True)
class LearningRatePolicy:
    base: float
    mode: RateMode = RateMode.CONSTANT
    decay: StepDecay | None = None
    # only used by EXPONENTIAL_PENALTY: rate = base * gamma**tau
    gamma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", RateMode(self.mode))
        if not self.base > 0:
            raise ValueError("base learning rate must be positive")

    def base_at(self, epoch: float) -> float:
        return self.base if self.decay is None else self.base * self.decay.multiplier(epoch)

    def rate(self, staleness: int, epoch: float = 0.0) -> float:
        return effective_rate(self, staleness, epoch)

    def with_mode(self, mode) -> LearningRatePolicy:
        return LearningRatePolicy(self.base, RateMode(mode), self.decay, self.gamma)


def effective_rate(policy: LearningRatePolicy, staleness: int, epoch: float = 0.0) -> float:
    """Rate for one gradient. A fresh gradient (staleness 0) gets the full rate."""
    base = policy.base_at(epoch)
    if policy.mode is RateMode.STALENESS_INVERSE:
        return base / max(staleness, 1)
    if policy.mode is RateMode.EXPONENTIAL_PENALTY:
        return base * policy.gamma**staleness
    return base


def epoch_of(samples_processed: int, dataset_size: int) -> float:
    if dataset_size <= 0:
        raise ValueError("dataset_size must be positive")
    return samples_processed / dataset_size
