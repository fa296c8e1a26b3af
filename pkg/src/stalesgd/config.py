"""Experiment configuration: YAML document validated by pydantic.

Unknown keys anywhere in the document are rejected.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .lr import LearningRatePolicy, StepDecay
from .objectives import ObjectiveSpec
from .server import ProtocolConfig
from .sim import ConfigError, SimConfig, Stop, TimingModel, make_learners
from .theory import TheoryConstants


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ObjectiveSection(_Strict):
    kind: Literal["quadratic", "logistic", "mlp"] = "quadratic"
    dataset_size: int = Field(1000, gt=0)
    seed: int = 0
    eigenvalues: list[float] | None = None
    b: list[float] | None = None
    curvature: Literal["shared", "rank_one"] = "shared"
    noise: float = Field(0.0, ge=0.0)
    features: int = Field(10, gt=0)
    l2: float = Field(0.0, ge=0.0)
    margin: float = Field(1.0, gt=0.0)
    sizes: list[int] = Field(default_factory=lambda: [2, 4, 1], min_length=2)

    @model_validator(mode="after")
    def _quadratic_shapes(self):
        if self.eigenvalues is not None and any(e < 0 for e in self.eigenvalues):
            raise ValueError("eigenvalues must be non-negative")
        if self.b is not None and self.eigenvalues is not None and len(self.b) != len(self.eigenvalues):
            raise ValueError("b and eigenvalues must have the same length")
        return self

    def spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(**self.model_dump())


class ProtocolSection(_Strict):
    mode: Literal["hardsync", "softsync"] = "softsync"
    lam: int = Field(1, ge=1)
    n: int | None = Field(None, ge=1)
    mu: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _n_range(self):
        if self.mode == "softsync":
            if self.n is None:
                raise ValueError("softsync needs n")
            if self.n > self.lam:
                raise ValueError(f"n={self.n} exceeds lam={self.lam}")
        return self

    def build(self) -> ProtocolConfig:
        return ProtocolConfig(self.lam, self.mu, None if self.mode == "hardsync" else self.n)


class DecaySection(_Strict):
    milestones: list[float] = Field(default_factory=list)
    factor: float = Field(0.1, gt=0.0, lt=1.0)


class LRSection(_Strict):
    base: float = Field(0.01, gt=0.0)
    mode: Literal["constant", "staleness_inverse", "exponential_penalty"] = "staleness_inverse"
    gamma: float = Field(0.5, gt=0.0, le=1.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    decay: DecaySection | None = None

    def build(self, mode: str | None = None) -> LearningRatePolicy:
        decay = None if self.decay is None else StepDecay(tuple(self.decay.milestones), self.decay.factor)
        return LearningRatePolicy(self.base, mode or self.mode, decay, self.gamma)


class TimingSpec(_Strict):
    d: float = Field(1.0, ge=0.0)
    eps: float = Field(0.0, ge=0.0, lt=1.0)

    def build(self) -> TimingModel:
        return TimingModel(self.d, self.eps)


class TimingSection(_Strict):
    compute: TimingSpec = Field(default_factory=lambda: TimingSpec(d=1.0))
    comm: TimingSpec = Field(default_factory=lambda: TimingSpec(d=0.01))


class StopSection(_Strict):
    updates: int | None = Field(None, ge=1)
    epochs: float | None = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.updates is None) == (self.epochs is None):
            raise ValueError("set exactly one of updates or epochs")
        return self


class SeedSection(_Strict):
    master: int = 0
    replicates: int = Field(1, ge=1)


class OutputSection(_Strict):
    dir: str = "out"
    loss_sample_interval: int = Field(50, ge=1)


class TheorySection(_Strict):
    C1: float = Field(1.0, gt=0.0)
    C2: float = Field(1.0, gt=0.0)
    C3: float = Field(1.0, gt=0.0)
    C4: float = Field(1.0, gt=0.0)


class SweepCell(_Strict):
    mu: int = Field(ge=1)
    lam: int = Field(ge=1)
    n: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _n_range(self):
        if self.n is not None and self.n > self.lam:
            raise ValueError(f"n={self.n} exceeds lam={self.lam}")
        return self


class SweepSection(_Strict):
    cells: list[SweepCell] = Field(min_length=1)
    policies: list[Literal["constant", "staleness_inverse"]] = Field(
        default_factory=lambda: ["constant", "staleness_inverse"], min_length=1
    )


class ExperimentConfig(_Strict):
    objective: ObjectiveSection = Field(default_factory=ObjectiveSection)
    protocol: ProtocolSection = Field(default_factory=lambda: ProtocolSection(mode="hardsync"))
    lr: LRSection = Field(default_factory=LRSection)
    timing: TimingSection = Field(default_factory=TimingSection)
    stop: StopSection = Field(default_factory=lambda: StopSection(updates=1000))
    seeds: SeedSection = Field(default_factory=SeedSection)
    output: OutputSection = Field(default_factory=OutputSection)
    theory: TheorySection = Field(default_factory=TheorySection)
    sweep: SweepSection | None = None

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def sim_config(self, *, seed: int | None = None, mode: str | None = None, record_weights: bool = False,
                   objective=None) -> SimConfig:
        master = self.seeds.master if seed is None else seed
        protocol = self.protocol.build()
        learners = make_learners(protocol.lam, self.timing.compute.build(), self.timing.comm.build(), master)
        return SimConfig(
            protocol=protocol,
            objective=objective if objective is not None else self.objective.spec().build(),
            policy=self.lr.build(mode),
            learners=learners,
            stop=Stop(self.stop.updates, self.stop.epochs),
            master_seed=master,
            loss_sample_interval=self.output.loss_sample_interval,
            momentum=self.lr.momentum,
            record_weights=record_weights,
        )

    def theory_constants(self) -> TheoryConstants:
        p = self.protocol.build()
        t = self.theory
        return TheoryConstants(t.C1, t.C2, t.C3, t.C4, mu=p.mu, c=p.c, n=p.staleness_n)

    def cell(self, mu: int, lam: int, n: int | None, mode: str) -> ExperimentConfig:
        """Copy of this config at another (mu, lam, n) with the given lr mode."""
        d = self.to_dict()
        d.pop("sweep", None)
        d["protocol"] = {"mode": "softsync", "lam": lam, "mu": mu, "n": lam if n is None else n}
        d["lr"]["mode"] = mode
        return ExperimentConfig.model_validate(d)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data: dict | str) -> ExperimentConfig:
    if isinstance(data, str):
        try:
            data = yaml.safe_load(data)
        except yaml.YAMLError as exc:
            raise ConfigError(f"<root>: not valid YAML ({exc})") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
