"""Cluster simulation: lam learners cycling pull -> compute -> push.

``run_simulation`` is a deterministic discrete-event model. The server is
one serialization point: every pull and every push occupies it for the
learner's ``comm_time`` and requests are served first come first served,
with ties broken by (time, learner_id). ``run_concurrent`` runs the same
learner loop on real threads against a lock-guarded server.
"""
from __future__ import annotations

import heapq
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import StalenessTrace, VersionedWeights
from .lr import LearningRatePolicy, epoch_of
from .objectives import Objective
from .server import GradientMessage, ParameterServer, ProtocolConfig, UpdateRecord


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TimingModel:
    """Constant duration ``d`` or uniform jitter on [d(1-eps), d(1+eps)]."""

    d: float
    eps: float = 0.0

    def __post_init__(self):
        if self.d < 0:
            raise ConfigError("duration must be non-negative")
        if not 0.0 <= self.eps < 1.0:
            raise ConfigError("jitter eps must lie in [0, 1)")

    @classmethod
    def constant(cls, d: float) -> TimingModel:
        return cls(d, 0.0)

    @classmethod
    def jitter(cls, d: float, eps: float) -> TimingModel:
        return cls(d, eps)

    def draw(self, rng: np.random.Generator) -> float:
        if self.eps == 0.0:
            return self.d
        return rng.uniform(self.d * (1.0 - self.eps), self.d * (1.0 + self.eps))


def stream(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def learner_seed(master_seed: int, learner_id: int) -> int:
    return int(np.random.SeedSequence([master_seed, learner_id]).generate_state(1)[0])


@dataclass(frozen=True)
class LearnerModel:
    learner_id: int
    compute_time: TimingModel
    comm_time: TimingModel
    rng_seed: int

    def __post_init__(self):
        if self.compute_time.d <= 0:
            raise ConfigError("compute time must be strictly positive")

    def batch_rng(self) -> np.random.Generator:
        return stream(self.rng_seed, 1)

    def timing_rng(self) -> np.random.Generator:
        return stream(self.rng_seed, 2)


def make_learners(lam: int, compute: TimingModel, comm: TimingModel, master_seed: int) -> list[LearnerModel]:
    return [LearnerModel(l, compute, comm, learner_seed(master_seed, l)) for l in range(lam)]


@dataclass(frozen=True)
class Stop:
    updates: int | None = None
    epochs: float | None = None

    def __post_init__(self):
        if (self.updates is None) == (self.epochs is None):
            raise ConfigError("stop needs exactly one of updates or epochs")
        if self.updates is not None and self.updates < 1:
            raise ConfigError("stop.updates must be >= 1")
        if self.epochs is not None and self.epochs <= 0:
            raise ConfigError("stop.epochs must be positive")

    def reached(self, updates: int, samples: int, dataset_size: int) -> bool:
        if self.updates is not None:
            return updates >= self.updates
        return samples >= self.epochs * dataset_size


@dataclass
class SimConfig:
    protocol: ProtocolConfig
    objective: Objective
    policy: LearningRatePolicy
    learners: list[LearnerModel]
    stop: Stop
    master_seed: int = 0
    loss_sample_interval: int = 50
    momentum: float = 0.0
    divergence_factor: float = 1e6
    record_weights: bool = False

    def validate(self) -> None:
        if not self.learners:
            raise ConfigError("simulation needs at least one learner")
        if len(self.learners) != self.protocol.lam:
            raise ConfigError(f"{len(self.learners)} learners configured but lam={self.protocol.lam}")
        if sorted(l.learner_id for l in self.learners) != list(range(self.protocol.lam)):
            raise ConfigError("learner ids must be 0..lam-1")
        if self.loss_sample_interval < 1:
            raise ConfigError("loss_sample_interval must be >= 1")

    def initial_weights(self) -> np.ndarray:
        return self.objective.init_params(stream(self.master_seed, 0))

    def with_lambda(self, lam: int) -> SimConfig:
        """Same cluster description at a different learner count; softsync keeps c fixed."""
        p = self.protocol
        n = None if p.is_hardsync else max(1, lam // p.c)
        template = self.learners[0]
        learners = make_learners(lam, template.compute_time, template.comm_time, self.master_seed)
        return replace(self, protocol=ProtocolConfig(lam, p.mu, n), learners=learners)


@dataclass(frozen=True)
class LossPoint:
    update_index: int
    sim_time: float
    loss: float
    grad_norm_sq: float
    epoch: float


@dataclass
class RunTrace:
    staleness: StalenessTrace
    loss_curve: list[LossPoint]
    sim_wallclock: float
    updates_applied: int
    samples_processed: int
    protocol: ProtocolConfig
    dataset_size: int
    final_weights: np.ndarray
    records: list[UpdateRecord] = field(default_factory=list)
    weights_history: list[np.ndarray] | None = None
    status: str = "ok"

    @property
    def diverged(self) -> bool:
        return self.status == "NC"

    @property
    def epochs(self) -> float:
        return epoch_of(self.samples_processed, self.dataset_size)

    @property
    def time_per_epoch(self) -> float:
        return self.sim_wallclock / self.epochs

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1].loss


class _Monitor:
    """Loss sampling and divergence detection shared by both executors."""

    def __init__(self, cfg: SimConfig, server: ParameterServer):
        self.cfg = cfg
        self.server = server
        self.curve: list[LossPoint] = []
        self.history = [server.weights.values.copy()] if cfg.record_weights else None
        self.initial_loss = self._sample(0.0)
        self.status = "ok"

    def _sample(self, t: float) -> float:
        obj = self.cfg.objective
        theta = self.server.weights.values
        with np.errstate(over="ignore", invalid="ignore"):
            loss = obj.full_loss(theta)
            gn = obj.gradient_norm_sq(theta)
        self.curve.append(LossPoint(self.server.timestamp, t, loss, gn, self.server.epoch))
        return loss

    def after_update(self, t: float) -> bool:
        """Record the update at simulated/real time ``t``; True means stop."""
        s = self.server
        if self.history is not None:
            self.history.append(s.weights.values.copy())
        done = self.cfg.stop.reached(s.timestamp, s.samples_processed, s.dataset_size)
        if done or s.timestamp % self.cfg.loss_sample_interval == 0:
            loss = self._sample(t)
            s.records[-1].loss = loss
            limit = self.cfg.divergence_factor * abs(self.initial_loss)
            if not np.isfinite(loss) or loss > limit:
                self.status = "NC"
                return True
        return done

    def finish(self, t: float) -> RunTrace:
        s = self.server
        if self.curve[-1].update_index != s.timestamp:
            self._sample(t)
        return RunTrace(
            staleness=s.trace,
            loss_curve=self.curve,
            sim_wallclock=t,
            updates_applied=s.timestamp,
            samples_processed=s.samples_processed,
            protocol=s.protocol,
            dataset_size=s.dataset_size,
            final_weights=s.weights.values.copy(),
            records=s.records,
            weights_history=self.history,
            status=self.status,
        )


def _new_server(cfg: SimConfig) -> ParameterServer:
    return ParameterServer.create(
        cfg.protocol, cfg.policy, cfg.initial_weights(), cfg.objective.dataset_size, cfg.momentum
    )


_PULL, _PUSH = 0, 1


def run_simulation(cfg: SimConfig) -> RunTrace:
    """Deterministic discrete-event run of the learner loop."""
    cfg.validate()
    lam, mu = cfg.protocol.lam, cfg.protocol.mu
    hard = cfg.protocol.is_hardsync
    obj = cfg.objective
    N = obj.dataset_size
    server = _new_server(cfg)
    mon = _Monitor(cfg, server)

    learners = sorted(cfg.learners, key=lambda m: m.learner_id)
    batch_rngs = [m.batch_rng() for m in learners]
    time_rngs = [m.timing_rng() for m in learners]
    snapshots: list[VersionedWeights | None] = [None] * lam
    batches: list[np.ndarray | None] = [None] * lam
    round_buf: list[GradientMessage] = []
    parked: list[int] = []
    free_at = 0.0
    now = 0.0

    # heap entries are (time, learner_id, kind); each learner has one pending event
    events = [(0.0, l, _PULL) for l in range(lam)]
    heapq.heapify(events)

    with np.errstate(over="ignore", invalid="ignore"):
        while events:
            t, l, kind = heapq.heappop(events)
            m = learners[l]
            trng = time_rngs[l]
            if kind == _PULL:
                start = max(t, free_at)
                free_at = start + m.comm_time.draw(trng)
                snapshots[l] = server.current_weights()
                batches[l] = batch_rngs[l].integers(0, N, size=mu)
                heapq.heappush(events, (free_at + m.compute_time.draw(trng), l, _PUSH))
                continue

            snap = snapshots[l]
            grad = obj.minibatch_gradient(snap.values, batches[l])
            msg = GradientMessage(grad, l, snap.timestamp)
            start = max(t, free_at)
            free_at = start + m.comm_time.draw(trng)
            done_at = free_at
            if hard:
                round_buf.append(msg)
                if len(round_buf) < lam:
                    parked.append(l)
                    continue
                server.hardsync_update(round_buf)
                round_buf = []
                now = done_at
                if mon.after_update(done_at):
                    break
                for p in parked:
                    heapq.heappush(events, (done_at, p, _PULL))
                parked = []
                heapq.heappush(events, (done_at, l, _PULL))
            else:
                if server.softsync_receive(msg) is not None:
                    now = done_at
                    if mon.after_update(done_at):
                        break
                heapq.heappush(events, (done_at, l, _PULL))
    return mon.finish(now)


def run_concurrent(cfg: SimConfig, timeout: float | None = None) -> RunTrace:
    """Threaded executor: one thread per learner, one lock around the server.

    Timing models are ignored. ``sim_time`` in the loss curve is real
    elapsed seconds.
    """
    cfg.validate()
    lam, mu = cfg.protocol.lam, cfg.protocol.mu
    hard = cfg.protocol.is_hardsync
    obj = cfg.objective
    N = obj.dataset_size
    server = _new_server(cfg)
    mon = _Monitor(cfg, server)
    cond = threading.Condition()
    stop = threading.Event()
    round_buf: list[GradientMessage] = []
    errors: list[BaseException] = []
    t0 = time.perf_counter()
    end = [0.0]

    def finish_update():
        end[0] = time.perf_counter() - t0
        if mon.after_update(end[0]):
            stop.set()
        cond.notify_all()

    def learner(model: LearnerModel):
        l = model.learner_id
        rng = model.batch_rng()
        try:
            while not stop.is_set():
                with cond:
                    if stop.is_set():
                        return
                    snap = server.current_weights()
                batch = rng.integers(0, N, size=mu)
                with np.errstate(over="ignore", invalid="ignore"):
                    grad = obj.minibatch_gradient(snap.values, batch)
                msg = GradientMessage(grad, l, snap.timestamp)
                with cond:
                    if stop.is_set():
                        return
                    if hard:
                        round_buf.append(msg)
                        if len(round_buf) == lam:
                            with np.errstate(over="ignore", invalid="ignore"):
                                server.hardsync_update(list(round_buf))
                            round_buf.clear()
                            finish_update()
                        else:
                            cond.wait_for(lambda: stop.is_set() or server.timestamp > snap.timestamp)
                    else:
                        with np.errstate(over="ignore", invalid="ignore"):
                            applied = server.softsync_receive(msg)
                        if applied is not None:
                            finish_update()
        except BaseException as exc:  # surfaced in the caller
            errors.append(exc)
            with cond:
                stop.set()
                cond.notify_all()

    threads = [threading.Thread(target=learner, args=(m,), daemon=True) for m in cfg.learners]
    for th in threads:
        th.start()
    for th in threads:
        th.join(timeout)
    if any(th.is_alive() for th in threads):
        with cond:
            stop.set()
            cond.notify_all()
        raise TimeoutError("concurrent run did not finish in time")
    if errors:
        raise errors[0]
    return mon.finish(end[0])


def measure_speedup(cfg: SimConfig, lambdas: Sequence[int]) -> list[tuple[int, float]]:
    """Simulated time-per-epoch at lam=1 divided by time-per-epoch at each lam."""
    base = run_simulation(cfg.with_lambda(1)).time_per_epoch
    out = []
    for lam in lambdas:
        tpe = base if lam == 1 else run_simulation(cfg.with_lambda(lam)).time_per_epoch
        out.append((lam, base / tpe))
    return out
