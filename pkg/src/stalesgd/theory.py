"""Convergence-bound machinery for staleness-scaled ASGD.

An aggregated update of c gradients is unrolled into c single-batch steps.
Step t then carries the adjusted staleness p_t, which is the original
staleness of the gradient at position t. Everything else here is closed-form
arithmetic over the sequence p.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import StalenessTrace


class TraceCorruption(ValueError):
    pass


@dataclass(frozen=True)
class DecomposedTrace:
    p: np.ndarray
    c: int
    n: int

    @property
    def T(self) -> int:
        return int(self.p.size)


@dataclass(frozen=True)
class TheoryConstants:
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    C4: float = 1.0
    mu: int = 1
    c: int = 1
    n: int = 1

    def __post_init__(self):
        if min(self.C1, self.C2, self.C3, self.C4) <= 0:
            raise ValueError("C1..C4 must be positive")
        if min(self.mu, self.c, self.n) < 1:
            raise ValueError("mu, c and n must be >= 1")


@dataclass(frozen=True)
class BoundReport:
    alpha0: float
    rhs: float
    prereq5_ok: bool
    prereq6_ok: bool
    first_violation: tuple[str, int] | None
    T: int
    constants: TheoryConstants

    def to_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "rhs": self.rhs,
            "prereq5_ok": self.prereq5_ok,
            "prereq6_ok": self.prereq6_ok,
            "first_violation": None if self.first_violation is None else list(self.first_violation),
            "boundary_terms": "dropped",
            "inputs": {"T": self.T, **asdict(self.constants)},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _p(p) -> np.ndarray:
    arr = np.asarray(p.p if isinstance(p, DecomposedTrace) else p, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("staleness sequence is empty")
    return arr


def decompose_trace(trace: StalenessTrace | Sequence[Sequence[int]], c: int, n: int | None = None,
                    strict: bool = False) -> DecomposedTrace:
    """Flatten per-update staleness lists into the single-batch sequence p.

    A staleness of 0 is mapped to 1, which is the divisor the
    staleness-inverse rate actually applies; ``strict=True`` rejects it
    instead. Negative values always raise.
    """
    if isinstance(trace, StalenessTrace):
        groups = trace.per_update()
        n = trace.protocol_n if n is None else n
    else:
        groups = [list(g) for g in trace]
    for k, g in enumerate(groups):
        if len(g) != c:
            raise TraceCorruption(f"update {k} holds {len(g)} gradients, expected c={c}")
    flat = np.array([s for g in groups for s in g], dtype=np.int64)
    if flat.size and flat.min() < 0:
        raise TraceCorruption("negative staleness in trace")
    if strict and flat.size and flat.min() == 0:
        t = int(np.argmin(flat))
        raise TraceCorruption(f"p_{t} = 0 is not positive")
    return DecomposedTrace(np.maximum(flat, 1), c, n if n is not None else 1)


def recommend_alpha0(k: TheoryConstants, p) -> float:
    """The base rate that balances the bound: sqrt(C1 c^2 mu / sum 2 C2 / p_t^2)."""
    p = _p(p)
    return math.sqrt(k.C1 * k.c**2 * k.mu / np.sum(2.0 * k.C2 / p**2))


def check_prerequisites(alpha0: float, k: TheoryConstants, p) -> tuple[bool, bool, tuple[str, int] | None]:
    """Evaluate both step-size prerequisites at every t (0-based).

    Window sums that reach outside [0, T) are truncated to the valid part.
    """
    p = _p(p)
    T = p.size
    n2 = 2 * k.n
    inv = 1.0 / p
    inv2 = inv**2
    cs2 = np.concatenate([[0.0], np.cumsum(inv2)])
    cs1 = np.concatenate([[0.0], np.cumsum(inv)])
    t = np.arange(T)

    # sum_{j=t-2n}^{t-1} 1/p_j^2
    back = cs2[t] - cs2[np.maximum(t - n2, 0)]
    with np.errstate(divide="ignore"):
        bound_back = np.where(back > 0, k.c * k.C2 / (k.C3 * p * back), np.inf)
    bad_back = np.flatnonzero(alpha0 > bound_back)

    # sum_{kappa=1}^{2n} 1/p_{t+kappa}
    fwd = cs1[np.minimum(t + n2 + 1, T)] - cs1[t + 1]
    lhs_fwd = k.C3 * alpha0 / (k.c * p) + k.C4 * k.n * alpha0**2 / (k.c**2 * p) * fwd
    bad_fwd = np.flatnonzero(lhs_fwd > 1.0)

    first = None
    if bad_back.size or bad_fwd.size:
        t_back = bad_back[0] if bad_back.size else T
        t_fwd = bad_fwd[0] if bad_fwd.size else T
        first = ("backward_window", int(t_back)) if t_back <= t_fwd else ("forward_window", int(t_fwd))
    return bad_back.size == 0, bad_fwd.size == 0, first


def bound_rhs(k: TheoryConstants, p) -> float:
    p = _p(p)
    return 2.0 * math.sqrt(2.0 * k.C1 * k.C2 / k.mu * np.sum(1.0 / p**2)) / np.sum(1.0 / p)


def h_staleness(z) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or np.any(z <= 0):
        raise ValueError("h needs a non-empty vector of positive entries")
    return float(math.sqrt(np.sum(z * z)) / np.sum(z))


def constant_staleness_rate(k: TheoryConstants, T: int) -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    return 2.0 * math.sqrt(2.0 * k.C1 * k.C2) / math.sqrt(T * k.mu)


def weighted_gradient_average(grad_norm_sq, p) -> float:
    """(1/p)-weighted mean of squared gradient norms, the bound's left side."""
    w = 1.0 / _p(p)
    g = np.asarray(grad_norm_sq, dtype=np.float64)
    if g.shape != w.shape:
        raise ValueError("need one gradient-norm sample per step")
    return float(np.sum(w * g) / np.sum(w))


def bound_report(k: TheoryConstants, p, alpha0: float | None = None) -> BoundReport:
    """Full evaluation at ``alpha0`` (the recommended value when omitted)."""
    p = _p(p)
    a = recommend_alpha0(k, p) if alpha0 is None else alpha0
    ok_back, ok_fwd, first = check_prerequisites(a, k, p)
    return BoundReport(a, bound_rhs(k, p), ok_back, ok_fwd, first, int(p.size), k)
