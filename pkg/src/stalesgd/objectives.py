"""Desk-scale finite-sum objectives F(theta) = mean_i f_i(theta).

Every objective exposes per-batch gradients (already divided by the batch
size), the full loss and full gradient, and a central-difference oracle for
checking the analytic gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_MLP_PARAMS = 10_000


class DimensionError(ValueError):
    pass


class Objective:
    """Base class. Subclasses implement ``_loss_terms`` and ``_grad_sum``."""

    kind = "objective"
    dataset_size: int
    dimension: int

    def _check(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dimension,):
            raise DimensionError(f"expected theta of shape ({self.dimension},), got {theta.shape}")
        return theta

    def _check_batch(self, batch) -> np.ndarray:
        idx = np.asarray(batch, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("batch must be a non-empty 1-d index list")
        if idx.min() < 0 or idx.max() >= self.dataset_size:
            raise IndexError(f"batch index out of range [0, {self.dataset_size})")
        return idx

    # per-sample losses for the given indices
    def _loss_terms(self, theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # sum over idx of per-sample gradients
    def _grad_sum(self, theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def minibatch_gradient(self, theta, batch) -> np.ndarray:
        theta = self._check(theta)
        idx = self._check_batch(batch)
        return self._grad_sum(theta, idx) / idx.size

    def full_loss(self, theta) -> float:
        theta = self._check(theta)
        return float(np.mean(self._loss_terms(theta, self._all)))

    def full_gradient(self, theta) -> np.ndarray:
        theta = self._check(theta)
        return self._grad_sum(theta, self._all) / self.dataset_size

    def gradient_norm_sq(self, theta) -> float:
        g = self.full_gradient(theta)
        return float(g @ g)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=self.dimension)

    @property
    def _all(self) -> np.ndarray:
        return np.arange(self.dataset_size)


class Quadratic(Objective):
    """f_i(theta) = 1/2 theta' A_i theta - b_i' theta + k_i.

    Curvature is either shared (A_i = A for every sample) or rank one
    (A_i = x_i x_i', i.e. least squares with rows x_i). In both cases the
    per-sample terms average exactly to the configured A and b, and the
    constants k_i are chosen so that each f_i is bounded below and the
    full loss is shifted by a known constant.
    """

    kind = "quadratic"

    def __init__(self, A, b, *, rows=None, b_samples=None, k_samples=None, dataset_size=None):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        d = self.b.shape[0]
        if self.A.shape != (d, d):
            raise DimensionError("A must be square and match b")
        if not np.allclose(self.A, self.A.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(self.A).min() < -1e-10:
            raise ValueError("A must be positive semidefinite")
        self.dimension = d
        self.rows = None if rows is None else np.asarray(rows, dtype=np.float64)
        if b_samples is None:
            n = dataset_size if dataset_size is not None else 1
            b_samples = np.broadcast_to(self.b, (n, d))
        self.b_samples = np.asarray(b_samples, dtype=np.float64)
        self.dataset_size = self.b_samples.shape[0]
        if self.rows is not None and self.rows.shape != (self.dataset_size, d):
            raise DimensionError("rows must have shape (N, d)")
        if k_samples is None:
            k_samples = np.full(self.dataset_size, 0.5 * self.minimizer() @ self.A @ self.minimizer())
        self.k_samples = np.asarray(k_samples, dtype=np.float64)

    def minimizer(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.b, rcond=None)[0]

    def optimal_loss(self) -> float:
        return self.full_loss(self.minimizer())

    def _loss_terms(self, theta, idx):
        if self.rows is None:
            quad = 0.5 * theta @ self.A @ theta
        else:
            quad = 0.5 * (self.rows[idx] @ theta) ** 2
        return quad - self.b_samples[idx] @ theta + self.k_samples[idx]

    def _grad_sum(self, theta, idx):
        if self.rows is None:
            curv = idx.size * (self.A @ theta)
        else:
            xs = self.rows[idx]
            curv = xs.T @ (xs @ theta)
        return curv - self.b_samples[idx].sum(axis=0)

    @classmethod
    def generate(cls, A, b, dataset_size: int, seed: int, *, curvature: str = "shared", noise: float = 0.0):
        """Seeded finite-sum quadratic whose sample averages equal (A, b).

        ``curvature="shared"`` puts all the noise in b_i (scale ``noise``).
        ``curvature="rank_one"`` builds least-squares rows x_i with
        mean x_i x_i' = A exactly and targets with residual scale ``noise``.
        """
        A = np.asarray(A, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        d = b.shape[0]
        rng = np.random.default_rng(seed)
        if curvature == "shared":
            e = rng.standard_normal((dataset_size, d))
            e -= e.mean(axis=0)
            return cls(A, b, b_samples=b + noise * e)
        if curvature != "rank_one":
            raise ValueError(f"unknown curvature mode {curvature!r}")
        if dataset_size < d:
            raise ValueError("rank_one curvature needs dataset_size >= dimension")
        q, _ = np.linalg.qr(rng.standard_normal((dataset_size, d)))
        w, V = np.linalg.eigh(A)
        sqrtA = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        X = np.sqrt(dataset_size) * q @ sqrtA
        theta_star = np.linalg.lstsq(A, b, rcond=None)[0]
        if not np.allclose(A @ theta_star, b, atol=1e-9):
            raise ValueError("b must lie in the range of A")
        eps = rng.standard_normal(dataset_size)
        # residual orthogonal to the columns of X keeps mean(b_i) == b exactly
        eps -= q @ (q.T @ eps)
        y = X @ theta_star + noise * eps
        return cls(A, b, rows=X, b_samples=X * y[:, None], k_samples=0.5 * y**2)


class LogisticRegression(Objective):
    """Binary cross-entropy on features X with an appended bias weight."""

    kind = "logistic"

    def __init__(self, X, y, l2: float = 0.0):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DimensionError("X must be (N, d) and y must be (N,)")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")
        self.l2 = float(l2)
        self.dataset_size = self.X.shape[0]
        self.dimension = self.X.shape[1] + 1

    def _logits(self, theta, idx):
        return self.X[idx] @ theta[:-1] + theta[-1]

    def _loss_terms(self, theta, idx):
        z = self._logits(theta, idx)
        reg = 0.5 * self.l2 * (theta[:-1] @ theta[:-1])
        return np.logaddexp(0.0, z) - self.y[idx] * z + reg

    def _grad_sum(self, theta, idx):
        z = self._logits(theta, idx)
        r = 0.5 * (1.0 + np.tanh(0.5 * z)) - self.y[idx]  # sigmoid(z) - y, overflow-free
        g = np.empty(self.dimension)
        g[:-1] = self.X[idx].T @ r + idx.size * self.l2 * theta[:-1]
        g[-1] = r.sum()
        return g

    @classmethod
    def generate(cls, dataset_size: int, features: int, seed: int, *, l2: float = 0.0, scale: float = 1.0):
        """Labels drawn from a random logistic teacher, so the classes overlap."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((dataset_size, features))
        w = scale * rng.standard_normal(features) / np.sqrt(features)
        p = 1.0 / (1.0 + np.exp(-(X @ w)))
        y = (rng.random(dataset_size) < p).astype(np.float64)
        return cls(X, y, l2=l2)


@dataclass
class _Layer:
    w_slice: slice
    b_slice: slice
    shape: tuple[int, int]


class TinyMLP(Objective):
    """Fully connected tanh network with a linear output and squared error.

    Parameters live in one flat vector; ``unflatten`` returns per-layer
    (W, b) views into it.
    """

    kind = "mlp"

    def __init__(self, sizes: Sequence[int], inputs, targets):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64).reshape(len(self.inputs), -1)
        if self.inputs.shape[1] != self.sizes[0] or self.targets.shape[1] != self.sizes[-1]:
            raise DimensionError("data does not match layer sizes")
        self.layers: list[_Layer] = []
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(off, off + fan_in * fan_out)
            off += fan_in * fan_out
            b = slice(off, off + fan_out)
            off += fan_out
            self.layers.append(_Layer(w, b, (fan_out, fan_in)))
        if off > MAX_MLP_PARAMS:
            raise ValueError(f"{off} parameters exceeds the {MAX_MLP_PARAMS} cap")
        self.dimension = off
        self.dataset_size = self.inputs.shape[0]

    def unflatten(self, theta):
        return [(theta[l.w_slice].reshape(l.shape), theta[l.b_slice]) for l in self.layers]

    def flatten(self, params) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])

    def _forward(self, theta, idx):
        acts = [self.inputs[idx]]
        params = self.unflatten(theta)
        for k, (W, b) in enumerate(params):
            z = acts[-1] @ W.T + b
            acts.append(z if k == len(params) - 1 else np.tanh(z))
        return acts, params

    def _loss_terms(self, theta, idx):
        acts, _ = self._forward(theta, idx)
        err = acts[-1] - self.targets[idx]
        return 0.5 * np.sum(err * err, axis=1)

    def _grad_sum(self, theta, idx):
        acts, params = self._forward(theta, idx)
        grad = np.empty(self.dimension)
        delta = acts[-1] - self.targets[idx]
        for k in range(len(params) - 1, -1, -1):
            layer = self.layers[k]
            grad[layer.w_slice] = (delta.T @ acts[k]).ravel()
            grad[layer.b_slice] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ params[k][0]) * (1.0 - acts[k] ** 2)
        return grad

    @classmethod
    def generate(cls, sizes: Sequence[int], dataset_size: int, seed: int, *, noise: float = 0.1):
        """Regression data from a random teacher network of the same shape."""
        rng = np.random.default_rng(seed)
        inputs = rng.standard_normal((dataset_size, sizes[0]))
        teacher = cls(sizes, inputs, np.zeros((dataset_size, sizes[-1])))
        theta = rng.standard_normal(teacher.dimension)
        acts, _ = teacher._forward(theta, teacher._all)
        targets = acts[-1] + noise * rng.standard_normal(acts[-1].shape)
        return cls(sizes, inputs, targets)


def minibatch_gradient(obj: Objective, theta, batch) -> np.ndarray:
    return obj.minibatch_gradient(theta, batch)


def full_loss(obj: Objective, theta) -> float:
    return obj.full_loss(theta)


def gradient_norm_sq(obj: Objective, theta) -> float:
    return obj.gradient_norm_sq(theta)


def finite_difference_check(obj: Objective, theta, step: float = 1e-5) -> float:
    """Largest coordinate error of the analytic gradient against central
    differences of ``full_loss``, relative to the gradient's max-norm."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = obj._check(theta)
    g = obj.full_gradient(theta)
    fd = np.empty_like(g)
    probe = theta.copy()
    for k in range(theta.size):
        probe[k] = theta[k] + step
        up = obj.full_loss(probe)
        probe[k] = theta[k] - step
        down = obj.full_loss(probe)
        probe[k] = theta[k]
        fd[k] = (up - down) / (2.0 * step)
    scale = max(np.abs(g).max(), np.abs(fd).max(), 1e-12)
    return float(np.abs(g - fd).max() / scale)


@dataclass
class ObjectiveSpec:
    """Declarative objective description as it appears in a config file."""

    kind: str = "quadratic"
    dataset_size: int = 1000
    seed: int = 0
    # quadratic
    eigenvalues: list[float] | None = None
    b: list[float] | None = None
    curvature: str = "shared"
    noise: float = 0.0
    # logistic
    features: int = 10
    l2: float = 0.0
    margin: float = 1.0
    # mlp
    sizes: list[int] = field(default_factory=lambda: [2, 4, 1])

    def build(self) -> Objective:
        if self.kind == "quadratic":
            eig = np.asarray(self.eigenvalues if self.eigenvalues is not None else [1.0, 1.0], dtype=np.float64)
            d = eig.size
            rng = np.random.default_rng(self.seed + 7919)
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            A = (q * eig) @ q.T
            A = 0.5 * (A + A.T)
            b = np.asarray(self.b, dtype=np.float64) if self.b is not None else A @ np.ones(d)
            return Quadratic.generate(A, b, self.dataset_size, self.seed, curvature=self.curvature, noise=self.noise)
        if self.kind == "logistic":
            return LogisticRegression.generate(self.dataset_size, self.features, self.seed, l2=self.l2,
                                               scale=self.margin)
        if self.kind == "mlp":
            return TinyMLP.generate(self.sizes, self.dataset_size, self.seed, noise=self.noise)
        raise ValueError(f"unknown objective kind {self.kind!r}")
