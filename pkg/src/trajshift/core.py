"""Parameter vectors, the task interface and seeded randomness.

Parameter vectors are plain ``numpy.ndarray`` objects of dtype float64.  Most
routines in the package are written elementwise, so a stack of vectors with
shape ``(..., D)`` is accepted wherever a single vector is; the last axis is
always the parameter axis.
"""

from __future__ import annotations

import zlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "UsageError",
    "NumericError",
    "as_param",
    "axpy",
    "l2_norm",
    "check_finite",
    "finite_diff_grad",
    "Rng",
    "Task",
    "LinearTask",
    "QuadraticTask",
    "CountingTask",
]


class UsageError(ValueError):
    """Invalid arguments: dimension mismatch, out-of-range settings."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message: str, *, index=None, step=None, task_id=None, layer=None):
        parts = [message]
        for name, value in (("index", index), ("step", step), ("task_id", task_id), ("layer", layer)):
            if value is not None:
                parts.append(f"{name}={value}")
        super().__init__(", ".join(parts))
        self.index = index
        self.step = step
        self.task_id = task_id
        self.layer = layer


def as_param(values) -> np.ndarray:
    """Copy ``values`` into a finite float64 array with at least one dimension."""
    x = np.array(values, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] < 1:
        raise UsageError("parameter vectors need dimension >= 1")
    check_finite(x, "parameter vector")
    return x


def check_finite(x: np.ndarray, what: str = "value", **context) -> np.ndarray:
    if not np.isfinite(x).all():
        bad = np.argwhere(~np.isfinite(np.asarray(x)))[0]
        index = int(bad[0]) if len(bad) == 1 else tuple(int(i) for i in bad)
        raise NumericError(f"non-finite {what}", index=index, **context)
    return x


def _same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if np.shape(x)[-1:] != np.shape(y)[-1:]:
        raise UsageError(f"dimension mismatch: {np.shape(x)} vs {np.shape(y)}")


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``a * x + y``."""
    if not np.isfinite(a):
        raise UsageError(f"scale must be finite, got {a}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_dim(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    return check_finite(out, "axpy result")


def l2_norm(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    check_finite(x, "norm input")
    return float(np.linalg.norm(x))


class Task:
    """A differentiable loss ``L_step(theta)``.

    Subclasses implement :meth:`loss_and_grad`.  ``step`` is the inner-step
    index; deterministic tasks ignore it, minibatch tasks use it to select
    the batch, so two runs that query the same step see the same loss.
    """

    kind = "task"
    dim: int
    task_id: int = 0

    def loss_and_grad(self, theta: np.ndarray, step: int = 0) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def loss(self, theta: np.ndarray, step: int = 0):
        return self.loss_and_grad(theta, step)[0]

    def grad(self, theta: np.ndarray, step: int = 0) -> np.ndarray:
        return self.loss_and_grad(theta, step)[1]

    def _check_dim(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1:] != (self.dim,):
            raise UsageError(f"task {self.task_id} expects dimension {self.dim}, got shape {theta.shape}")
        return theta


class LinearTask(Task):
    """``L(theta) = g . theta + c``; the gradient is the constant ``g``."""

    kind = "linear"

    def __init__(self, g: Sequence[float], task_id: int = 0, offset: float = 0.0):
        self.g = as_param(g)
        self.dim = self.g.shape[-1]
        self.task_id = task_id
        self.offset = float(offset)

    def loss_and_grad(self, theta, step=0):
        theta = self._check_dim(theta)
        value = theta @ self.g + self.offset
        return value, self._grad_like(theta)

    def grad(self, theta, step=0):
        return self._grad_like(self._check_dim(theta))

    def _grad_like(self, theta):
        return self.g.copy() if theta.ndim == 1 else np.zeros_like(theta) + self.g


class QuadraticTask(Task):
    """``L(theta) = 0.5 (theta - c)^T H (theta - c)`` with symmetric ``H``."""

    kind = "quadratic"

    def __init__(self, hessian, center=None, task_id: int = 0):
        H = np.array(hessian, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise UsageError("hessian must be a square matrix")
        if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise UsageError("hessian must be symmetric")
        self.hessian = 0.5 * (H + H.T)
        self.dim = H.shape[0]
        self.center = np.zeros(self.dim) if center is None else as_param(center)
        self.task_id = task_id

    @property
    def hessian_norm(self) -> float:
        """Spectral norm ``h`` of the Hessian."""
        return float(np.abs(np.linalg.eigvalsh(self.hessian)).max())

    def loss_and_grad(self, theta, step=0):
        d = self._check_dim(theta) - self.center
        g = d @ self.hessian
        return 0.5 * np.sum(d * g, axis=-1), g


class CountingTask(Task):
    """Wraps a task and counts gradient evaluations."""

    def __init__(self, inner: Task):
        self.inner = inner
        self.kind = inner.kind
        self.dim = inner.dim
        self.task_id = inner.task_id
        self.evaluations = 0

    def loss_and_grad(self, theta, step=0):
        self.evaluations += 1
        return self.inner.loss_and_grad(theta, step)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def finite_diff_grad(loss: Callable[[np.ndarray], float] | Task, theta, h: float = 1e-6, step: int = 0) -> np.ndarray:
    """Central-difference gradient of a scalar loss.

    The per-coordinate step is ``h * max(1, |theta_i|)``.  ``loss`` is either a
    :class:`Task` (evaluated at inner step ``step``) or a plain callable.
    """
    if not h > 0:
        raise UsageError(f"finite-difference step must be positive, got {h}")
    if isinstance(loss, Task):
        task = loss
        loss = lambda p: float(task.loss(p, step))  # noqa: E731
    theta = as_param(theta)
    out = np.empty_like(theta)
    for i in range(theta.size):
        hi = h * max(1.0, abs(theta[i]))
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += hi
        minus[i] -= hi
        out[i] = (loss(plus) - loss(minus)) / (plus[i] - minus[i])
    return out


class Rng:
    """Seeded source of independent substreams.

    Every stream is a numpy ``Generator`` backed by PCG64 and seeded through
    ``SeedSequence(seed, spawn_key=(task_id, crc32(purpose), *extra))``, so a
    stream depends only on its key and never on how many other streams were
    drawn before it.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed

    def stream(self, task_id: int, purpose: str, *extra: int) -> np.random.Generator:
        key = (int(task_id), zlib.crc32(purpose.encode("utf-8")), *(int(e) for e in extra))
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def __repr__(self):
        return f"Rng(seed={self.seed})"
