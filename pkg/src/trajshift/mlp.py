"""Small fully-connected regression network with hand-written backprop.

The parameter vector is the concatenation, layer by layer, of the weight
matrix ``W`` (shape ``(out, in)``, row-major) followed by the bias ``b``
(length ``out``).  Hidden layers use ReLU or Softplus; the output layer is
linear and the loss is the mean squared error over a minibatch.

Data come from a fixed teacher network with the same layer sizes and tanh
hidden units, so the same regression problem is used for both student
activations.  The minibatch at inner step ``i`` is drawn from the seeded
substream ``(task_id, "batch", i)`` and therefore depends only on the seed,
the task and ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericError, Rng, Task, UsageError

__all__ = ["MlpSpec", "MlpTask", "param_count", "unflatten", "mlp_loss_and_grad"]

ACTIVATIONS = ("relu", "softplus")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple = (8, 32, 32, 1)
    activation: str = "softplus"
    batch_size: int = 64
    n_samples: int = 4096
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise UsageError(f"invalid layer sizes {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 1 <= self.batch_size <= self.n_samples:
            raise UsageError("batch_size must be between 1 and n_samples")


def param_count(layer_sizes) -> int:
    return sum((n_in + 1) * n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def unflatten(theta: np.ndarray, layer_sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    i = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = theta[i : i + n_in * n_out].reshape(n_out, n_in)
        i += n_in * n_out
        b = theta[i : i + n_out]
        i += n_out
        layers.append((W, b))
    return layers


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # tanh form is stable for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(layers, x, activation):
    acts = [x]
    pre = []
    a = x
    for i, (W, b) in enumerate(layers):
        z = a @ W.T + b
        pre.append(z)
        if i < len(layers) - 1:
            if activation == "relu":
                a = np.maximum(z, 0.0)
            elif activation == "softplus":
                a = _softplus(z)
            else:
                a = np.tanh(z)
            if not np.all(np.isfinite(a)):
                raise NumericError("non-finite activation", layer=i)
        else:
            a = z
        acts.append(a)
    return pre, acts


def mlp_loss_and_grad(theta, layer_sizes, activation, x, y) -> tuple[float, np.ndarray]:
    """MSE loss on ``(x, y)`` and its exact gradient with respect to the flat parameters."""
    layers = unflatten(theta, layer_sizes)
    # overflow surfaces as a NumericError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        pre, acts = _forward(layers, x, activation)
    out = acts[-1]
    resid = out - y
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=len(layers) - 1)

    grads = []
    delta = 2.0 * resid / resid.size
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            back = delta @ W
            z = pre[i - 1]
            if activation == "relu":
                delta = back * (z > 0)
            else:
                delta = back * _sigmoid(z)
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.ravel())
        flat.append(gb)
    return loss, np.concatenate(flat)


class MlpTask(Task):
    """Minibatch regression task for a student network described by ``spec``."""

    kind = "mlp"

    def __init__(self, spec: MlpSpec, task_id: int = 0):
        self.spec = spec
        self.task_id = task_id
        self.dim = param_count(spec.layer_sizes)
        self._rng = Rng(spec.seed)
        data = self._rng.stream(task_id, "inputs")
        self.x = data.standard_normal((spec.n_samples, spec.layer_sizes[0]))
        teacher = self._init(self._rng.stream(task_id, "teacher"))
        _, acts = _forward(unflatten(teacher, spec.layer_sizes), self.x, "tanh")
        self.y = acts[-1]

    @property
    def label(self) -> str:
        return self.spec.activation

    def _init(self, gen: np.random.Generator) -> np.ndarray:
        parts = []
        for n_in, n_out in zip(self.spec.layer_sizes[:-1], self.spec.layer_sizes[1:]):
            parts.append(gen.standard_normal(n_in * n_out) / np.sqrt(n_in))
            parts.append(np.zeros(n_out))
        return np.concatenate(parts)

    def init_params(self, seed: int | None = None) -> np.ndarray:
        """Scaled-Gaussian weights (std ``1/sqrt(fan_in)``) and zero biases."""
        rng = self._rng if seed is None else Rng(seed)
        return self._init(rng.stream(self.task_id, "student-init"))

    def batch_indices(self, step: int) -> np.ndarray:
        gen = self._rng.stream(self.task_id, "batch", step)
        return gen.choice(self.spec.n_samples, size=self.spec.batch_size, replace=False)

    def loss_and_grad(self, theta, step=0):
        theta = self._check_dim(theta)
        if theta.ndim != 1:
            raise UsageError("MlpTask evaluates one parameter vector at a time")
        idx = self.batch_indices(step)
        return mlp_loss_and_grad(theta, self.spec.layer_sizes, self.spec.activation, self.x[idx], self.y[idx])
