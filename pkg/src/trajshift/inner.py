"""Inner optimizers: the update map that takes an initialization to ``theta_k``.

One call to :func:`step` is one inner-gradient step and costs exactly one
gradient evaluation.  States are treated as immutable values; every
operation returns a new :class:`InnerOptState`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import NumericError, Task, UsageError, as_param, check_finite

__all__ = ["Rule", "InnerOptConfig", "InnerOptState", "init_state", "step", "unroll", "shift"]


class Rule(str, enum.Enum):
    SGD = "sgd"
    SGD_MOMENTUM = "sgd_momentum"
    SGD_WEIGHT_DECAY = "sgd_weight_decay"
    SGD_MOMENTUM_WEIGHT_DECAY = "sgd_momentum_weight_decay"
    ADAM = "adam"

    @property
    def uses_momentum(self) -> bool:
        return self in (Rule.SGD_MOMENTUM, Rule.SGD_MOMENTUM_WEIGHT_DECAY)

    @property
    def uses_weight_decay(self) -> bool:
        return self in (Rule.SGD_WEIGHT_DECAY, Rule.SGD_MOMENTUM_WEIGHT_DECAY)


@dataclass(frozen=True)
class InnerOptConfig:
    """Inner optimizer settings.

    ``mu`` and ``weight_decay`` only take effect for rules that use them.
    Weight decay adds ``2 * weight_decay * theta`` to the gradient, i.e. it is
    the gradient of ``weight_decay * ||theta||^2``.  ``clip_norm`` rescales
    each gradient (after weight decay) to at most that Euclidean norm.
    ``decay_milestones``/``decay_gamma`` give a step-decay schedule for
    evaluation runs; meta-training leaves them empty.  Adam has no error
    bound for trajectory shifting and is provided for comparison only.
    """

    rule: Rule = Rule.SGD
    alpha: float = 0.05
    mu: float = 0.0
    weight_decay: float = 0.0
    nesterov: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: Optional[float] = None
    decay_milestones: tuple = ()
    decay_gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        object.__setattr__(self, "decay_milestones", tuple(int(m) for m in self.decay_milestones))
        if not self.alpha > 0:
            raise UsageError(f"alpha must be > 0, got {self.alpha}")
        if not 0 <= self.mu < 1:
            raise UsageError(f"mu must lie in [0, 1), got {self.mu}")
        if not self.weight_decay >= 0:
            raise UsageError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise UsageError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.rule is Rule.ADAM and not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise UsageError("invalid Adam hyperparameters")
        if not self.decay_gamma > 0:
            raise UsageError(f"decay_gamma must be > 0, got {self.decay_gamma}")
        # cached for the per-step hot path
        object.__setattr__(self, "_lam", self.weight_decay if self.rule.uses_weight_decay else 0.0)
        object.__setattr__(self, "_momentum", self.rule.uses_momentum)

    @property
    def effective_mu(self) -> float:
        return self.mu if self.rule.uses_momentum else 0.0

    @property
    def effective_weight_decay(self) -> float:
        return self.weight_decay if self.rule.uses_weight_decay else 0.0

    def lr_at(self, step_index: int) -> float:
        if not self.decay_milestones:
            return self.alpha
        drops = sum(1 for m in self.decay_milestones if step_index >= m)
        return self.alpha * self.decay_gamma**drops


@dataclass(frozen=True)
class InnerOptState:
    theta: np.ndarray
    step_count: int = 0
    momentum: Optional[np.ndarray] = None
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None


def init_state(cfg: InnerOptConfig, phi) -> InnerOptState:
    theta = as_param(phi)
    zeros = np.zeros_like(theta)
    if cfg.rule is Rule.ADAM:
        return InnerOptState(theta, 0, adam_m=zeros, adam_v=zeros.copy())
    if cfg.rule.uses_momentum:
        return InnerOptState(theta, 0, momentum=zeros)
    return InnerOptState(theta, 0)


def _clip(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    scale = np.minimum(1.0, max_norm / np.maximum(norm, np.finfo(np.float64).tiny))
    return g * scale


def step(state: InnerOptState, cfg: InnerOptConfig, task: Task) -> InnerOptState:
    """Apply one inner-gradient step using the task's loss at index ``state.step_count``."""
    k = state.step_count
    theta = state.theta
    g = task.grad(theta, k)
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient", step=k, task_id=task.task_id)
    lam = cfg._lam
    if lam:
        g = g + 2.0 * lam * theta
    if cfg.clip_norm is not None:
        g = _clip(g, cfg.clip_norm)
    lr = cfg.lr_at(k)

    if cfg.rule is Rule.ADAM:
        t = k + 1
        m = cfg.adam_beta1 * state.adam_m + (1 - cfg.adam_beta1) * g
        v = cfg.adam_beta2 * state.adam_v + (1 - cfg.adam_beta2) * g * g
        m_hat = m / (1 - cfg.adam_beta1**t)
        v_hat = v / (1 - cfg.adam_beta2**t)
        new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new = InnerOptState(new_theta, t, adam_m=m, adam_v=v)
    elif cfg._momentum:
        buf = cfg.mu * state.momentum + g
        direction = g + cfg.mu * buf if cfg.nesterov else buf
        new = InnerOptState(theta - lr * direction, k + 1, momentum=buf)
    else:
        new = InnerOptState(theta - lr * g, k + 1)
    if not np.isfinite(new.theta).all():
        check_finite(new.theta, "parameters after inner step", step=k, task_id=task.task_id)
    return new


def unroll(cfg: InnerOptConfig, phi, task: Task, k: int) -> list[np.ndarray]:
    """Return ``[theta_0 = phi, theta_1, ..., theta_k]``."""
    if k < 0:
        raise UsageError(f"k must be >= 0, got {k}")
    state = init_state(cfg, phi)
    trajectory = [state.theta]
    for _ in range(k):
        state = step(state, cfg, task)
        trajectory.append(state.theta)
    return trajectory


def shift(state: InnerOptState, delta) -> InnerOptState:
    """Translate the parameters by ``delta``; optimizer buffers and the step count are kept."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape[-1:] != state.theta.shape[-1:]:
        raise UsageError(f"dimension mismatch: state {state.theta.shape}, shift {delta.shape}")
    return replace(state, theta=state.theta + delta)
