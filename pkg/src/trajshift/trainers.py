"""Meta-training procedures.

``Baseline`` restarts every inner run from the current initialization and
makes one meta-update per repetition.  ``ContinualShifting`` makes a
meta-update after every inner step and translates all in-flight task
trajectories by the same amount.  ``OursAccurate`` follows the same
meta-update schedule but recomputes every ``theta_k`` with a fresh unroll,
and the two ablations alter only the translation.

All trainers treat ``phi`` elementwise, so ``phi0`` may be a stack of
initializations with shape ``(N, D)``; each row is then an independent run.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Rng, Task, UsageError, as_param
from .inner import InnerOptConfig, InnerOptState, init_state, shift, step
from .metagrad import MetaGradKind, average_meta_grad

__all__ = [
    "Variant",
    "MetaConfig",
    "MetaTrainRun",
    "train",
    "train_baseline",
    "train_continual_shifting",
    "train_ours_accurate",
    "train_ablation",
    "expected_inner_steps",
]


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    CONTINUAL_SHIFTING = "continual_shifting"
    OURS_ACCURATE = "ours_accurate"
    NO_SHIFTING = "no_shifting"
    RANDOM_SHIFTING = "random_shifting"


@dataclass(frozen=True)
class MetaConfig:
    """Meta-training settings.

    ``T`` may be left as ``None`` and is then taken from the task list.
    ``fomaml_loss_index`` picks the loss used by FOMAML after ``k`` inner
    steps: ``"current"`` uses index ``k`` (the next loss in the sequence),
    ``"last"`` uses ``k - 1`` (the loss of the last inner step).
    ``preserve_buffers`` keeps optimizer buffers and step counts across
    repetitions instead of resetting them with the parameters.
    """

    beta: float = 0.1
    K: int = 100
    M: int = 3
    T: Optional[int] = None
    meta_grad: MetaGradKind = MetaGradKind.REPTILE
    inner: InnerOptConfig = field(default_factory=InnerOptConfig)
    variant: Variant = Variant.CONTINUAL_SHIFTING
    seed: int = 0
    preserve_buffers: bool = False
    fomaml_loss_index: str = "current"
    record_trajectories: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "meta_grad", MetaGradKind(self.meta_grad))
        if not self.beta >= 0:
            raise UsageError(f"beta must be >= 0, got {self.beta}")
        if self.K < 1 or self.M < 1:
            raise UsageError(f"K and M must be >= 1, got K={self.K}, M={self.M}")
        if self.T is not None and self.T < 1:
            raise UsageError(f"T must be >= 1, got {self.T}")
        if self.fomaml_loss_index not in ("current", "last"):
            raise UsageError(f"fomaml_loss_index must be 'current' or 'last', got {self.fomaml_loss_index!r}")


@dataclass
class MetaTrainRun:
    phi_history: list = field(default_factory=list)
    inner_steps_history: list = field(default_factory=lambda: [0])
    inner_step_counter: int = 0
    meta_update_counter: int = 0
    task_trajectories: Optional[dict] = None
    shift_norms: list = field(default_factory=list)

    @property
    def phi(self) -> np.ndarray:
        return self.phi_history[-1]

    @property
    def deltas(self) -> list:
        return [b - a for a, b in zip(self.phi_history[:-1], self.phi_history[1:])]


def expected_inner_steps(variant: Variant | str, T: int, K: int, M: int) -> int:
    """Closed-form inner-step count of a run."""
    if Variant(variant) is Variant.OURS_ACCURATE:
        return T * M * K * (K + 1) // 2
    return T * K * M


def _prepare(cfg: MetaConfig, tasks: Sequence[Task], phi0, allowed) -> tuple[list, np.ndarray]:
    if cfg.variant not in allowed:
        raise UsageError(f"variant {cfg.variant.value} not handled by this trainer")
    tasks = list(tasks)
    if not tasks:
        raise UsageError("need at least one task")
    if cfg.T is not None and cfg.T != len(tasks):
        raise UsageError(f"config says T={cfg.T} but {len(tasks)} tasks were given")
    phi = as_param(phi0)
    for t in tasks:
        if t.dim != phi.shape[-1]:
            raise UsageError(f"task {t.task_id} has dimension {t.dim}, initialization has {phi.shape[-1]}")
    return tasks, phi


def _meta_index(cfg: MetaConfig, k: int) -> int:
    return k if cfg.fomaml_loss_index == "current" else k - 1


def _new_run(cfg: MetaConfig, tasks, phi) -> MetaTrainRun:
    run = MetaTrainRun(phi_history=[phi.copy()])
    if cfg.record_trajectories:
        run.task_trajectories = {t.task_id: [] for t in tasks}
    return run


def _record(run: MetaTrainRun, tasks, states) -> None:
    if run.task_trajectories is not None:
        for t, s in zip(tasks, states):
            run.task_trajectories[t.task_id].append(s.theta.copy())


def _reset(cfg: MetaConfig, phi, states: Optional[list], n: int) -> list[InnerOptState]:
    fresh = init_state(cfg.inner, phi)
    if states is None or not cfg.preserve_buffers:
        return [fresh] * n
    return [
        InnerOptState(fresh.theta, s.step_count, momentum=s.momentum, adam_m=s.adam_m, adam_v=s.adam_v)
        for s in states
    ]


def train_baseline(cfg: MetaConfig, tasks: Sequence[Task], phi0) -> MetaTrainRun:
    """One meta-update per repetition from full ``K``-step unrolls."""
    tasks, phi = _prepare(cfg, tasks, phi0, {Variant.BASELINE})
    run = _new_run(cfg, tasks, phi)
    states = None
    for _ in range(cfg.M):
        states = _reset(cfg, phi, states, len(tasks))
        for _ in range(cfg.K):
            states = [step(s, cfg.inner, t) for s, t in zip(states, tasks)]
            run.inner_step_counter += len(tasks)
            _record(run, tasks, states)
        g = average_meta_grad(cfg.meta_grad, phi, [s.theta for s in states], tasks, _meta_index(cfg, cfg.K))
        phi = phi - cfg.beta * g
        run.meta_update_counter += 1
        run.phi_history.append(phi)
        run.inner_steps_history.append(run.inner_step_counter)
    return run


def _shifting_loop(cfg: MetaConfig, tasks, phi, run: MetaTrainRun, mode: str) -> MetaTrainRun:
    rng = Rng(cfg.seed)
    states = None
    for m in range(cfg.M):
        states = _reset(cfg, phi, states, len(tasks))
        for k in range(1, cfg.K + 1):
            states = [step(s, cfg.inner, t) for s, t in zip(states, tasks)]
            run.inner_step_counter += len(tasks)
            delta = -cfg.beta * average_meta_grad(
                cfg.meta_grad, phi, [s.theta for s in states], tasks, _meta_index(cfg, k)
            )
            phi = phi + delta
            run.meta_update_counter += 1
            run.phi_history.append(phi)
            run.inner_steps_history.append(run.inner_step_counter)
            if mode == "shift":
                states = [shift(s, delta) for s in states]
            elif mode == "random":
                size = np.linalg.norm(delta, axis=-1, keepdims=True)
                shifted = []
                for s, t in zip(states, tasks):
                    x = rng.stream(t.task_id, "random-shift", m, k).standard_normal(delta.shape)
                    r = x / np.linalg.norm(x, axis=-1, keepdims=True) * size
                    run.shift_norms.append(np.linalg.norm(r, axis=-1))
                    shifted.append(shift(s, r))
                states = shifted
            _record(run, tasks, states)
    return run


def train_continual_shifting(cfg: MetaConfig, tasks: Sequence[Task], phi0) -> MetaTrainRun:
    """Meta-update after every inner step; trajectories are translated by each update."""
    tasks, phi = _prepare(cfg, tasks, phi0, {Variant.CONTINUAL_SHIFTING})
    return _shifting_loop(cfg, tasks, phi, _new_run(cfg, tasks, phi), "shift")


def train_ablation(cfg: MetaConfig, tasks: Sequence[Task], phi0) -> MetaTrainRun:
    """Continual shifting with the translation removed or replaced by a random one.

    ``RandomShifting`` draws a fresh Gaussian direction per task and step and
    scales it to the norm of the meta-update.
    """
    tasks, phi = _prepare(cfg, tasks, phi0, {Variant.NO_SHIFTING, Variant.RANDOM_SHIFTING})
    mode = "none" if cfg.variant is Variant.NO_SHIFTING else "random"
    return _shifting_loop(cfg, tasks, phi, _new_run(cfg, tasks, phi), mode)


def train_ours_accurate(cfg: MetaConfig, tasks: Sequence[Task], phi0) -> MetaTrainRun:
    """Same schedule as continual shifting, with each ``theta_k`` from a fresh k-step unroll."""
    tasks, phi = _prepare(cfg, tasks, phi0, {Variant.OURS_ACCURATE})
    run = _new_run(cfg, tasks, phi)
    for _ in range(cfg.M):
        for k in range(1, cfg.K + 1):
            states = [init_state(cfg.inner, phi)] * len(tasks)
            for _ in range(k):
                states = [step(s, cfg.inner, t) for s, t in zip(states, tasks)]
            run.inner_step_counter += k * len(tasks)
            _record(run, tasks, states)
            delta = -cfg.beta * average_meta_grad(
                cfg.meta_grad, phi, [s.theta for s in states], tasks, _meta_index(cfg, k)
            )
            phi = phi + delta
            run.meta_update_counter += 1
            run.phi_history.append(phi)
            run.inner_steps_history.append(run.inner_step_counter)
    return run


_TRAINERS = {
    Variant.BASELINE: train_baseline,
    Variant.CONTINUAL_SHIFTING: train_continual_shifting,
    Variant.OURS_ACCURATE: train_ours_accurate,
    Variant.NO_SHIFTING: train_ablation,
    Variant.RANDOM_SHIFTING: train_ablation,
}


def train(cfg: MetaConfig, tasks: Sequence[Task], phi0) -> MetaTrainRun:
    return _TRAINERS[cfg.variant](cfg, tasks, phi0)
