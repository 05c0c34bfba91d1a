"""Measurement of the trajectory-shifting approximation error.

For meta-updates ``d_1 .. d_{k-1}`` the error is

    eps = U_k(phi + d_1 + ... + d_{k-1})
          - U_1(... U_1(U_1(phi) + d_1) ... + d_{k-1}),

the gap between an exact k-step run from the final initialization and the
interleaved run that steps once, shifts, steps again, and so on.  Both terms
see the same loss sequence and the same meta-updates.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import QuadraticTask, Rng, Task, UsageError, as_param
from .inner import InnerOptConfig, init_state, shift, step, unroll
from .metagrad import MetaGradKind
from .trainers import MetaConfig, Variant, train_continual_shifting

__all__ = [
    "DeltaMode",
    "ErrorProbeConfig",
    "ErrorSweepRow",
    "ErrorSweepResult",
    "LOG10_FLOOR",
    "sample_deltas",
    "epsilon_vector",
    "measure_epsilon",
    "sweep",
    "theoretical_bound",
]

# log10 of norms below 10**LOG10_FLOOR (including exact zeros) is reported as the floor
LOG10_FLOOR = -30.0
Z95 = 1.959963984540054


class DeltaMode(str, enum.Enum):
    RANDOM_UNIT = "random_unit"
    FROM_TRAINER = "from_trainer"


@dataclass(frozen=True)
class ErrorProbeConfig:
    """One error measurement.

    ``inner`` supplies the update rule; its learning rate is replaced by
    ``alpha``.  With ``RANDOM_UNIT`` every meta-update is an independent
    Gaussian direction scaled to norm ``beta``; with ``FROM_TRAINER`` the
    updates are those of a single-task continual-shifting run.
    """

    alpha: float
    beta: float
    k: int
    task: Task
    inner: InnerOptConfig = field(default_factory=InnerOptConfig)
    n_repeats: int = 10
    seed: int = 0
    delta_mode: DeltaMode = DeltaMode.RANDOM_UNIT

    def __post_init__(self):
        object.__setattr__(self, "delta_mode", DeltaMode(self.delta_mode))
        if self.k < 2:
            raise UsageError(f"k must be >= 2, got {self.k}")
        if not self.alpha > 0 or not self.beta >= 0:
            raise UsageError(f"need alpha > 0 and beta >= 0, got alpha={self.alpha}, beta={self.beta}")
        if self.n_repeats < 1:
            raise UsageError("n_repeats must be >= 1")

    @property
    def inner_cfg(self) -> InnerOptConfig:
        return replace(self.inner, alpha=self.alpha)


class _Offset(Task):
    """View of a task whose loss index is shifted by ``offset``."""

    def __init__(self, task: Task, offset: int):
        self.task = task
        self.offset = offset
        self.kind = task.kind
        self.dim = task.dim
        self.task_id = task.task_id

    def loss_and_grad(self, theta, step=0):
        return self.task.loss_and_grad(theta, step + self.offset)


def sample_deltas(dim: int, k: int, beta: float, rng: np.random.Generator) -> list[np.ndarray]:
    """``k - 1`` meta-updates of norm ``beta`` with independent uniformly random directions."""
    if k < 2:
        raise UsageError(f"k must be >= 2, got {k}")
    if not beta >= 0:
        raise UsageError(f"beta must be >= 0, got {beta}")
    out = []
    while len(out) < k - 1:
        x = rng.standard_normal(dim)
        n = np.linalg.norm(x)
        if n == 0.0:
            continue
        out.append(beta * (x / n))
    return out


def _trainer_deltas(cfg: ErrorProbeConfig, phi, task: Task) -> list[np.ndarray]:
    meta = MetaConfig(
        beta=cfg.beta,
        K=cfg.k - 1,
        M=1,
        meta_grad=MetaGradKind.REPTILE,
        inner=cfg.inner_cfg,
        variant=Variant.CONTINUAL_SHIFTING,
        seed=cfg.seed,
    )
    return train_continual_shifting(meta, [task], phi).deltas


def epsilon_vector(cfg: ErrorProbeConfig, phi, deltas: Optional[Sequence[np.ndarray]] = None, repeat: int = 0):
    """The error vector for one draw.

    Draw ``repeat`` uses loss indices starting at ``repeat * k`` and, unless
    ``deltas`` is given, meta-updates from the substream ``(repeat, "deltas")``.
    The directions of a draw do not depend on ``alpha``, ``beta`` or ``k``
    beyond their count, so sweeps compare cells under common random numbers.
    """
    phi = as_param(phi)
    inner = cfg.inner_cfg
    task = _Offset(cfg.task, repeat * cfg.k) if repeat else cfg.task
    if deltas is None:
        if cfg.delta_mode is DeltaMode.RANDOM_UNIT:
            deltas = sample_deltas(phi.shape[-1], cfg.k, cfg.beta, Rng(cfg.seed).stream(repeat, "deltas"))
        else:
            deltas = _trainer_deltas(cfg, phi, task)
    deltas = [np.asarray(d, dtype=np.float64) for d in deltas]
    if len(deltas) != cfg.k - 1:
        raise UsageError(f"need {cfg.k - 1} meta-updates, got {len(deltas)}")

    start = phi
    for d in deltas:
        start = start + d
    exact = unroll(inner, start, task, cfg.k)[-1]

    state = step(init_state(inner, phi), inner, task)
    for d in deltas:
        state = step(shift(state, d), inner, task)
    return exact - state.theta


def measure_epsilon(cfg: ErrorProbeConfig, phi, deltas=None, repeat: int = 0) -> float:
    return float(np.linalg.norm(epsilon_vector(cfg, phi, deltas, repeat)))


def theoretical_bound(alpha: float, beta: float, h: float, k: float, mu: float = 0.0, lam: float = 0.0) -> float:
    """``beta*alpha*(h + 2*lam)*k**2 / (1 - mu) + beta**2 * k`` (unit constant)."""
    if not mu < 1:
        raise UsageError(f"mu must be < 1, got {mu}")
    if min(alpha, beta, h, k, mu, lam) < 0:
        raise UsageError("bound arguments must be non-negative")
    return beta * alpha * (h + 2 * lam) * k * k / (1 - mu) + beta * beta * k


@dataclass
class ErrorSweepRow:
    alpha: float
    beta: float
    k: int
    label: str
    mean_log10: float
    half_width: float
    mean_norm: float
    n: int
    bound: Optional[float] = None


@dataclass
class ErrorSweepResult:
    axis: str
    rows: list

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def for_label(self, label: str) -> list:
        return [r for r in self.rows if r.label == label]


AXES = ("alpha", "beta", "k", "activation", "task")


def _log10(x: float) -> float:
    return max(math.log10(x), LOG10_FLOOR) if x > 0 else LOG10_FLOOR


def _summarize(norms) -> tuple[float, float]:
    logs = np.array([_log10(v) for v in norms])
    mean = float(logs.mean())
    if len(logs) < 2:
        return mean, float("nan")
    return mean, float(Z95 * logs.std(ddof=1) / math.sqrt(len(logs)))


def _task_bound(cfg: ErrorProbeConfig) -> Optional[float]:
    if not isinstance(cfg.task, QuadraticTask):
        return None
    inner = cfg.inner_cfg
    return theoretical_bound(
        cfg.alpha, cfg.beta, cfg.task.hessian_norm, cfg.k, inner.effective_mu, inner.effective_weight_decay
    )


def _label(task: Task) -> str:
    return getattr(task, "label", None) or task.kind


def sweep(
    base: ErrorProbeConfig,
    axis: str,
    values: Sequence,
    phi: np.ndarray | Callable[[Task], np.ndarray],
    tasks: Sequence[Task] = (),
    threads: int = 1,
) -> ErrorSweepResult:
    """Mean and 95% half-width of ``log10 ||eps||`` over ``base.n_repeats`` draws per cell.

    ``axis`` is one of ``alpha``, ``beta``, ``k`` (numeric ``values``) or
    ``activation``/``task`` (``values`` are tasks).  When ``tasks`` is given
    with a numeric axis, every task is swept and rows are labelled per task.
    ``phi`` is an initialization or a callable mapping a task to one.
    Rows for a numeric axis come out sorted ascending in that axis.
    """
    if axis not in AXES:
        raise UsageError(f"axis must be one of {AXES}, got {axis!r}")
    if len(values) == 0:
        raise UsageError("sweep grid is empty")
    if axis in ("activation", "task"):
        cells = [replace(base, task=t) for t in values]
    else:
        numeric = sorted(values)
        if axis == "k":
            numeric = [int(v) for v in numeric]
        per_task = list(tasks) or [base.task]
        cells = [replace(base, task=t, **{axis: v}) for t in per_task for v in numeric]

    def run_cell(cfg: ErrorProbeConfig) -> ErrorSweepRow:
        p = phi(cfg.task) if callable(phi) else phi
        norms = [measure_epsilon(cfg, p, repeat=r) for r in range(cfg.n_repeats)]
        mean, hw = _summarize(norms)
        return ErrorSweepRow(
            cfg.alpha, cfg.beta, cfg.k, _label(cfg.task), mean, hw, float(np.mean(norms)), cfg.n_repeats, _task_bound(cfg)
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    return ErrorSweepResult(axis, rows)
