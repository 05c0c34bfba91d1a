"""First-order meta-gradients."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .core import NumericError, Task, UsageError

__all__ = ["MetaGradKind", "meta_grad", "average_meta_grad"]


class MetaGradKind(str, enum.Enum):
    REPTILE = "reptile"
    FOMAML = "fomaml"


def meta_grad(kind: MetaGradKind | str, phi, theta_k, task: Task, k: int) -> np.ndarray:
    """Meta-gradient of one task.

    Reptile returns ``phi - theta_k`` and never touches the task's loss.
    FOMAML returns the task gradient at ``theta_k`` for loss index ``k``.
    """
    kind = MetaGradKind(kind)
    phi = np.asarray(phi, dtype=np.float64)
    theta_k = np.asarray(theta_k, dtype=np.float64)
    if phi.shape[-1:] != theta_k.shape[-1:]:
        raise UsageError(f"dimension mismatch: {phi.shape} vs {theta_k.shape}")
    if kind is MetaGradKind.REPTILE:
        return phi - theta_k
    g = task.grad(theta_k, k)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite meta-gradient", step=k, task_id=task.task_id)
    return g


def average_meta_grad(kind, phi, thetas: Sequence[np.ndarray], tasks: Sequence[Task], k: int) -> np.ndarray:
    """Mean meta-gradient over tasks, summed in ascending ``task_id`` order."""
    if len(tasks) == 0:
        raise UsageError("need at least one task")
    if len(thetas) != len(tasks):
        raise UsageError(f"{len(thetas)} parameter vectors for {len(tasks)} tasks")
    order = sorted(range(len(tasks)), key=lambda i: tasks[i].task_id)
    total = None
    for i in order:
        g = meta_grad(kind, phi, thetas[i], tasks[i], k)
        total = g if total is None else total + g
    return total / len(tasks)
