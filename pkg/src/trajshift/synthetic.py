"""The 2D synthetic task family and initialization-quality maps.

Every task is a rotated and translated copy of the template

    f(x, y) = ((x^2 - 10x + y + 9)^2 + (x + y^2 - 10y + 13)^2) / 3,

which has four global minima whose centroid is exactly (5, 5).  A task with
center ``c`` and angle ``a`` evaluates ``f(anchor + R(-a) (p - c))`` with
``anchor = (5, 5)``, so the task's four minima sit around ``c``.

Tasks accept stacks of points with shape ``(..., 2)``; the quality map
evaluates the whole lattice at once.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Rng, Task, UsageError, as_param
from .inner import InnerOptConfig, init_state, step

__all__ = [
    "TEMPLATE_ANCHOR",
    "template_eval",
    "template_grad",
    "template_minima",
    "Analytic2DTask",
    "TaskFamilyConfig",
    "make_tasks",
    "Grid",
    "QualityMap",
    "final_losses",
    "task_average_quality",
    "quality_map",
    "average_loss_surface",
]

TEMPLATE_ANCHOR = (5.0, 5.0)


def _residuals(p):
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    return x * x - 10 * x + y + 9, x + y * y - 10 * y + 13


def template_eval(p):
    r1, r2 = _residuals(p)
    return (r1 * r1 + r2 * r2) / 3.0


def template_grad(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    r1, r2 = _residuals(p)
    gx = (2.0 / 3.0) * (r1 * (2 * x - 10) + r2)
    gy = (2.0 / 3.0) * (r1 + r2 * (2 * y - 10))
    return np.stack([gx, gy], axis=-1)


def template_minima(n_grid: int = 41, tol: float = 1e-12) -> np.ndarray:
    """Zeros of the template, found by Newton's method on the residual system.

    Starts from an ``n_grid x n_grid`` lattice on [-5, 15]^2 and keeps the
    distinct converged roots, sorted lexicographically.
    """
    found: list[np.ndarray] = []
    for x0 in np.linspace(-5, 15, n_grid):
        for y0 in np.linspace(-5, 15, n_grid):
            p = np.array([x0, y0])
            for _ in range(60):
                r = np.array(_residuals(p))
                jac = np.array([[2 * p[0] - 10, 1.0], [1.0, 2 * p[1] - 10]])
                if abs(np.linalg.det(jac)) < 1e-12:
                    break
                p = p - np.linalg.solve(jac, r)
                if np.max(np.abs(r)) < tol:
                    break
            if np.all(np.isfinite(p)) and np.max(np.abs(_residuals(p))) < 1e-10:
                if not any(np.linalg.norm(p - q) < 1e-6 for q in found):
                    found.append(p)
    return np.array(sorted(found, key=tuple))


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


class Analytic2DTask(Task):
    kind = "analytic2d"
    dim = 2

    def __init__(self, center, angle: float, task_id: int = 0, anchor=TEMPLATE_ANCHOR):
        self.center = as_param(center)
        if self.center.shape != (2,):
            raise UsageError("center must be a 2D point")
        self.angle = float(angle)
        self.task_id = task_id
        self.anchor = as_param(anchor)
        self._rot = _rotation(self.angle)

    def to_template(self, p) -> np.ndarray:
        """Map task coordinates into the template frame: ``anchor + R(-a) (p - center)``."""
        p = np.asarray(p, dtype=np.float64)
        (c, ms), (s, _) = self._rot
        dx = p[..., 0] - self.center[0]
        dy = p[..., 1] - self.center[1]
        # explicit 2x2 products keep results independent of batch shape
        return np.stack([c * dx + s * dy + self.anchor[0], ms * dx + c * dy + self.anchor[1]], axis=-1)

    def loss_and_grad(self, theta, step=0):
        q = self.to_template(self._check_dim(theta))
        g = template_grad(q)
        (c, ms), (s, _) = self._rot
        grad = np.stack([c * g[..., 0] + ms * g[..., 1], s * g[..., 0] + c * g[..., 1]], axis=-1)
        return template_eval(q), grad

    def __repr__(self):
        return f"Analytic2DTask(center={self.center.tolist()}, angle={self.angle:.6f}, task_id={self.task_id})"


@dataclass(frozen=True)
class TaskFamilyConfig:
    n_tasks: int = 8
    circle_center: tuple = (5.0, 5.0)
    circle_radius: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_tasks < 1:
            raise UsageError(f"n_tasks must be >= 1, got {self.n_tasks}")
        if not self.circle_radius > 0:
            raise UsageError(f"circle_radius must be > 0, got {self.circle_radius}")


def make_tasks(cfg: TaskFamilyConfig) -> list[Analytic2DTask]:
    """Tasks centered at equal angles ``2 pi i / n`` on the circle, each with a random rotation.

    The rotation of task ``i`` is uniform on [0, 2 pi) from the seeded
    substream ``(i, "rotation")``.
    """
    rng = Rng(cfg.seed)
    cx, cy = cfg.circle_center
    tasks = []
    for i in range(cfg.n_tasks):
        t = 2 * math.pi * i / cfg.n_tasks
        center = (cx + cfg.circle_radius * math.cos(t), cy + cfg.circle_radius * math.sin(t))
        angle = rng.stream(i, "rotation").uniform(0.0, 2 * math.pi)
        tasks.append(Analytic2DTask(center, angle, task_id=i))
    return tasks


@dataclass(frozen=True)
class Grid:
    """Lattice of 2D points.  Row-major: ``y`` is the outer (row) index, ``x`` varies fastest."""

    x_min: float = -10.0
    x_max: float = 20.0
    y_min: float = -10.0
    y_max: float = 20.0
    nx: int = 151
    ny: int = 151

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise UsageError("grid resolution must be >= 1")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise UsageError("grid bounds are reversed")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx) if self.nx > 1 else np.array([self.x_min])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny) if self.ny > 1 else np.array([self.y_min])

    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X.ravel(), Y.ravel()], axis=-1)


@dataclass
class QualityMap:
    grid: Grid
    values: np.ndarray  # shape (ny, nx)
    n_eval_steps: int

    def argmin(self) -> np.ndarray:
        iy, ix = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return np.array([self.grid.xs[ix], self.grid.ys[iy]])


def final_losses(tasks: Sequence[Task], points, inner: InnerOptConfig, n_eval_steps: int = 100) -> np.ndarray:
    """Loss of each task after ``n_eval_steps`` inner steps from each point.

    Returns an array of shape ``(len(tasks),) + points.shape[:-1]`` with tasks
    in ascending ``task_id`` order.
    """
    if n_eval_steps < 1:
        raise UsageError(f"n_eval_steps must be >= 1, got {n_eval_steps}")
    points = as_param(points)
    out = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        state = init_state(inner, points)
        for _ in range(n_eval_steps):
            state = step(state, inner, task)
        out.append(task.loss(state.theta, n_eval_steps))
    return np.array(out)


def task_average_quality(tasks: Sequence[Task], points, inner: InnerOptConfig, n_eval_steps: int = 100):
    """Task-average loss after ``n_eval_steps`` inner steps; lower is a better initialization."""
    losses = final_losses(tasks, points, inner, n_eval_steps)
    total = losses[0]
    for row in losses[1:]:
        total = total + row
    return total / len(losses)


def quality_map(
    tasks: Sequence[Task], grid: Grid, inner: InnerOptConfig, n_eval_steps: int = 100, threads: int = 1
) -> QualityMap:
    pts = grid.points()
    if threads <= 1 or len(pts) < 2:
        values = task_average_quality(tasks, pts, inner, n_eval_steps)
    else:
        chunks = np.array_split(pts, min(threads, len(pts)))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: task_average_quality(tasks, c, inner, n_eval_steps), chunks))
        values = np.concatenate(parts)
    return QualityMap(grid, np.asarray(values).reshape(grid.ny, grid.nx), n_eval_steps)


def average_loss_surface(tasks: Sequence[Task], grid: Grid) -> np.ndarray:
    """Raw task-average loss on the lattice, without any adaptation."""
    pts = grid.points()
    total = None
    for task in sorted(tasks, key=lambda t: t.task_id):
        v = task.loss(pts)
        total = v if total is None else total + v
    return (total / len(tasks)).reshape(grid.ny, grid.nx)
