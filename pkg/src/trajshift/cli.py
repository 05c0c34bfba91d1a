"""Command-line driver.

Commands: ``train``, ``quality-map``, ``error-sweep`` and ``landscape``.
Each reads a TOML config, writes CSV tables and a ``manifest.json`` into
``--out``, and exits with 0 on success, 2 on configuration or usage errors
and 3 when a computation produced a non-finite value.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from . import __version__
from .config import (
    build_grid,
    build_inner,
    build_meta,
    build_probe,
    build_tasks,
    load_config,
    start_point,
)
from .core import NumericError, UsageError
from .errorlab import sweep
from .io import write_csv, write_manifest
from .synthetic import Analytic2DTask, Grid, quality_map, task_average_quality
from .trainers import Variant, expected_inner_steps, train

__all__ = ["main", "cluster_endpoints"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _average_loss(tasks, phi) -> float:
    total = 0.0
    for t in sorted(tasks, key=lambda t: t.task_id):
        total += float(t.loss(phi, 0))
    return total / len(tasks)


def _require_synthetic(tasks, command: str):
    if not all(isinstance(t, Analytic2DTask) for t in tasks):
        raise UsageError(f"{command} needs tasks.kind = \"synthetic\"")


def cmd_train(cfg: dict, out: str, threads: int) -> dict:
    tasks = build_tasks(cfg)
    meta = build_meta(cfg)
    run = train(meta, tasks, start_point(cfg, tasks))
    dim = run.phi.shape[-1]
    header = ["meta_step", "cumulative_inner_steps"] + [f"phi_{i}" for i in range(dim)] + ["task_average_loss"]
    rows = (
        [i, steps, *phi, _average_loss(tasks, phi)]
        for i, (phi, steps) in enumerate(zip(run.phi_history, run.inner_steps_history))
    )
    write_csv(os.path.join(out, "trajectory.csv"), header, rows)
    return {
        "outputs": ["trajectory.csv"],
        "counters": {
            "meta_updates": run.meta_update_counter,
            "inner_steps": run.inner_step_counter,
            "expected_inner_steps": expected_inner_steps(meta.variant, len(tasks), meta.K, meta.M),
        },
        "final_phi": run.phi,
    }


def cmd_quality_map(cfg: dict, out: str, threads: int) -> dict:
    tasks = build_tasks(cfg)
    _require_synthetic(tasks, "quality-map")
    grid = build_grid(cfg)
    n_eval = cfg["grid"]["n_eval_steps"]
    qmap = quality_map(tasks, grid, build_inner(cfg), n_eval, threads=threads)
    pts = grid.points()
    comment = (
        f"grid x_min={grid.x_min!r} x_max={grid.x_max!r} nx={grid.nx} "
        f"y_min={grid.y_min!r} y_max={grid.y_max!r} ny={grid.ny} n_eval_steps={n_eval}"
    )
    n = write_csv(
        os.path.join(out, "quality_map.csv"),
        ["x", "y", "value"],
        ([p[0], p[1], v] for p, v in zip(pts, qmap.values.ravel())),
        comment=comment,
    )
    return {
        "outputs": ["quality_map.csv"],
        "counters": {"grid_points": n, "inner_steps": n * len(tasks) * n_eval},
        "min_value": float(qmap.values.min()),
        "argmin": qmap.argmin(),
    }


def cmd_error_sweep(cfg: dict, out: str, threads: int) -> dict:
    s = cfg["sweep"]
    axis = s["axis"]
    if cfg["tasks"]["kind"] == "mlp":
        tasks = [build_tasks(cfg, activation=a)[0] for a in s["activations"]]
    else:
        if axis == "activation":
            raise UsageError("the activation axis needs tasks.kind = \"mlp\"")
        tasks = build_tasks(cfg)[:1]
    if not tasks:
        raise UsageError("sweep.activations is empty")
    values = s["values"]
    if axis == "k":
        if any(v != int(v) or v < 2 for v in values):
            raise UsageError("sweep.values for the k axis must be integers >= 2")
        values = [int(v) for v in values]
    base = build_probe(cfg, tasks[0])
    phi_cache = {id(t): start_point(cfg, [t]) for t in tasks}
    phi = lambda t: phi_cache[id(t)]  # noqa: E731
    if axis == "activation":
        result = sweep(base, axis, tasks, phi, threads=threads)
    else:
        result = sweep(base, axis, values, phi, tasks=tasks, threads=threads)
    header = ["axis", "alpha", "beta", "k", "label", "mean_log10_eps", "half_width", "mean_eps", "n_repeats", "bound"]
    rows = (
        [axis, r.alpha, r.beta, r.k, r.label, r.mean_log10, r.half_width, r.mean_norm, r.n, r.bound]
        for r in result.rows
    )
    n = write_csv(os.path.join(out, "error_sweep.csv"), header, rows)
    return {"outputs": ["error_sweep.csv"], "counters": {"cells": n, "draws": n * base.n_repeats}}


def cluster_endpoints(points: np.ndarray, threshold: float) -> np.ndarray:
    """Single-linkage attractor ids, numbered 1.. in order of first appearance."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 1:
        return np.ones(1, dtype=int)
    raw = fcluster(linkage(points, method="single"), t=threshold, criterion="distance")
    relabel: dict[int, int] = {}
    return np.array([relabel.setdefault(int(c), len(relabel) + 1) for c in raw])


def cmd_landscape(cfg: dict, out: str, threads: int) -> dict:
    tasks = build_tasks(cfg)
    _require_synthetic(tasks, "landscape")
    ls = cfg["landscape"]
    if not ls["threshold"] > 0:
        raise UsageError("landscape.threshold must be > 0")
    if ls["mode"] == "fixed_k":
        meta = build_meta(cfg, variant=Variant.BASELINE, K=ls["k"], M=ls["M"])
    else:
        meta = build_meta(cfg, M=ls["M"])
    starts = build_grid(cfg, ls["nx"], ls["ny"]).points()

    def run_chunk(chunk):
        return np.stack(train(meta, tasks, chunk).phi_history)

    chunks = np.array_split(starts, max(1, min(threads, len(starts))))
    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(chunks[0])]
    history = np.concatenate(parts, axis=1)  # (steps + 1, N, 2)
    final = history[-1]
    ids = cluster_endpoints(final, ls["threshold"])
    quality = task_average_quality(tasks, final, build_inner(cfg), cfg["grid"]["n_eval_steps"])

    write_csv(
        os.path.join(out, "landscape.csv"),
        ["start_id", "start_x", "start_y", "final_x", "final_y", "attractor_id", "final_quality"],
        ([i, *starts[i], *final[i], ids[i], quality[i]] for i in range(len(starts))),
    )
    write_csv(
        os.path.join(out, "landscape_trajectories.csv"),
        ["start_id", "meta_step", "phi_0", "phi_1"],
        ([i, m, *history[m, i]] for i in range(len(starts)) for m in range(len(history))),
    )
    return {
        "outputs": ["landscape.csv", "landscape_trajectories.csv"],
        "counters": {
            "start_points": len(starts),
            "meta_updates_per_start": len(history) - 1,
            "inner_steps_per_start": expected_inner_steps(meta.variant, len(tasks), meta.K, meta.M),
            "attractors": int(ids.max()),
        },
    }


COMMANDS = {
    "train": cmd_train,
    "quality-map": cmd_quality_map,
    "error-sweep": cmd_error_sweep,
    "landscape": cmd_landscape,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajshift", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="TOML config file; defaults apply when omitted")
        c.add_argument("--seed", type=int, help="override run.seed")
        c.add_argument("--out", default=".", help="output directory (created if missing)")
        c.add_argument("--threads", type=int, default=1, help="worker threads")
        c.add_argument(
            "--wall-time",
            action="store_true",
            help="record wall time in the manifest (the manifest then differs between reruns)",
        )
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise UsageError("--seed must fit in an unsigned 64-bit integer")
            cfg["run"]["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        info = COMMANDS[args.command](cfg, args.out, args.threads)
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    manifest = {
        "command": args.command,
        "version": __version__,
        "seed": cfg["run"]["seed"],
        "config": cfg,
        "wall_time_s": round(time.perf_counter() - t0, 3) if args.wall_time else None,
        **info,
    }
    write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
