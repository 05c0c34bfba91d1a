"""Experiment configuration: a TOML document checked against a fixed schema.

Every section and key is optional; missing values take the defaults listed
in :data:`SCHEMA`.  Unknown sections or keys, wrong value types and TOML
syntax errors raise :class:`ConfigError`, which carries the line and column
of the problem when they can be located.

Run ``python -m trajshift.config`` to print the reference table.
"""

from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import LinearTask, QuadraticTask, Rng, Task, UsageError
from .errorlab import DeltaMode, ErrorProbeConfig
from .inner import InnerOptConfig, Rule
from .metagrad import MetaGradKind
from .mlp import MlpSpec, MlpTask
from .synthetic import Grid, TaskFamilyConfig, make_tasks
from .trainers import MetaConfig, Variant

__all__ = [
    "ConfigError",
    "Field",
    "SCHEMA",
    "load_config",
    "parse_config",
    "defaults",
    "build_tasks",
    "build_inner",
    "build_meta",
    "build_grid",
    "build_probe",
    "start_point",
    "config_reference_markdown",
]


class ConfigError(UsageError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, floats, ints, strs
    default: Any
    doc: str
    choices: tuple = ()


SYNTHETIC_START = (-5.0, 5.0)

_RULES = tuple(r.value for r in Rule)
_VARIANTS = tuple(v.value for v in Variant)

SCHEMA: dict[str, dict[str, Field]] = {
    "run": {
        "seed": Field("int", 0, "Master seed for every random stream; `--seed` overrides it."),
    },
    "tasks": {
        "kind": Field("str", "synthetic", "Task family.", ("synthetic", "mlp", "linear", "quadratic")),
        "n_tasks": Field("int", 8, "Number of tasks T."),
        "circle_radius": Field("float", 2.0, "Synthetic: radius of the circle carrying the task centers."),
        "circle_center": Field("floats", [5.0, 5.0], "Synthetic: center of that circle."),
        "dim": Field("int", 2, "Linear and quadratic: parameter dimension."),
        "hessian_max": Field("float", 1.0, "Quadratic: eigenvalues are uniform on (0, hessian_max]."),
        "layer_sizes": Field("ints", [8, 32, 32, 1], "MLP: widths from input to output."),
        "activation": Field("str", "softplus", "MLP: hidden activation.", ("relu", "softplus")),
        "batch_size": Field("int", 64, "MLP: minibatch size."),
        "n_samples": Field("int", 4096, "MLP: dataset size."),
    },
    "inner": {
        "rule": Field("str", "sgd_momentum", "Inner update rule.", _RULES),
        "alpha": Field("float", 0.05, "Inner learning rate."),
        "mu": Field("float", 0.9, "Momentum coefficient (momentum rules only)."),
        "weight_decay": Field("float", 0.0, "Weight decay lambda; adds 2*lambda*theta to the gradient."),
        "nesterov": Field("bool", False, "Use the Nesterov form of momentum."),
        "adam_beta1": Field("float", 0.9, "Adam first-moment decay."),
        "adam_beta2": Field("float", 0.999, "Adam second-moment decay."),
        "adam_eps": Field("float", 1e-8, "Adam denominator offset."),
        "clip_norm": Field("float", 5.0, "Rescale each gradient to at most this norm; 0 disables clipping."),
        "decay_milestones": Field("ints", [], "Inner steps at which the learning rate is multiplied by decay_gamma."),
        "decay_gamma": Field("float", 1.0, "Step-decay factor."),
    },
    "meta": {
        "variant": Field("str", "continual_shifting", "Meta-training procedure.", _VARIANTS),
        "meta_grad": Field("str", "reptile", "Meta-gradient.", tuple(m.value for m in MetaGradKind)),
        "beta": Field("float", 0.1, "Meta learning rate."),
        "K": Field("int", 100, "Inner steps per repetition."),
        "M": Field("int", 3, "Repetitions (baseline: meta-updates)."),
        "start": Field(
            "floats",
            [],
            "Initial phi.  Empty means the family default: (-5, 5) for synthetic tasks, the seeded"
            " network init for MLP tasks and zeros otherwise.",
        ),
        "preserve_buffers": Field("bool", False, "Keep optimizer buffers across repetitions."),
        "fomaml_loss_index": Field(
            "str", "current", "FOMAML gradient after k steps uses loss k (current) or k-1 (last).", ("current", "last")
        ),
    },
    "grid": {
        "x_min": Field("float", -10.0, "Left edge of the lattice."),
        "x_max": Field("float", 20.0, "Right edge of the lattice."),
        "y_min": Field("float", -10.0, "Bottom edge of the lattice."),
        "y_max": Field("float", 20.0, "Top edge of the lattice."),
        "nx": Field("int", 151, "Points along x."),
        "ny": Field("int", 151, "Points along y."),
        "n_eval_steps": Field("int", 100, "Inner steps taken from each point before the loss is read."),
    },
    "sweep": {
        "axis": Field("str", "alpha", "Swept variable.", ("alpha", "beta", "k", "activation")),
        "values": Field("floats", [0.001, 0.003, 0.01, 0.03, 0.1], "Grid along the swept axis."),
        "alpha": Field("float", 0.01, "Inner learning rate when not swept."),
        "beta": Field("float", 0.001, "Meta-update size when not swept."),
        "k": Field("int", 16, "Trajectory length when not swept."),
        "n_repeats": Field("int", 10, "Independent draws per cell."),
        "delta_mode": Field("str", "random_unit", "Source of the meta-updates.", tuple(d.value for d in DeltaMode)),
        "activations": Field("strs", ["relu", "softplus"], "MLP: activations compared in every sweep."),
    },
    "landscape": {
        "mode": Field("str", "fixed_k", "fixed_k runs the baseline with K = k; variant uses [meta].", ("fixed_k", "variant")),
        "k": Field("int", 100, "Horizon for fixed_k mode."),
        "M": Field("int", 300, "Meta-updates (fixed_k) or repetitions (variant)."),
        "nx": Field("int", 11, "Start points along x, spanning the [grid] bounds."),
        "ny": Field("int", 11, "Start points along y."),
        "threshold": Field("float", 0.5, "Single-linkage distance below which endpoints share an attractor."),
    },
}


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(f.default) for k, f in keys.items()} for sec, keys in SCHEMA.items()}


_TOML_POS = re.compile(r"\(at line (\d+), column (\d+)\)")


def _locate(text: str, section: str, key: Optional[str]) -> Optional[int]:
    """Line of ``[section]`` or of ``key = ...`` inside it, 1-based."""
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[\s*([^\]]+?)\s*\]", stripped)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*=", stripped):
            return i
    return None


def _coerce(value, f: Field, where: str):
    kind = f.kind
    if kind == "bool":
        if not isinstance(value, bool):
            raise UsageError(f"{where} must be a boolean")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"{where} must be an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"{where} must be a number")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise UsageError(f"{where} must be a string")
        if f.choices and value not in f.choices:
            raise UsageError(f"{where} must be one of {list(f.choices)}, got {value!r}")
        return value
    if not isinstance(value, list):
        raise UsageError(f"{where} must be an array")
    inner = {"floats": "float", "ints": "int", "strs": "str"}[kind]
    return [_coerce(v, Field(inner, None, ""), f"{where}[{i}]") for i, v in enumerate(value)]


def parse_config(text: str) -> dict:
    """Parse and validate a configuration document, filling in defaults."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = _TOML_POS.search(str(e))
        msg = _TOML_POS.sub("", str(e)).strip()
        raise ConfigError(f"syntax error: {msg}", *(map(int, m.groups()) if m else ())) from None
    cfg = defaults()
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _locate(text, section, None))
        if not isinstance(body, dict):
            raise ConfigError(f"{section} must be a table")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}", _locate(text, section, key))
            try:
                cfg[section][key] = _coerce(value, SCHEMA[section][key], f"{section}.{key}")
            except UsageError as e:
                raise ConfigError(str(e), _locate(text, section, key)) from None
    return cfg


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return defaults()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text)


def _random_quadratic(dim: int, hmax: float, gen: np.random.Generator, task_id: int) -> QuadraticTask:
    q, r = np.linalg.qr(gen.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    eig = hmax * (1.0 - gen.random(dim))  # uniform on (0, hmax]
    return QuadraticTask((q * eig) @ q.T, center=gen.standard_normal(dim), task_id=task_id)


def build_tasks(cfg: dict, activation: Optional[str] = None) -> list[Task]:
    t = cfg["tasks"]
    seed = cfg["run"]["seed"]
    n = t["n_tasks"]
    if n < 1:
        raise UsageError("tasks.n_tasks must be >= 1")
    if t["kind"] == "synthetic":
        if len(t["circle_center"]) != 2:
            raise UsageError("tasks.circle_center needs two numbers")
        return make_tasks(TaskFamilyConfig(n, tuple(t["circle_center"]), t["circle_radius"], seed))
    if t["kind"] == "mlp":
        spec = MlpSpec(
            layer_sizes=tuple(t["layer_sizes"]),
            activation=activation or t["activation"],
            batch_size=t["batch_size"],
            n_samples=t["n_samples"],
            seed=seed,
        )
        return [MlpTask(spec, task_id=i) for i in range(n)]
    if t["dim"] < 1:
        raise UsageError("tasks.dim must be >= 1")
    rng = Rng(seed)
    if t["kind"] == "linear":
        return [LinearTask(rng.stream(i, "linear").standard_normal(t["dim"]), task_id=i) for i in range(n)]
    if not t["hessian_max"] > 0:
        raise UsageError("tasks.hessian_max must be > 0")
    return [_random_quadratic(t["dim"], t["hessian_max"], rng.stream(i, "quadratic"), i) for i in range(n)]


def build_inner(cfg: dict) -> InnerOptConfig:
    c = cfg["inner"]
    clip = c["clip_norm"]
    return InnerOptConfig(
        rule=c["rule"],
        alpha=c["alpha"],
        mu=c["mu"],
        weight_decay=c["weight_decay"],
        nesterov=c["nesterov"],
        adam_beta1=c["adam_beta1"],
        adam_beta2=c["adam_beta2"],
        adam_eps=c["adam_eps"],
        clip_norm=None if clip == 0 else clip,
        decay_milestones=tuple(c["decay_milestones"]),
        decay_gamma=c["decay_gamma"],
    )


def build_meta(cfg: dict, **overrides) -> MetaConfig:
    m = cfg["meta"]
    kw = dict(
        beta=m["beta"],
        K=m["K"],
        M=m["M"],
        meta_grad=m["meta_grad"],
        inner=build_inner(cfg),
        variant=m["variant"],
        seed=cfg["run"]["seed"],
        preserve_buffers=m["preserve_buffers"],
        fomaml_loss_index=m["fomaml_loss_index"],
    )
    kw.update(overrides)
    return MetaConfig(**kw)


def build_grid(cfg: dict, nx: Optional[int] = None, ny: Optional[int] = None) -> Grid:
    g = cfg["grid"]
    return Grid(g["x_min"], g["x_max"], g["y_min"], g["y_max"], nx or g["nx"], ny or g["ny"])


def start_point(cfg: dict, tasks: list[Task]) -> np.ndarray:
    start = cfg["meta"]["start"]
    dim = tasks[0].dim
    if start:
        if len(start) != dim:
            raise UsageError(f"meta.start has {len(start)} entries, tasks need {dim}")
        return np.array(start, dtype=np.float64)
    if isinstance(tasks[0], MlpTask):
        return tasks[0].init_params()
    if cfg["tasks"]["kind"] == "synthetic":
        return np.array(SYNTHETIC_START)
    return np.zeros(dim)


def build_probe(cfg: dict, task: Task) -> ErrorProbeConfig:
    s = cfg["sweep"]
    return ErrorProbeConfig(
        alpha=s["alpha"],
        beta=s["beta"],
        k=s["k"],
        task=task,
        inner=build_inner(cfg),
        n_repeats=s["n_repeats"],
        seed=cfg["run"]["seed"],
        delta_mode=s["delta_mode"],
    )


def _fmt_default(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, float) and math.isfinite(v):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_default(x) for x in v) + "]"
    return str(v)


def config_reference_markdown() -> str:
    lines = [
        "# Configuration reference",
        "",
        "Generated from the schema in `trajshift/config.py` (`python -m trajshift.config`).",
        "Configs are TOML files; every key is optional and unknown keys are rejected.",
        "",
    ]
    for section, keys in SCHEMA.items():
        lines += [f"## [{section}]", "", "| key | type | default | description |", "|---|---|---|---|"]
        for key, f in keys.items():
            doc = f.doc + (f" One of {', '.join(f'`{c}`' for c in f.choices)}." if f.choices else "")
            lines.append(f"| `{key}` | {f.kind} | `{_fmt_default(f.default)}` | {doc} |")
        lines.append("")
    return "\n".join(lines)


if __name__ == "__main__":
    sys.stdout.write(config_reference_markdown())
