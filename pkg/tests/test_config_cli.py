import json
import os

import numpy as np
import pytest

from trajshift.cli import cluster_endpoints, main
from trajshift.config import (
    ConfigError,
    build_grid,
    build_tasks,
    config_reference_markdown,
    defaults,
    load_config,
    parse_config,
)
from trajshift.io import read_csv

DOCS = os.path.join(os.path.dirname(__file__), os.pardir, "docs", "config_reference.md")


def run_cli(tmp_path, command, toml="", *extra, name="out"):
    cfg = tmp_path / f"{name}.toml"
    cfg.write_text(toml)
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


# configuration parsing


def test_defaults_and_empty_file(tmp_path):
    assert parse_config("") == defaults()
    assert load_config(None) == defaults()
    assert defaults()["meta"]["K"] == 100 and defaults()["tasks"]["circle_radius"] == 2.0


def test_syntax_error_position():
    with pytest.raises(ConfigError) as info:
        parse_config("[meta]\nbeta = 0.1\nK = = 3\n")
    assert info.value.line == 3 and info.value.column is not None


@pytest.mark.parametrize(
    "text, line",
    [
        ("[meta]\nbeta = 0.1\ngamma = 2\n", 3),
        ("[run]\nseed = 1\n\n[bogus]\nx = 1\n", 4),
        ("[meta]\nK = 2.5\n", 2),
        ("[inner]\nnesterov = 1\n", 2),
        ("[tasks]\nkind = \"cifar\"\n", 2),
        ("[run]\nseed = true\n", 2),
    ],
)
def test_rejected_documents_report_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line


def test_coercion():
    cfg = parse_config("[meta]\nbeta = 1\nstart = [1, 2]\n")
    assert cfg["meta"]["beta"] == 1.0 and isinstance(cfg["meta"]["beta"], float)
    assert cfg["meta"]["start"] == [1.0, 2.0]


def test_builders():
    cfg = parse_config("[tasks]\nkind = \"quadratic\"\ndim = 4\nn_tasks = 3\nhessian_max = 2.0\n")
    tasks = build_tasks(cfg)
    assert [t.task_id for t in tasks] == [0, 1, 2]
    for t in tasks:
        eig = np.linalg.eigvalsh(t.hessian)
        assert np.all(eig > 0) and np.all(eig <= 2.0 + 1e-12)
    again = build_tasks(cfg)
    assert all(np.array_equal(a.hessian, b.hessian) for a, b in zip(tasks, again))
    assert build_grid(defaults()).points().shape == (151 * 151, 2)


def test_reference_doc_is_current():
    with open(DOCS, encoding="utf-8") as fh:
        assert fh.read() == config_reference_markdown()


# command line


def test_usage_errors_exit_2(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "train", "[meta]\nK = = 1\n")
    assert code == 2
    assert "line 2" in capsys.readouterr().err
    code, _ = run_cli(tmp_path, "train", "[meta]\nwhat = 1\n", name="b")
    assert code == 2
    assert main(["train", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "m")]) == 2
    code, _ = run_cli(tmp_path, "quality-map", "[tasks]\nkind = \"linear\"\n", name="c")
    assert code == 2
    code, _ = run_cli(tmp_path, "train", "", "--threads", "0", name="d")
    assert code == 2


def test_numeric_error_exit_3(tmp_path, capsys):
    toml = "[tasks]\nkind = \"quadratic\"\ndim = 3\n[inner]\nrule = \"sgd\"\nalpha = 100.0\nclip_norm = 0.0\n[meta]\nK = 200\nM = 1\n"
    with np.errstate(all="ignore"):
        code, out = run_cli(tmp_path, "train", toml)
    assert code == 3
    assert "numeric error" in capsys.readouterr().err
    assert not (out / "manifest.json").exists()


def test_train_default_counters(tmp_path):
    code, out = run_cli(tmp_path, "train")
    assert code == 0
    m = manifest(out)
    assert m["counters"] == {"meta_updates": 300, "inner_steps": 2400, "expected_inner_steps": 2400}
    assert m["wall_time_s"] is None
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["meta_step", "cumulative_inner_steps", "phi_0", "phi_1", "task_average_loss"]
    assert len(rows) == 301
    assert [int(r[1]) for r in rows[:3]] == [0, 8, 16] and rows[-1][1] == "2400"
    assert [float(x) for x in rows[0][2:4]] == [-5.0, 5.0]


def test_baseline_zero_beta_is_constant(tmp_path):
    code, out = run_cli(tmp_path, "train", "[meta]\nvariant = \"baseline\"\nbeta = 0.0\nK = 10\n")
    assert code == 0
    _, rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 4
    assert len({tuple(r[2:]) for r in rows}) == 1


def test_seed_override(tmp_path):
    code, out = run_cli(tmp_path, "train", "[meta]\nM = 1\nK = 5\n", "--seed", "9")
    assert code == 0 and manifest(out)["seed"] == 9 and manifest(out)["config"]["run"]["seed"] == 9
    _, other = run_cli(tmp_path, "train", "[meta]\nM = 1\nK = 5\n", "--seed", "10", name="o")
    assert (out / "trajectory.csv").read_bytes() != (other / "trajectory.csv").read_bytes()
    assert main(["train", "--seed", str(2**64), "--out", str(tmp_path / "x")]) == 2


def test_wall_time_is_opt_in(tmp_path):
    cfg = tmp_path / "w.toml"
    cfg.write_text("[meta]\nM = 1\nK = 2\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "w"), "--wall-time"]) == 0
    assert manifest(tmp_path / "w")["wall_time_s"] >= 0


def test_quality_map_single_point(tmp_path):
    toml = "[grid]\nx_min = 5.0\nx_max = 5.0\ny_min = 5.0\ny_max = 5.0\nnx = 1\nny = 1\nn_eval_steps = 0\n"
    code, out = run_cli(tmp_path, "quality-map", toml)
    assert code == 2  # zero evaluation steps are rejected
    code, out = run_cli(tmp_path, "quality-map", toml.replace("n_eval_steps = 0", "n_eval_steps = 1"), name="q")
    assert code == 0
    header, rows = read_csv(out / "quality_map.csv")
    assert header == ["x", "y", "value"] and len(rows) == 1
    first = (out / "quality_map.csv").read_text().splitlines()[0]
    assert first.startswith("# grid x_min=5.0") and "nx=1" in first and "n_eval_steps=1" in first


def test_quality_map_grid(tmp_path):
    code, out = run_cli(tmp_path, "quality-map", "[grid]\nnx = 21\nny = 11\nn_eval_steps = 20\n")
    assert code == 0
    _, rows = read_csv(out / "quality_map.csv")
    vals = np.array([[float(x) for x in r] for r in rows])
    assert len(rows) == 231 and np.all(vals[:, 2] >= 0)
    # x varies fastest
    assert vals[0, 1] == vals[20, 1] and vals[21, 1] > vals[0, 1]
    m = manifest(out)
    assert m["counters"]["grid_points"] == 231 and m["min_value"] == vals[:, 2].min()


def test_error_sweep_linear_floor(tmp_path):
    toml = "[tasks]\nkind = \"linear\"\ndim = 3\n[inner]\nrule = \"sgd\"\n[sweep]\nvalues = [0.01]\nn_repeats = 3\n"
    code, out = run_cli(tmp_path, "error-sweep", toml)
    assert code == 0
    header, rows = read_csv(out / "error_sweep.csv")
    assert len(rows) == 1
    row = dict(zip(header, rows[0]))
    assert float(row["mean_eps"]) < 1e-12 and float(row["mean_log10_eps"]) <= -12
    assert row["bound"] == ""


def test_error_sweep_k_axis(tmp_path):
    toml = "[tasks]\nkind = \"quadratic\"\ndim = 4\n[sweep]\naxis = \"k\"\nvalues = [32, 4, 16]\nn_repeats = 5\n"
    code, out = run_cli(tmp_path, "error-sweep", toml)
    assert code == 0
    header, rows = read_csv(out / "error_sweep.csv")
    table = [dict(zip(header, r)) for r in rows]
    assert [int(r["k"]) for r in table] == [4, 16, 32]
    assert all(float(r["half_width"]) >= 0 and float(r["bound"]) > 0 for r in table)
    code, _ = run_cli(tmp_path, "error-sweep", toml.replace("[32, 4, 16]", "[2.5]"), name="bad")
    assert code == 2


def test_error_sweep_mlp_activations(tmp_path):
    toml = (
        "[tasks]\nkind = \"mlp\"\nlayer_sizes = [3, 6, 1]\nn_samples = 64\nbatch_size = 8\n"
        "[sweep]\nvalues = [0.01, 0.1]\nn_repeats = 2\n"
    )
    code, out = run_cli(tmp_path, "error-sweep", toml)
    assert code == 0
    header, rows = read_csv(out / "error_sweep.csv")
    table = [dict(zip(header, r)) for r in rows]
    assert [(r["label"], float(r["alpha"])) for r in table] == [
        ("relu", 0.01), ("relu", 0.1), ("softplus", 0.01), ("softplus", 0.1)
    ]
    assert all(r["bound"] == "" for r in table)


def test_cluster_endpoints():
    pts = np.array([[0.0, 0.0], [5.0, 5.0], [0.1, 0.0], [5.0, 5.2], [9.0, 0.0]])
    np.testing.assert_array_equal(cluster_endpoints(pts, 0.5), [1, 2, 1, 2, 3])
    np.testing.assert_array_equal(cluster_endpoints(pts[:1], 0.5), [1])


def test_landscape_single_start(tmp_path):
    toml = "[landscape]\nnx = 1\nny = 1\nM = 4\nk = 5\n"
    code, out = run_cli(tmp_path, "landscape", toml)
    assert code == 0
    _, rows = read_csv(out / "landscape.csv")
    _, traj = read_csv(out / "landscape_trajectories.csv")
    assert len(rows) == 1 and rows[0][5] == "1"
    assert len(traj) == 5 and {r[0] for r in traj} == {"0"}
    assert manifest(out)["counters"]["inner_steps_per_start"] == 8 * 5 * 4


def test_landscape_horizon_contrast(tmp_path):
    """Short horizons funnel starts into fewer attractors than long ones."""
    counts = {}
    for k in (5, 100):
        code, out = run_cli(tmp_path, "landscape", f"[landscape]\nk = {k}\n", name=f"k{k}")
        assert code == 0
        counts[k] = manifest(out)["counters"]["attractors"]
    assert counts[5] < counts[100]
