import subprocess
import sys

import numpy as np
import pytest
import yaml

from setmem import cli
from setmem import experiments as ex
from setmem.plotting import emit_plot_scripts, render_figures


def small(name, **over):
    cfg = ex.load_preset(name)
    seeds = over.pop("seeds", 2)
    T_grid = over.pop("T_grid", None)
    return cfg.with_overrides(seeds=seeds, T_grid=T_grid, **over)


def test_presets_load():
    names = ex.preset_names()
    for exp in ex.EXPERIMENTS:
        assert exp in names
    for n in names:
        cfg = ex.load_preset(n)
        assert cfg.experiment in ex.EXPERIMENTS and cfg.seeds
    with pytest.raises(ex.ConfigError):
        ex.load_preset("nope")


@pytest.mark.parametrize("bad", [
    {"seeds": 2},
    {"experiment": "fig9"},
    {"experiment": "fig1-toy", "seeds": []},
    {"experiment": "fig1-toy", "T_grid": [10, 5]},
    {"experiment": "fig1-toy", "T_grid": [0, 5]},
])
def test_config_validation(bad):
    with pytest.raises(ex.ConfigError):
        ex.config_from_dict(bad)


def test_load_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- not a mapping\n")
    with pytest.raises(ex.ConfigError):
        ex.load_config(p)
    p.write_text(yaml.safe_dump({"experiment": "fig1-toy", "seeds": 3, "T_grid": [8]}))
    cfg = ex.load_config(p)
    assert cfg.seeds == [0, 1, 2] and cfg.name == "c"


def test_hash_stability():
    a, b = ex.load_preset("fig1-toy"), ex.load_preset("fig1-toy")
    assert a.config_hash() == b.config_hash() and len(a.config_hash()) == 16
    assert a.with_overrides(seeds=3).config_hash() != a.config_hash()
    assert a.with_overrides(out="elsewhere").config_hash() == a.config_hash()


def test_sweep_outputs_byte_identical_and_thread_invariant(tmp_path):
    cfg = small("custom", T_grid=[32, 128])
    s1 = ex.run_experiment(cfg, tmp_path / "a", threads=1)
    ex.run_experiment(cfg, tmp_path / "b", threads=2)
    assert set(s1.files) >= {"diameters", "diameter_summary", "wmax", "wmax_summary"}
    for name in s1.files.values():
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header, rows = ex.read_csv(tmp_path / "a" / s1.files["diameters"])
    assert header == ex.SET_COLS
    first = (tmp_path / "a" / s1.files["diameters"]).read_text().splitlines()[0]
    assert first == f"# experiment=custom config_hash={cfg.config_hash()}"
    assert all(r[6] == "1" for r in rows if r[2] in ("sme", "ucb-sme"))
    assert s1.stats["containment_failures"] == 0


def test_prefix_replay_matches_fresh_run(tmp_path):
    full = ex.run_experiment(small("fig1-toy-uniform", T_grid=[32, 64]), tmp_path / "a")
    part = ex.run_experiment(small("fig1-toy-uniform", T_grid=[32]), tmp_path / "b")
    _, r_full = ex.read_csv(tmp_path / "a" / full.files["diameters"])
    _, r_part = ex.read_csv(tmp_path / "b" / part.files["diameters"])
    assert [r for r in r_full if r[1] == "32"] == r_part


def test_group_summary_stats():
    rows = [[0, 8, "a", 1.0], [1, 8, "a", 3.0], [0, 8, "b", 2.0]]
    out = {tuple(r[:2]): r[2:] for r in ex._group_summary(rows, [1, 2], 3)}
    n, med, mean, std = out[("8", "a")] if ("8", "a") in out else out[(8, "a")]
    assert int(n) == 2 and float(med) == 2.0 and float(mean) == 2.0
    assert float(std) == pytest.approx(np.std([1.0, 3.0], ddof=1))


def test_rampc_and_dims_small(tmp_path):
    cfg = small("fig4-rampc", seeds=1)
    cfg.params["task"]["length"] = 120
    cfg = cfg.with_overrides(T_grid=[120])
    s = ex.run_experiment(cfg, tmp_path / "r")
    assert s.stats["violations"] == 0
    d = ex.run_experiment(small("fig3-dims", seeds=1, dims=[2, 3], T_grid=[100]), tmp_path / "d")
    header, rows = ex.read_csv(tmp_path / "d" / d.files["dims"])
    assert header[:4] == ["seed", "n_x", "T", "estimator"] and {r[1] for r in rows} == {"2", "3"}


def test_bounds_grid_vacuous_and_none():
    params = ex.load_preset("bounds-table").params
    grid = ex.bounds_grid(params, [10, 10 ** 6])
    small_T = [g for g in grid if g["T"] == 10]
    assert all(g["sme"] is None for g in small_T)
    assert any(g["sme"] is not None and not g["sme"].vacuous for g in grid)


def test_plot_scripts(tmp_path):
    s = ex.run_experiment(small("fig1-toy", T_grid=[16, 64]), tmp_path)
    scripts = emit_plot_scripts(tmp_path)
    assert [p.name for p in scripts] == ["plot_diameters.py"]
    pngs = render_figures(s)
    first = pngs[0].read_bytes()
    render_figures(tmp_path)
    assert pngs[0].read_bytes() == first
    # standalone: no package import, clear error when input is missing
    assert "setmem" not in scripts[0].read_text()
    (tmp_path / s.files["diameter_summary"]).unlink()
    res = subprocess.run([sys.executable, str(scripts[0])], capture_output=True, text=True)
    assert res.returncode != 0 and "missing input" in res.stderr


def test_cli_end_to_end(tmp_path, capsys):
    out = tmp_path / "e"
    assert cli.main(["experiment", "fig1-toy", "--seeds", "2", "--out", str(out), "--no-plots"]) == 0
    assert (out / "diameters.csv").exists() and (out / "plot_diameters.py").exists()
    assert cli.main(["plots", "--out", str(out)]) == 0
    assert (out / "diameters.png").exists()

    cfg = tmp_path / "sim.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": "fig1-toy", "seeds": 1, "T_grid": [40],
                                   **ex.load_preset("fig1-toy").params}))
    tr = tmp_path / "t"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tr)]) == 0
    traj = tr / "traj_seed0.csv"
    est = tmp_path / "est"
    assert cli.main(["estimate", str(traj), "--w-max", "1", "--out", str(est), "--T", "10", "40"]) == 0
    assert (est / "sme_diameters.csv").exists() and (est / "membership_set.json").exists()
    assert cli.main(["estimate", str(traj), "--beta", "0.01", "--out", str(est)]) == 0
    assert (est / "wmax.csv").exists()


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["experiment", "fig9"]) == 2
    assert cli.main(["plots"]) == 2
    assert cli.main(["estimate", str(tmp_path / "missing.csv"), "--w-max", "1"]) == 2
    assert cli.main(["experiment", "fig1-toy", "--seeds", "0"]) == 2
    assert "setmem: error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["unknown-command"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "setmem", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "experiment" in res.stdout
