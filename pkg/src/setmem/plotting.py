"""Standalone plot scripts for experiment outputs.

``emit_plot_scripts`` writes one Python script per figure next to the CSVs.
The scripts only read CSVs and call matplotlib, so they can be rerun or
edited without this package installed.  ``render_figures`` emits and runs
them.
"""

from __future__ import annotations

import json
import runpy
from pathlib import Path

from .experiments import RunSummary

_SCRIPT = '''"""Regenerate {png} from CSV output (generated file)."""

import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
SPEC = {spec_literal}


def read(name):
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        sys.exit(f"missing input: {{path}}")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def band(ax, rows, panel):
    groups = {{}}
    for r in rows:
        if any(r[k] != v for k, v in panel.get("where", {{}}).items()):
            continue
        groups.setdefault(r[panel["group"]], []).append(r)
    for name, rs in groups.items():
        rs = sorted(rs, key=lambda r: float(r[panel["x"]]))
        x = [float(r[panel["x"]]) for r in rs]
        y = [float(r[panel["y"]]) for r in rs]
        s = [float(r[panel["spread"]]) for r in rs] if panel.get("spread") else None
        line, = ax.plot(x, y, marker="o", ms=3, label=name)
        if s:
            lo = [max(a - b, 1e-300) if panel.get("logy") else a - b for a, b in zip(y, s)]
            ax.fill_between(x, lo, [a + b for a, b in zip(y, s)], color=line.get_color(), alpha=0.2)


def lines(ax, rows, panel):
    rows = [r for r in rows if all(r[k] == v for k, v in panel.get("where", {{}}).items())]
    groups = {{}}
    for r in rows:
        groups.setdefault(r[panel["group"]] if panel.get("group") else "", []).append(r)
    for name, rs in groups.items():
        x = [float(r[panel["x"]]) for r in rs]
        for col in panel["ys"]:
            label = f"{{name}} {{col}}".strip()
            ax.plot(x, [float(r[col]) for r in rs], label=label, lw=1)


def main():
    panels = SPEC["panels"]
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4), squeeze=False)
    for ax, panel in zip(axes[0], panels):
        rows = read(panel["csv"])
        (band if panel["kind"] == "band" else lines)(ax, rows, panel)
        if panel.get("logx"):
            ax.set_xscale("log")
        if panel.get("logy"):
            ax.set_yscale("log")
        ax.set_xlabel(panel.get("xlabel", panel["x"]))
        ax.set_ylabel(panel.get("ylabel", ""))
        ax.set_title(panel.get("title", ""))
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, SPEC["png"]), dpi=120, metadata={{"Software": None}})
    plt.close(fig)


if __name__ == "__main__":
    main()
'''


def _band(csv_name, x, group, title, ylabel, logx=True, logy=True, where=None):
    return {"kind": "band", "csv": csv_name, "x": x, "group": group, "y": "median", "spread": "std",
            "title": title, "ylabel": ylabel, "logx": logx, "logy": logy, "where": where or {}}


def figure_specs(summary: RunSummary) -> dict[str, dict]:
    """Plot name -> panel spec for the files present in ``summary``."""
    f = summary.files
    specs = {}
    if "diameter_summary" in f:
        specs["diameters"] = {"png": "diameters.png", "panels": [
            _band(f["diameter_summary"], "T", "estimator", "Diameter vs. T (median, +-1 std)", "diameter")]}
    if "wmax_summary" in f:
        specs["wmax"] = {"png": "wmax.png", "panels": [
            _band(f["wmax_summary"], "T", "quantity", "Disturbance bound estimates", "w", logy=False)]}
    if "dims_summary" in f:
        specs["dims"] = {"png": "dims.png", "panels": [
            _band(f["dims_summary"], "n_x", "estimator", "Diameter vs. dimension", "diameter",
                  logx=False)]}
    if "rampc_gap_summary" in f:
        specs["rampc"] = {"png": "rampc.png", "panels": [
            _band(f["rampc_gap_summary"], "t", "estimator", "Cumulative cost gap to OPT", "gap",
                  logx=False, logy=False),
            {"kind": "lines", "csv": f["rampc_trace"], "x": "t", "group": "estimator", "ys": ["x"],
             "where": {"seed": "0"}, "title": "State trajectories (seed 0)", "ylabel": "x"},
            {"kind": "lines", "csv": f["rampc_trace"], "x": "t", "group": "estimator",
             "ys": ["a_lo", "a_hi"], "where": {"seed": "0"}, "title": "Interval on a (seed 0)",
             "ylabel": "a"}]}
    if "bounds" in f:
        specs["bounds"] = {"png": "bounds.png", "panels": [
            {"kind": "lines", "csv": f["bounds"], "x": "T", "group": "delta", "ys": ["total"],
             "title": "Failure bound by delta", "ylabel": "bound", "logx": True}]}
    return specs


def emit_plot_scripts(summary: RunSummary | str | Path) -> list[Path]:
    """Write ``plot_<name>.py`` scripts into the run directory; returns their paths."""
    if not isinstance(summary, RunSummary):
        summary = RunSummary.load(summary)
    out = Path(summary.out_dir)
    paths = []
    for name, spec in figure_specs(summary).items():
        text = _SCRIPT.format(png=spec["png"], spec_literal=repr(spec))
        path = out / f"plot_{name}.py"
        path.write_text(text)
        paths.append(path)
    return paths


def render_figures(summary: RunSummary | str | Path) -> list[Path]:
    """Emit the scripts and run each one; returns the PNG paths."""
    if not isinstance(summary, RunSummary):
        summary = RunSummary.load(summary)
    pngs = []
    specs = figure_specs(summary)
    for script in emit_plot_scripts(summary):
        runpy.run_path(str(script), run_name="__main__")
        pngs.append(Path(summary.out_dir) / specs[script.stem[len("plot_"):]]["png"])
    return pngs


def summary_json(out_dir) -> dict:
    with open(Path(out_dir) / "summary.json") as fh:
        return json.load(fh)
