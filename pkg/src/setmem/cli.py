"""Command line: ``setmem simulate | estimate | bounds | experiment <id> | plots``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .lse import ay_region, write_lse_log
from .membership import (MembershipSet, estimate_wmax_lower, sme_diameter, ucb_delta,
                         write_diameter_log)
from .plotting import emit_plot_scripts, render_figures
from .sim import Trajectory, simulate

log = logging.getLogger("setmem")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", metavar="PATH", required=config_required,
                   help="YAML experiment config (see presets)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seeds", metavar="N", type=int, help="use seeds 0..N-1")
    p.add_argument("--threads", metavar="N", type=int, default=1, help="worker processes")


def _load(args, default: str | None = None) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.load_preset(default)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ex.ConfigError("--seeds must be >= 1")
        cfg = cfg.with_overrides(seeds=args.seeds)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args, "fig1-toy")
    if cfg.experiment not in ex.SWEEPS and cfg.experiment != "bounds-table":
        raise ex.ConfigError("simulate needs a config with system/disturbance/policy sections")
    out = Path(args.out or "results/trajectories")
    out.mkdir(parents=True, exist_ok=True)
    horizon = args.horizon or cfg.T_grid[-1]
    for seed in cfg.seeds:
        model = ex.build_system(cfg.params["system"], seed)
        dist = ex.build_disturbance(cfg.params["disturbance"])
        traj = simulate(model, ex.build_policy(cfg.params.get("policy"), model), dist,
                        x0=ex._x0(cfg.params, model.n_x), horizon=horizon, seed=seed)
        path = out / f"traj_seed{seed}.csv"
        traj.to_csv(path)
        print(path)
    return 0


def _grid(T_max: int, given) -> list[int]:
    if given:
        return sorted(t for t in given if t <= T_max)
    grid = [2 ** k for k in range(1, 31) if 2 ** k < T_max]
    return grid + [T_max]


def cmd_estimate(args) -> int:
    traj = Trajectory.from_csv(args.trajectory)
    if args.w_max is None and args.beta is None:
        raise ex.ConfigError("estimate needs --w-max (known bound) or --beta (UCB-SME)")
    out = Path(args.out or "results/estimate")
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(traj.horizon, args.T)
    records, lse_records, wrows, mset = [], [], [], None
    for T in grid:
        sub = traj.prefix(T)
        if args.w_max is not None:
            w = args.w_max
        else:
            w_bar, _ = estimate_wmax_lower(sub)
            norms = max(sub.max_state_norm(), float(np.linalg.norm(sub.x_next, axis=1).max()))
            w = w_bar + ucb_delta(T, sub.n_x, sub.n_z, norms, args.beta)
            wrows.append((T, w_bar, w))
        mset = MembershipSet.from_trajectory(sub, w)
        bad = mset.infeasible_rows
        if bad:
            log.warning("T=%d: rows %s are empty (w bound too small)", T, bad)
            continue
        records.append((T, sme_diameter(mset, method=args.method, direction_budget=args.budget)))
        lse_records.append((T, traj.seed, ay_region(traj, args.lse_lambda, args.lse_delta, args.lse_S,
                                                    args.lse_L, T)))
    note = f"trajectory={Path(args.trajectory).name} w={'ucb' if args.w_max is None else args.w_max}"
    write_diameter_log(out / "sme_diameters.csv", records, traj.n_x, note)
    write_lse_log(out / "lse_regions.csv", lse_records, note)
    if wrows:
        with open(out / "wmax.csv", "w") as fh:
            fh.write("T,w_bar,w_hat\n")
            for T, wb, wh in wrows:
                fh.write(f"{T},{wb:.17g},{wh:.17g}\n")
    if mset is not None:
        mset.save(out / "membership_set.json")
    print(out)
    return 0


def _finish(summary: ex.RunSummary, plots: bool) -> None:
    if plots:
        for png in render_figures(summary):
            print(png)
    else:
        emit_plot_scripts(summary)
    for name in summary.files.values():
        print(Path(summary.out_dir) / name)


def cmd_experiment(args) -> int:
    cfg = ex.load_config(args.config) if args.config else ex.load_preset(args.id)
    if args.config and cfg.experiment != args.id and args.id != cfg.name:
        raise ex.ConfigError(f"config is for experiment {cfg.experiment!r}, not {args.id!r}")
    if args.seeds is not None:
        cfg = cfg.with_overrides(seeds=args.seeds)
    summary = ex.run_experiment(cfg, args.out, threads=args.threads)
    _finish(summary, not args.no_plots)
    return 0


def cmd_bounds(args) -> int:
    cfg = _load(args, "bounds-table")
    if cfg.experiment != "bounds-table":
        raise ex.ConfigError("bounds needs a bounds-table config")
    if args.no_mc:
        cfg = cfg.with_overrides(monte_carlo=False)
    summary = ex.run_experiment(cfg, args.out, threads=args.threads)
    _finish(summary, not args.no_plots)
    return 0


def cmd_plots(args) -> int:
    if not args.out:
        raise ex.ConfigError("plots needs --out DIR pointing at an experiment output directory")
    for png in render_figures(args.out):
        print(png)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setmem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write trajectory CSVs for the seeds of a config")
    _common(p)
    p.add_argument("--horizon", type=int, help="steps to simulate (default: largest T of the grid)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="membership-set and LSE diameters for a trajectory CSV")
    _common(p)
    p.add_argument("trajectory", help="CSV written by `setmem simulate`")
    p.add_argument("--w-max", type=float, help="known disturbance bound")
    p.add_argument("--beta", type=float, help="use the UCB bound w_bar + delta_T with this beta")
    p.add_argument("--T", type=int, nargs="+", help="prefix lengths (default: powers of two)")
    p.add_argument("--method", default="support-sampled",
                   choices=["support-sampled", "exact-vertex", "axis-box"])
    p.add_argument("--budget", type=int, default=128, help="direction budget for support-sampled")
    p.add_argument("--lse-lambda", type=float, default=0.1)
    p.add_argument("--lse-delta", type=float, default=0.1)
    p.add_argument("--lse-S", type=float, default=1.0, help="norm bound on theta for the LSE radius")
    p.add_argument("--lse-L", type=float, default=1.0, help="sub-Gaussian scale for the LSE radius")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bounds", help="failure-bound table (and Monte-Carlo check)")
    _common(p)
    p.add_argument("--no-mc", action="store_true", help="skip the Monte-Carlo frequencies")
    p.add_argument("--no-plots", action="store_true", help="emit plot scripts without rendering")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", help="run a preset or config-driven experiment")
    p.add_argument("id", help=f"experiment id or preset name: {', '.join(ex.preset_names())}")
    _common(p)
    p.add_argument("--no-plots", action="store_true", help="emit plot scripts without rendering")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plots", help="emit plot scripts and render figures from existing CSVs")
    _common(p)
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ex.ConfigError, FileNotFoundError, ValueError) as err:
        print(f"setmem: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
