"""``mfl`` command line: simulate, study <name>, metrics.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import experiments as ex
from .particles import NonFiniteStateError, simulate
from .sampling import epsilon_scale, mesh_init, sample_iid
from .snapshots import (
    SnapshotFormatError, read_points, write_csv, write_grid, write_json, write_manifest,
    write_trajectory,
)
from .transport import WeightedCloud, distance_report, w1, winf
from .vlasov import CFLError, GridBoundaryError, PhaseGrid, bump_density, evolve_grid

STUDIES = ("converge", "cutoff", "dev-linf", "dev-dmin", "dev-w1", "monitor", "params")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("mfl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("MFL_OUT_DIR")
    if not out:
        raise cfgmod.ConfigError("--out", "no output directory (pass --out or set MFL_OUT_DIR)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args) -> dict:
    cfg = cfgmod.load(args.config) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise cfgmod.ConfigError("--threads", "must be >= 1")
        cfg["threads"] = args.threads
    return cfgmod.validate(cfg)


def _manifest(command: str, cfg: dict, started: str, stages: dict) -> dict:
    return {
        "tool": "mfl", "version": __version__, "command": command,
        "config": cfg, "config_text": cfgmod.dumps(cfg),
        "seed": cfg.get("seed", 0),
        "replica_streams": "stream = 1 + replica + replicas * index(N); reference stream 0",
        "threads": cfg.get("threads", 1),
        "started": started, "finished": _now(), "wall_times": stages,
        "python": platform.python_version(), "numpy": np.__version__,
    }


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    started, t0 = _now(), time.perf_counter()
    stages = {}
    files = []
    threads = cfg.get("threads", 1)
    dt = cfg.get("dt", 1e-3)
    t_end = cfg.get("t_end", 0.1)
    n_steps = int(round(t_end / dt))
    every = cfg.get("record_every", max(1, n_steps // 10) if n_steps else 1)
    kernel = cfgmod.kernel_from(cfg)
    if cfg.get("simulate.mode", "particles") == "grid":
        if kernel.dim != 1:
            raise cfgmod.ConfigError("kernel.dim", "grid mode needs kernel.dim = 1")
        fn = bump_density(0.0, 0.0, cfg.get("grid.rx", 1.0), cfg.get("grid.rv", 1.0),
                          cfg.get("grid.power", 12))
        xm, vm = cfg.get("grid.x_max", 3.0), cfg.get("grid.v_max", 3.0)
        grid = PhaseGrid.from_function(fn, (-xm, xm), (-vm, vm), cfg.get("grid.nx", 256),
                                       cfg.get("grid.nv", 256))
        hist = evolve_grid(grid, kernel, dt, n_steps, every)
        stages["evolve"] = time.perf_counter() - t0
        for k, g in enumerate(hist):
            path = out / f"grid_{k:04d}.mflg"
            write_grid(path, g)
            files.append(path)
    else:
        density = cfgmod.density_from(cfg)
        if cfg.get("init", "iid") == "mesh":
            b = cfg.get("box", 1.0)
            state = mesh_init(cfg.get("n_per_axis", 4), ([-b] * density.dim, [b] * density.dim))
        else:
            state = sample_iid(density, cfg.get("simulate.n", 256), cfg.get("seed", 0))
        gamma = cfg.get("gamma", 0.9)
        kernel = kernel.with_epsilon(epsilon_scale(state.n, gamma, kernel.dim))
        traj = simulate(state, kernel, dt, n_steps, record_every=every,
                        track_collisions=kernel.cutoff is None, threads=threads)
        stages["simulate"] = time.perf_counter() - t0
        path = out / "trajectory.mfl"
        write_trajectory(path, traj.states, traj.dt)
        files.append(path)
        summary = {"N": state.n, "d": state.dim, "steps": n_steps, "dt": dt,
                   "near_collision_steps": traj.near_collision_steps,
                   "min_position_distance": traj.min_position_distance}
        spath = out / "summary.json"
        write_json(spath, summary)
        files.append(spath)
    write_manifest(out, _manifest("simulate", cfg, started, stages), files)
    return EXIT_OK


# ---------------------------------------------------------------------------
# study

def _run_study(name: str, cfg: dict) -> ex.StudyResult:
    seed = cfg.get("seed", 0)
    if name == "params":
        p = ex.admissible_params(cfg.get("kernel.dim", 3), cfg.get("kernel.alpha", 0.5))
        res = ex.StudyResult("params", summary={"study": "params", **p.to_dict()})
        print(f"gamma* = {p.gamma_star:.6g}")
        print(f"r*     = {p.r_star:.6g}")
        print(f"m_bar* = {p.m_bar_star if p.m_bar_star is None else round(p.m_bar_star, 6)}")
        print(f"probabilistic window empty: {p.prob_window_empty}")
        print("gamma      s*(gamma)")
        for g, s in p.to_dict()["s_star"]:
            print(f"{g:<10.6g} {s:.6g}")
        return res
    if name == "converge":
        return ex.convergence_study(cfgmod.study_config_from(cfg))
    if name == "cutoff":
        if "m_bar_list" not in cfg:
            raise cfgmod.ConfigError("m_bar_list", "required for the cutoff study")
        # placeholder cut-off so alpha >= d - 1 validates; replaced per m_bar
        sc = cfgmod.study_config_from({**cfg, "kernel.cutoff.m_bar": cfg["m_bar_list"][0]})
        return ex.cutoff_study(sc, cfg["m_bar_list"], cfg.get("kernel.cutoff.profile", "exact"))
    density = cfgmod.density_from(cfg)
    n_list = cfg.get("n_list", [64, 128, 256])
    replicas = cfg.get("replicas", 16)
    if name == "dev-linf":
        return ex.deviation_study_linf(density, n_list, cfg.get("gamma", 0.5), replicas, seed,
                                       cfg.get("level", 0.99))
    if name == "dev-dmin":
        if "l_grid" not in cfg:
            raise cfgmod.ConfigError("l_grid", "required for the dev-dmin study")
        return ex.deviation_study_dmin(density, n_list, cfg["l_grid"], replicas, seed)
    if name == "dev-w1":
        return ex.deviation_study_w1(density, n_list, replicas, seed)
    if name == "monitor":
        return ex.deterministic_monitor(cfgmod.monitor_config_from(cfg))
    raise AssertionError(name)


def cmd_study(args) -> int:
    if args.name not in STUDIES:
        print(f"mfl: unknown study {args.name!r}; valid names: {', '.join(STUDIES)}", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load(args)
    out = _out_dir(args)
    started, t0 = _now(), time.perf_counter()
    res = _run_study(args.name, cfg)
    stages = dict(res.timings)
    stages["total"] = time.perf_counter() - t0
    csv_path, sum_path = out / "results.csv", out / "summary.json"
    write_csv(csv_path, res.rows)
    write_json(sum_path, res.summary)
    write_manifest(out, _manifest(f"study {args.name}", cfg, started, stages), [csv_path, sum_path])
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics

def cmd_metrics(args) -> int:
    a = read_points(args.file_a)
    b = read_points(args.file_b)
    if a.shape[1] != b.shape[1]:
        raise SnapshotFormatError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    fn = w1 if args.kind == "w1" else winf
    res = fn(WeightedCloud(a), WeightedCloud(b))
    print(json.dumps(distance_report(res, len(a), len(b)), sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory (default: $MFL_OUT_DIR)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker cap; 1 gives bit-reproducible output")
    p = _Parser(prog="mfl", description="Mean-field particle laboratory.")
    p.add_argument("--version", action="version", version=f"mfl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="run one particle or grid simulation")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("study", parents=[common], help=f"run a study: {', '.join(STUDIES)}")
    s.add_argument("name")
    s.set_defaults(func=cmd_study)
    s = sub.add_parser("metrics", help="W1 or W-infinity between two snapshot files")
    s.add_argument("file_a")
    s.add_argument("file_b")
    s.add_argument("--kind", choices=("w1", "winf"), default="w1")
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteStateError as exc:
        print(f"mfl: runtime error: non-finite state at step {exc.step}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CFLError, GridBoundaryError, FloatingPointError, RuntimeError) as exc:
        print(f"mfl: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (cfgmod.ConfigError, SnapshotFormatError, ValueError) as exc:
        # remaining ValueErrors come from constructing specs out of the config
        print(f"mfl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"mfl: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
