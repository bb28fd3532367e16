"""Command-line entry point.

Subcommands: ``interpolate`` (blend base shapes at a weight vector),
``simulate`` (roll one design out and export the trajectory), ``gradcheck``
(finite-difference audit of the adjoints), ``optimize`` (co-design run with
checkpoint/resume), and ``pareto`` (speed/efficiency weight sweep).

Exit codes: 0 success, 1 numeric failure (simulation blow-up, tolerance
violation), 2 configuration or input error.  Every output directory gets a
copy of the resolved config (including the seed) for provenance.  Set
``AQUA_LOG`` to a level name (DEBUG, INFO, ...) to adjust logging.
"""

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .actuators import interpolate_actuators, save_actuators
from .config import (ConfigError, build_problem, config_hash, load_config)
from .control import save_controller
from .grid import extract_shape, extract_surface, save_field
from .gradcheck import SizeCapError, run_gradcheck
from .losses import evaluate_loss
from .optimize import (AdamState, co_optimize, default_weight_grid,
                       pareto_sweep)
from .simulate import SimulationError, build_swimmer, rollout
from .transport import BarycenterProblem, barycenter

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2

log = logging.getLogger("aquadesign")


# ---------------------------------------------------------------------------
# Shared plumbing

def _setup_logging() -> None:
    level = os.environ.get("AQUA_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_provenance(config, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config.document, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "seed.txt"), "w") as fh:
        fh.write(f"{config.seed}\n")


def _parse_alpha(text, n: int) -> np.ndarray:
    """--alpha CSV list -> validated weight vector (uniform when omitted)."""
    if text is None:
        return np.full(n, 1.0 / n)
    try:
        alpha = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--alpha: {exc}") from exc
    if alpha.size != n:
        raise ConfigError(f"--alpha: expected {n} weights (one per base), "
                          f"got {alpha.size}")
    if np.any(alpha < 0):
        raise ConfigError(f"--alpha: weights must be nonnegative, "
                          f"got {alpha.tolist()}")
    total = alpha.sum()
    if abs(total - 1.0) > 1e-6:
        raise ConfigError(f"--alpha: weights must sum to 1, got {total!r}")
    return alpha / total


def export_obj(path: str, positions: np.ndarray, facets: np.ndarray) -> None:
    """Write facets as OBJ: 2D edges become line elements, 3D quads faces."""
    used = np.unique(facets.ravel())
    index = {int(n): i + 1 for i, n in enumerate(used)}  # OBJ is 1-based
    with open(path, "w") as fh:
        for n in used:
            p = positions[n]
            if p.size == 2:
                fh.write(f"v {p[0]!r} {p[1]!r} 0\n")
            else:
                fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
        tag = "l" if facets.shape[1] == 2 else "f"
        for row in facets:
            ids = " ".join(str(index[int(n)]) for n in row)
            fh.write(f"{tag} {ids}\n")


def _design_at(config, alpha):
    """Barycenter density plus interpolated actuators at one weight vector."""
    bprob = BarycenterProblem(bases=config.bases,
                              epsilon=config.optimizer.get("epsilon"))
    density, _ = barycenter(bprob, alpha)
    gaussians = interpolate_actuators(config.base_actuators, alpha)
    return density, gaussians


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# interpolate

def cmd_interpolate(config, alpha_text) -> int:
    alpha = _parse_alpha(alpha_text, len(config.bases))
    out_dir = config.out
    _write_provenance(config, out_dir)
    density, gaussians = _design_at(config, alpha)
    mask = extract_shape(density)
    surface = extract_surface(mask)

    grid = config.grid
    save_field(os.path.join(out_dir, "density.txt"), grid, density.values)
    save_field(os.path.join(out_dir, "mask.txt"), grid,
               mask.inside.astype(float))
    export_obj(os.path.join(out_dir, "surface.obj"),
               grid.node_positions(), surface.node_ids)
    save_actuators(os.path.join(out_dir, "actuators.txt"), gaussians)
    with open(os.path.join(out_dir, "alpha.txt"), "w") as fh:
        fh.write(" ".join(_fmt(a) for a in alpha) + "\n")
    print(f"interpolated {len(config.bases)} bases at "
          f"alpha=[{', '.join(f'{a:g}' for a in alpha)}]: "
          f"{mask.n_inside} cells, {surface.n_facets} surface facets")
    print(f"wrote density.txt, mask.txt, surface.obj, actuators.txt "
          f"to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def _write_trajectory_csv(path, traj) -> None:
    d = traj.model.mesh.ndim
    cols = (["step", "node"] + ["xyz"[k] for k in range(d)]
            + ["v" + "xyz"[k] for k in range(d)])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, s in enumerate(traj.states):
            for n in range(s.q.shape[0]):
                row = ([str(i), str(n)] + [_fmt(x) for x in s.q[n]]
                       + [_fmt(x) for x in s.v[n]])
                fh.write(",".join(row) + "\n")


def _write_hydro_csv(path, traj) -> None:
    d = traj.model.mesh.ndim
    axes = ["xyz"[k] for k in range(d)]
    cols = (["step"] + [f"drag_{a}" for a in axes]
            + [f"thrust_{a}" for a in axes]
            + [f"spine_vel_{a}" for a in axes])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(traj.n_steps):
            row = ([str(i)] + [_fmt(x) for x in traj.mean_drag[i]]
                   + [_fmt(x) for x in traj.mean_thrust[i]]
                   + [_fmt(x) for x in traj.spine_vel[i]])
            fh.write(",".join(row) + "\n")


def cmd_simulate(config, alpha_text) -> int:
    alpha = _parse_alpha(alpha_text, len(config.bases))
    out_dir = config.out
    _write_provenance(config, out_dir)
    density, gaussians = _design_at(config, alpha)
    problem = build_problem(config)
    controller = problem.make_controller()
    model = build_swimmer(density, gaussians, controller, config.sim)

    # design artifacts first, so a failed rollout still leaves them behind
    save_field(os.path.join(out_dir, "density.txt"), config.grid,
               density.values)
    export_obj(os.path.join(out_dir, "surface.obj"),
               model.mesh.nodes, model.surface.node_ids)
    save_actuators(os.path.join(out_dir, "actuators.txt"), gaussians)

    try:
        traj = rollout(model, config.sim.n_steps)
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        print(f"partial artifacts kept in {out_dir}", file=sys.stderr)
        return EXIT_NUMERIC

    _write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj)
    if model.hydro is not None:
        _write_hydro_csv(os.path.join(out_dir, "hydro.csv"), traj)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    for i in range(0, len(traj.states), config.obj_stride):
        export_obj(os.path.join(frames_dir, f"frame_{i:05d}.obj"),
                   traj.states[i].q, model.surface.node_ids)

    loss, _ = evaluate_loss(traj, config.loss, model.spine)
    print(f"simulated {config.sim.n_steps} steps "
          f"(h={config.sim.h:g}, {model.mesh.n_nodes} nodes)")
    print(f"final loss ({config.loss['kind']}): {loss!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck

def cmd_gradcheck(config) -> int:
    results = run_gradcheck(config)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status}  {r.name:<32} max rel err {r.error:.3e}  "
              f"tol {r.tol:.1e}")
    if failed:
        names = ", ".join(r.name for r in failed)
        print(f"gradcheck FAILED: {names}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"gradcheck passed: {len(results)} checks")
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize (with checkpoint/resume)

def _history_columns(row) -> list:
    m = len(row["alpha"])
    p = len(row["params"])
    return (["iteration", "loss", "loss_speed", "loss_efficiency"]
            + [f"alpha_{i}" for i in range(m)] + [f"p_{i}" for i in range(p)])


def write_history_csv(path: str, history: list) -> None:
    """One row per evaluated design; floats via repr so reads are exact."""
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        if history:
            fh.write(",".join(_history_columns(history[0])) + "\n")
        for row in history:
            cells = ([str(row["iteration"]), _fmt(row["loss"]),
                      _fmt(row["loss_speed"]), _fmt(row["loss_efficiency"])]
                     + [_fmt(a) for a in row["alpha"]]
                     + [_fmt(p) for p in row["params"]])
            fh.write(",".join(cells) + "\n")
    os.replace(tmp, path)


def read_history_csv(path: str) -> list:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        m = sum(1 for c in header if c.startswith("alpha_"))
        rows = []
        for line in fh:
            vals = line.strip().split(",")
            rows.append({
                "iteration": int(vals[0]),
                "loss": float(vals[1]),
                "loss_speed": float(vals[2]),
                "loss_efficiency": float(vals[3]),
                "alpha": [float(v) for v in vals[4:4 + m]],
                "params": np.array([float(v) for v in vals[4 + m:]]),
            })
    return rows


def _write_checkpoint(path, chash, next_iteration, params, adam) -> None:
    doc = {
        "hash": chash,
        "next_iteration": int(next_iteration),
        "params": [float(x) for x in params.flatten()],
        "adam": {
            "step": int(adam.step),
            "lr": [float(x) for x in np.atleast_1d(adam.lr)],
            "m": [float(x) for x in adam.m],
            "v": [float(x) for x in adam.v],
        },
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def _load_checkpoint(path, chash, problem):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("hash") != chash:
        raise ConfigError(
            "checkpoint does not match this configuration (only the "
            "iteration budget may change between a run and its resume); "
            f"refusing to resume from {path}")
    params = problem.initial_params()
    params.set_flat(np.array(doc["params"], dtype=float))
    a = doc["adam"]
    lr = np.array(a["lr"], dtype=float)
    adam = AdamState(lr=lr if lr.size > 1 else float(lr[0]),
                     m=np.array(a["m"], dtype=float),
                     v=np.array(a["v"], dtype=float),
                     step=int(a["step"]))
    return params, adam, int(doc["next_iteration"])


def cmd_optimize(config, resume: bool) -> int:
    problem = build_problem(config)
    out_dir = config.out
    _write_provenance(config, out_dir)
    chash = config_hash(config)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    hist_path = os.path.join(out_dir, "history.csv")

    params = adam = None
    start = 0
    history = None
    if resume:
        if not (os.path.exists(ckpt_path) and os.path.exists(hist_path)):
            raise ConfigError(f"--resume: no checkpoint in {out_dir}")
        params, adam, start = _load_checkpoint(ckpt_path, chash, problem)
        history = read_history_csv(hist_path)
        # a finished run's history already holds the evaluation at the
        # checkpoint iteration; drop it so the loop regenerates it instead
        # of appending a duplicate row
        history = [row for row in history if row["iteration"] < start]
        log.info("resuming at iteration %d with %d history rows",
                 start, len(history))

    def checkpoint(next_iteration, cur_params, cur_adam, cur_history):
        _write_checkpoint(ckpt_path, chash, next_iteration, cur_params,
                          cur_adam)
        write_history_csv(hist_path, cur_history)

    res = co_optimize(problem, params=params, adam=adam,
                      start_iteration=start, history=history,
                      callback=checkpoint)
    write_history_csv(hist_path, res.history)

    save_controller(os.path.join(out_dir, "controller.txt"),
                    res.params.controller)
    density, gaussians = _design_at(config, res.params.alpha)
    save_field(os.path.join(out_dir, "density.txt"), config.grid,
               density.values)
    save_actuators(os.path.join(out_dir, "actuators.txt"), gaussians)
    export_obj(os.path.join(out_dir, "surface.obj"),
               config.grid.node_positions(),
               extract_surface(extract_shape(density)).node_ids)
    with open(os.path.join(out_dir, "alpha.txt"), "w") as fh:
        fh.write(" ".join(_fmt(a) for a in res.params.alpha) + "\n")

    if res.failure is not None:
        print(f"optimization stopped early: {res.failure}", file=sys.stderr)
        print(f"partial history ({len(res.history)} rows) kept in {out_dir}",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"optimized {len(res.history)} evaluations; "
          f"final loss {res.final_loss!r}")
    print(f"history, checkpoint, and final design written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pareto

def cmd_pareto(config, workers) -> int:
    problem = build_problem(config)
    out_dir = config.out
    _write_provenance(config, out_dir)
    weights = config.pareto.get("weights")
    if weights is None:
        weights = default_weight_grid()
    if workers is None:
        workers = config.pareto.get("workers", 1)

    gamut = pareto_sweep(problem, weights=weights, workers=workers)

    # per-weight run directories, then the merged gamut
    weights = sorted(float(w) for w in weights)
    for k, w in enumerate(weights):
        run_dir = os.path.join(out_dir, f"run_{k:02d}")
        os.makedirs(run_dir, exist_ok=True)
        rows = [p for p in gamut.points if p["w_s"] == w]
        with open(os.path.join(run_dir, "history.csv"), "w") as fh:
            fh.write("w_s,iteration,loss,loss_speed,loss_efficiency\n")
            for p in rows:
                fh.write(",".join([_fmt(p["w_s"]), str(p["iteration"]),
                                   _fmt(p["loss"]), _fmt(p["loss_speed"]),
                                   _fmt(p["loss_efficiency"])]) + "\n")

    with open(os.path.join(out_dir, "gamut.csv"), "w") as fh:
        fh.write("w_s,iteration,loss_speed,loss_efficiency\n")
        for p in gamut.points:
            fh.write(",".join([_fmt(p["w_s"]), str(p["iteration"]),
                               _fmt(p["loss_speed"]),
                               _fmt(p["loss_efficiency"])]) + "\n")
    with open(os.path.join(out_dir, "front.csv"), "w") as fh:
        fh.write("point,w_s,iteration,loss_speed,loss_efficiency\n")
        for i in gamut.front:
            p = gamut.points[i]
            fh.write(",".join([str(i), _fmt(p["w_s"]), str(p["iteration"]),
                               _fmt(p["loss_speed"]),
                               _fmt(p["loss_efficiency"])]) + "\n")

    print(f"swept {len(weights)} weights, {len(gamut.points)} designs, "
          f"{len(gamut.front)} on the front")
    print(f"gamut.csv, front.csv, and per-weight runs written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argparse wiring

def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aquadesign",
        description="Differentiable co-design of soft swimmers on a grid.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, alpha=False, resume=False, workers=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", default=None,
                       help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override (recorded in provenance)")
        if alpha:
            p.add_argument("--alpha", default=None,
                           help="comma-separated base weights (default uniform)")
        if resume:
            p.add_argument("--resume", action="store_true",
                           help="continue from the checkpoint in the "
                                "output directory")
        if workers:
            p.add_argument("--workers", type=int, default=None,
                           help="parallel sweep workers")
        return p

    add("interpolate", "blend the base shapes at a weight vector",
        alpha=True)
    add("simulate", "roll out one design and export the trajectory",
        alpha=True)
    add("gradcheck", "finite-difference audit of all adjoints (small "
        "configs only)")
    add("optimize", "co-optimize geometry weights and controller",
        resume=True)
    add("pareto", "sweep the speed/efficiency trade-off weight",
        workers=True)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = _make_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "interpolate":
            return cmd_interpolate(config, args.alpha)
        if args.command == "simulate":
            return cmd_simulate(config, args.alpha)
        if args.command == "gradcheck":
            return cmd_gradcheck(config)
        if args.command == "optimize":
            return cmd_optimize(config, args.resume)
        if args.command == "pareto":
            return cmd_pareto(config, args.workers)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, SizeCapError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
