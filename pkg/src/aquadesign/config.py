"""Experiment configuration: one JSON document describing a whole run.

The document names the grid, the base-shape and actuator files, the
controller, the simulation constants, the loss, and the optimizer budget.
Loading resolves file paths relative to the document, checks that every
referenced file exists and lives on the declared grid, and aligns the base
shapes' centers of mass (by whole-cell shifts, so each base stays a valid
density on the same grid).  ``config_hash`` fingerprints everything that
affects the math -- but not the iteration budget, so a resumed run may
extend it.
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .actuators import ActuatorGaussian, load_actuators
from .grid import DensityField, GridSpec, load_field
from .hydro import CoefficientTable
from .optimize import MODES, RESCALE_MODES, OptimizationProblem
from .simulate import SimSetup

LOSS_KINDS = ("distance", "position_keeping", "efficiency", "weighted")
CONTROLLER_KEYS = {"type", "params", "jitter", "seed", "period_steps",
                   "use_encoding"}
SIM_KEYS = {"h", "n_steps", "e0", "e_min", "nu", "rho_solid", "rho_fluid",
            "sigma_max", "damping", "v_water", "drag_table", "thrust_table",
            "use_hydro", "obj_stride"}
OPTIMIZER_KEYS = {"iterations", "mode", "rescale", "lr_geometry",
                  "lr_control", "epsilon", "stop_tol", "stop_window",
                  "logits0"}
PARETO_KEYS = {"weights", "workers"}
TOP_KEYS = {"grid", "bases", "actuators", "controller", "sim", "loss",
            "optimizer", "pareto", "seed", "out"}


class ConfigError(Exception):
    """A malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """A fully loaded experiment: files read, bases aligned, knobs typed."""

    grid: GridSpec
    bases: List[DensityField]
    base_actuators: list                 # one list of ActuatorGaussian per base
    controller: dict
    sim: SimSetup
    loss: dict
    optimizer: dict
    pareto: dict
    seed: int
    out: str
    document: dict = field(repr=False, default=None)  # resolved JSON
    path: str = ""
    obj_stride: int = 10


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    extra = sorted(set(section) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}; "
                          f"allowed: {sorted(allowed)}")


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _load_table(spec, where: str) -> Optional[CoefficientTable]:
    if spec is None:
        return None
    if not isinstance(spec, dict) or set(spec) != {"knots", "values"}:
        raise ConfigError(f"{where}: expected {{'knots': [...], 'values': [...]}}")
    try:
        return CoefficientTable(np.asarray(spec["knots"], dtype=float),
                                np.asarray(spec["values"], dtype=float))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _center_of_mass(density: DensityField) -> np.ndarray:
    centers = density.grid.cell_centers().reshape(-1, density.grid.ndim)
    return centers.T @ density.values.ravel()


def _shift_cells(values: np.ndarray, shift) -> np.ndarray:
    """Translate a cell field by whole cells, zero-filling; refuse to spill."""
    out = values
    for axis, s in enumerate(shift):
        s = int(s)
        if s == 0:
            continue
        moved = np.zeros_like(out)
        src = [slice(None)] * out.ndim
        dst = [slice(None)] * out.ndim
        if s > 0:
            src[axis] = slice(0, out.shape[axis] - s)
            dst[axis] = slice(s, None)
            lost = out[tuple(dst[:axis] + [slice(out.shape[axis] - s, None)]
                             + dst[axis + 1:])]
        else:
            src[axis] = slice(-s, None)
            dst[axis] = slice(0, out.shape[axis] + s)
            lost = out[tuple(dst[:axis] + [slice(0, -s)] + dst[axis + 1:])]
        if np.any(lost != 0):
            raise ConfigError(
                "center-of-mass alignment would push mass off the grid "
                f"(axis {axis}, shift {s} cells); enlarge the grid or "
                "pre-center the base shapes")
        moved[tuple(dst)] = out[tuple(src)]
        out = moved
    return out


def align_centers_of_mass(bases: List[DensityField], actuator_sets: list):
    """Shift every base (and its actuators) so all centers of mass agree.

    Shifts are whole numbers of cells toward the first base's center of
    mass, so each field stays a valid density on the shared grid and the
    residual misalignment is at most half a cell per axis.
    """
    grid = bases[0].grid
    target = _center_of_mass(bases[0])
    out_bases, out_acts = [bases[0]], [actuator_sets[0]]
    for density, acts in zip(bases[1:], actuator_sets[1:]):
        shift = np.rint((target - _center_of_mass(density))
                        / grid.cell_size).astype(int)
        if np.all(shift == 0):
            out_bases.append(density)
            out_acts.append(acts)
            continue
        values = _shift_cells(density.values, shift)
        offset = shift * grid.cell_size
        moved = [ActuatorGaussian(category=g.category, mu=g.mu + offset,
                                  angles=g.angles, eigenvalues=g.eigenvalues)
                 for g in acts]
        out_bases.append(DensityField(grid=grid, values=values))
        out_acts.append(moved)
    return out_bases, out_acts


def _load_bases(doc: dict, grid: GridSpec, base_dir: str):
    paths = doc.get("bases")
    if not isinstance(paths, list) or not paths:
        raise ConfigError("config needs a nonempty 'bases' list of file paths")
    act_paths = doc.get("actuators")
    if not isinstance(act_paths, list) or len(act_paths) != len(paths):
        raise ConfigError("'actuators' must list one file per base shape")
    bases, actuator_sets = [], []
    for path in paths:
        full = os.path.join(base_dir, path)
        if not os.path.exists(full):
            raise ConfigError(f"base shape file not found: {full}")
        try:
            fgrid, values = load_field(full)
        except ValueError as exc:
            raise ConfigError(f"{full}: {exc}") from exc
        if fgrid != grid:
            raise ConfigError(
                f"{full}: grid {fgrid.dims} @ {fgrid.cell_size} does not "
                f"match config grid {grid.dims} @ {grid.cell_size}")
        if np.any(values < 0):
            raise ConfigError(f"{full}: density values must be nonnegative")
        total = values.sum()
        if total <= 0:
            raise ConfigError(f"{full}: density has no mass")
        if abs(total - 1.0) > 1e-12:
            values = values / total
        bases.append(DensityField(grid=grid, values=values))
    for path in act_paths:
        full = os.path.join(base_dir, path)
        if not os.path.exists(full):
            raise ConfigError(f"actuator file not found: {full}")
        try:
            acts = load_actuators(full, grid.ndim)
        except ValueError as exc:
            raise ConfigError(f"{full}: {exc}") from exc
        if not acts:
            raise ConfigError(f"{full}: no actuators defined")
        actuator_sets.append(acts)
    return align_centers_of_mass(bases, actuator_sets)


def _load_sim(section: dict) -> SimSetup:
    _reject_unknown(section, SIM_KEYS, "sim")
    kwargs = {}
    for key in ("h", "e0", "e_min", "nu", "rho_solid", "rho_fluid",
                "sigma_max"):
        if key in section:
            kwargs[key] = _as_number(section[key], f"sim.{key}")
    if "n_steps" in section:
        n = section["n_steps"]
        if not isinstance(n, int) or n < 0:
            raise ConfigError(f"sim.n_steps: expected a nonnegative integer, "
                              f"got {n!r}")
        kwargs["n_steps"] = n
    if "damping" in section:
        d = section["damping"]
        if not isinstance(d, list) or len(d) != 2:
            raise ConfigError("sim.damping: expected [mass_coeff, stiffness_coeff]")
        kwargs["damping"] = (float(d[0]), float(d[1]))
    if "v_water" in section:
        kwargs["v_water"] = tuple(float(x) for x in section["v_water"])
    if "use_hydro" in section:
        if not isinstance(section["use_hydro"], bool):
            raise ConfigError("sim.use_hydro: expected true/false")
        kwargs["use_hydro"] = section["use_hydro"]
    kwargs["drag_table"] = _load_table(section.get("drag_table"),
                                       "sim.drag_table")
    kwargs["thrust_table"] = _load_table(section.get("thrust_table"),
                                         "sim.thrust_table")
    try:
        setup = SimSetup(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc
    if setup.h <= 0:
        raise ConfigError(f"sim.h must be positive, got {setup.h}")
    return setup


_LOSS_KEYS = {
    "distance": {"kind"},
    "position_keeping": {"kind", "gamma", "q_target", "d_target"},
    "efficiency": {"kind"},
    "weighted": {"kind", "w_s"},
}


def _check_loss(section: dict) -> dict:
    if "kind" not in section:
        raise ConfigError("loss: missing 'kind'")
    if section["kind"] not in LOSS_KINDS:
        raise ConfigError(f"loss.kind: unknown kind {section['kind']!r}; "
                          f"expected one of {LOSS_KINDS}")
    _reject_unknown(section, _LOSS_KEYS[section["kind"]], "loss")
    return dict(section)


def _check_optimizer(section: dict) -> dict:
    _reject_unknown(section, OPTIMIZER_KEYS, "optimizer")
    out = dict(section)
    if "iterations" in out and (not isinstance(out["iterations"], int)
                                or out["iterations"] < 0):
        raise ConfigError("optimizer.iterations: expected a nonnegative integer")
    if "mode" in out and out["mode"] not in MODES:
        raise ConfigError(f"optimizer.mode: unknown mode {out['mode']!r}; "
                          f"expected one of {MODES}")
    if "rescale" in out and out["rescale"] not in RESCALE_MODES:
        raise ConfigError(f"optimizer.rescale: unknown mode {out['rescale']!r}")
    return out


def _check_pareto(section: dict) -> dict:
    _reject_unknown(section, PARETO_KEYS, "pareto")
    out = dict(section)
    if "weights" in out:
        w = out["weights"]
        if (not isinstance(w, list) or not w
                or any(not isinstance(x, (int, float)) or isinstance(x, bool)
                       or x < 0 or x > 1 for x in w)):
            raise ConfigError("pareto.weights: expected a nonempty list of "
                              "numbers in [0, 1]")
    if "workers" in out and (not isinstance(out["workers"], int)
                             or out["workers"] < 1):
        raise ConfigError("pareto.workers: expected a positive integer")
    return out


def load_config(path: str, seed: int = None, out: str = None) -> ExperimentConfig:
    """Read, validate, and resolve an experiment JSON document.

    ``seed``/``out`` override the document (command-line flags); the
    override is folded into the resolved document so provenance copies
    show what actually ran.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    _reject_unknown(doc, TOP_KEYS, path)
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = int(seed)
    if out is not None:
        doc["out"] = out

    gsec = doc.get("grid")
    if not isinstance(gsec, dict) or set(gsec) != {"dims", "cell_size"}:
        raise ConfigError("config needs grid: {'dims': [...], 'cell_size': s}")
    try:
        grid = GridSpec(dims=tuple(gsec["dims"]),
                        cell_size=float(gsec["cell_size"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc

    base_dir = os.path.dirname(os.path.abspath(path))
    bases, actuator_sets = _load_bases(doc, grid, base_dir)

    controller = doc.get("controller", {"type": "open_loop"})
    if not isinstance(controller, dict):
        raise ConfigError("controller: expected an object")
    _reject_unknown(controller, CONTROLLER_KEYS, "controller")
    if controller.get("type", "open_loop") not in ("open_loop", "mlp"):
        raise ConfigError(f"controller.type: unknown type "
                          f"{controller.get('type')!r}")

    sim = _load_sim(doc.get("sim", {}))
    loss = _check_loss(doc.get("loss", {"kind": "distance"}))
    optimizer = _check_optimizer(doc.get("optimizer", {}))
    pareto = _check_pareto(doc.get("pareto", {}))
    seed_val = doc.get("seed", 0)
    if not isinstance(seed_val, int) or isinstance(seed_val, bool):
        raise ConfigError(f"seed: expected an integer, got {seed_val!r}")
    out_val = doc.get("out", "out")
    if not isinstance(out_val, str) or not out_val:
        raise ConfigError("out: expected a nonempty directory path")
    stride = doc.get("sim", {}).get("obj_stride", 10)
    if not isinstance(stride, int) or stride < 1:
        raise ConfigError("sim.obj_stride: expected a positive integer")

    return ExperimentConfig(grid=grid, bases=bases,
                            base_actuators=actuator_sets,
                            controller=controller, sim=sim, loss=loss,
                            optimizer=optimizer, pareto=pareto,
                            seed=seed_val, out=out_val, document=doc,
                            path=os.path.abspath(path), obj_stride=stride)


def build_problem(config: ExperimentConfig) -> OptimizationProblem:
    """Turn a loaded config into an optimization problem."""
    opt = config.optimizer
    kwargs = {k: opt[k] for k in ("iterations", "mode", "rescale",
                                  "lr_geometry", "lr_control", "epsilon",
                                  "stop_tol", "stop_window") if k in opt}
    if "logits0" in opt and opt["logits0"] is not None:
        kwargs["logits0"] = np.asarray(opt["logits0"], dtype=float)
    try:
        return OptimizationProblem(bases=config.bases,
                                   base_actuators=config.base_actuators,
                                   controller_spec=config.controller,
                                   setup=config.sim,
                                   loss_spec=config.loss,
                                   seed=config.seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(config: ExperimentConfig) -> str:
    """Fingerprint of everything that affects the numbers.

    The iteration budget, output directory, and worker count are excluded:
    a checkpointed run may legitimately resume with a larger budget or in a
    relocated directory, but never with different physics or seed.
    """
    doc = copy.deepcopy(config.document)
    doc.get("optimizer", {}).pop("iterations", None)
    doc.get("pareto", {}).pop("workers", None)
    doc.pop("out", None)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
