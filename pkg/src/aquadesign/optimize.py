"""Gradient-based co-design of geometry weights and controller parameters.

Geometry lives on the probability simplex via a softmax over ``m`` logits;
each iteration rebuilds the barycenter shape, the stiffness field, and the
actuator layout from the current weights, rolls the swimmer out, and pulls
the loss gradient back through the simulator adjoint and the barycenter
VJP.  Both parameter blocks are updated by one shared Adam optimizer with a
per-component learning rate.
"""

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .actuators import interpolate_actuators
from .control import make_controller
from .grid import DensityField, stiffness_field_vjp
from .losses import evaluate_loss, loss_distance, loss_efficiency
from .simulate import SimulationError, SimSetup, backward, build_swimmer, rollout
from .transport import BarycenterProblem, barycenter, barycenter_vjp

MODES = ("simultaneous", "control_only", "shape_only", "alternating")
RESCALE_MODES = ("default", "balanced", "reversed")
DEFAULT_LR_GEOMETRY = 1e-2
DEFAULT_LR_OPEN_LOOP = 1e-2
DEFAULT_LR_MLP = 1e-3
STOP_TOL = 1e-6
STOP_WINDOW = 10


def softmax_simplex(logits) -> np.ndarray:
    """Shift-invariant softmax onto the probability simplex."""
    logits = np.asarray(logits, dtype=float)
    z = np.exp(logits - logits.max())
    return z / z.sum()


def softmax_vjp(alpha: np.ndarray, alpha_bar: np.ndarray) -> np.ndarray:
    """Pull a simplex cotangent back to the logits."""
    alpha = np.asarray(alpha)
    alpha_bar = np.asarray(alpha_bar)
    return alpha * (alpha_bar - float(alpha @ alpha_bar))


@dataclass
class AdamState:
    lr: np.ndarray                 # scalar or per-component
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(n: int, lr) -> AdamState:
    lr = np.asarray(lr, dtype=float)
    if lr.ndim not in (0, 1) or (lr.ndim == 1 and lr.size != n):
        raise ValueError("learning rate must be scalar or one per parameter")
    return AdamState(lr=lr, m=np.zeros(n), v=np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape or grads.shape != state.m.shape:
        raise ValueError("gradient/parameter shape mismatch")
    if not np.isfinite(grads).all():
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise ValueError(f"non-finite gradient (first at component {bad}); "
                         "step rejected")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def rescale_gradients(geometry: np.ndarray, control: np.ndarray, mode: str):
    """Per-block magnitude balancing; never changes a component's sign.

    ``balanced`` scales the control block so both blocks share the same mean
    absolute component; ``reversed`` squares that correction, turning a
    measured geometry:control ratio of r:1 into 1:r.
    """
    if mode not in RESCALE_MODES:
        raise ValueError(f"unknown rescale mode {mode!r}")
    if mode == "default":
        return geometry, control
    mg = float(np.abs(geometry).mean()) if geometry.size else 0.0
    mc = float(np.abs(control).mean()) if control.size else 0.0
    if mg == 0.0 or mc == 0.0:
        warnings.warn("rescale_gradients: a block has zero magnitude; "
                      "leaving gradients unchanged", RuntimeWarning)
        return geometry, control
    ratio = mg / mc
    scale = ratio if mode == "balanced" else ratio * ratio
    return geometry, control * scale


@dataclass
class DesignParams:
    """Joint decision vector: simplex logits plus controller parameters."""

    logits: np.ndarray
    controller: object

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)

    @property
    def n_geometry(self) -> int:
        return self.logits.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.logits, self.controller.flatten()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        m = self.n_geometry
        self.logits = flat[:m].copy()
        self.controller.set_flat(flat[m:])

    @property
    def alpha(self) -> np.ndarray:
        return softmax_simplex(self.logits)


@dataclass
class OptimizationProblem:
    """Inputs of one co-design run (design-independent)."""

    bases: List[DensityField]
    base_actuators: list                 # per base: list of ActuatorGaussian
    controller_spec: dict
    setup: SimSetup
    loss_spec: dict = field(default_factory=lambda: {"kind": "distance"})
    iterations: int = 100
    mode: str = "simultaneous"
    rescale: str = "default"
    lr_geometry: float = DEFAULT_LR_GEOMETRY
    lr_control: Optional[float] = None
    epsilon: Optional[float] = None      # barycenter entropic scale
    stop_tol: float = STOP_TOL
    stop_window: int = STOP_WINDOW
    seed: int = 0
    logits0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown optimization mode {self.mode!r}")
        if self.rescale not in RESCALE_MODES:
            raise ValueError(f"unknown rescale mode {self.rescale!r}")
        if len(self.bases) != len(self.base_actuators):
            raise ValueError("need one actuator set per base shape")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")

    @property
    def grid(self):
        return self.bases[0].grid

    def n_signals(self) -> int:
        cats = {g.category for acts in self.base_actuators for g in acts}
        return len(cats)

    def make_controller(self):
        spec = dict(self.controller_spec)
        spec.setdefault("seed", self.seed)
        return make_controller(spec, self.grid.ndim, self.n_signals(),
                               self.setup.h)

    def initial_params(self) -> DesignParams:
        logits = (np.zeros(len(self.bases)) if self.logits0 is None
                  else np.asarray(self.logits0, dtype=float).copy())
        if logits.shape != (len(self.bases),):
            raise ValueError("logits0 must have one entry per base")
        return DesignParams(logits=logits, controller=self.make_controller())


@dataclass
class EvalResult:
    loss: float
    loss_speed: float
    loss_efficiency: float
    traj: object
    density: DensityField
    bary_tape: object
    model: object
    cotangent: object = None


def evaluate_design(problem: OptimizationProblem, params: DesignParams) -> EvalResult:
    """Forward pipeline: weights -> shape -> actuators -> rollout -> losses."""
    alpha = params.alpha
    assert abs(float(alpha.sum()) - 1.0) < 1e-12 and np.all(alpha >= 0)
    bprob = BarycenterProblem(bases=problem.bases, epsilon=problem.epsilon)
    density, tape = barycenter(bprob, alpha)
    gaussians = interpolate_actuators(problem.base_actuators, alpha)
    model = build_swimmer(density, gaussians, params.controller, problem.setup)
    traj = rollout(model, problem.setup.n_steps)
    loss, cot = evaluate_loss(traj, problem.loss_spec, model.spine)
    v_speed, _ = loss_distance(traj, model.spine)
    if model.hydro is not None:
        v_eff, _ = loss_efficiency(traj)
    else:
        v_eff = 0.0
    return EvalResult(loss=float(loss), loss_speed=float(v_speed),
                      loss_efficiency=float(v_eff), traj=traj,
                      density=density, bary_tape=tape, model=model,
                      cotangent=cot)


def design_gradient(problem: OptimizationProblem, params: DesignParams,
                    ev: EvalResult) -> np.ndarray:
    """Loss gradient over the flat (logits ++ controller) vector."""
    grads = backward(ev.traj, ev.cotangent)
    e_bar = grads["E"].reshape(problem.grid.dims)
    rho_bar = stiffness_field_vjp(ev.density, problem.setup.e0, e_bar,
                                  problem.setup.e_min)
    alpha_bar = barycenter_vjp(ev.bary_tape, rho_bar)
    logits_bar = softmax_vjp(params.alpha, alpha_bar)
    ctl_bar = grads["controller"]
    if ctl_bar is None:
        ctl_bar = np.zeros(0)
    return np.concatenate([logits_bar, ctl_bar])


@dataclass
class OptimizationResult:
    history: list                  # dict rows: iteration, loss, terms, params
    params: DesignParams
    adam: AdamState
    failure: Optional[str] = None

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]


def _block_mask(problem: OptimizationProblem, params: DesignParams,
                iteration: int) -> tuple:
    """Which blocks update this iteration: (geometry?, control?)."""
    mode = problem.mode
    if mode == "simultaneous":
        return True, True
    if mode == "control_only":
        return False, True
    if mode == "shape_only":
        return True, False
    return (iteration % 2 == 0), (iteration % 2 == 1)


def co_optimize(problem: OptimizationProblem, params: DesignParams = None,
                adam: AdamState = None, start_iteration: int = 0,
                history: list = None, callback=None) -> OptimizationResult:
    """Run the co-design loop.

    Records one history row per evaluated design (the initial design plus
    one per completed update).  On a simulation failure or rejected step the
    partial history is returned with ``failure`` set.  ``params``/``adam``/
    ``start_iteration``/``history`` allow exact resumption.
    """
    if params is None:
        params = problem.initial_params()
    flat = params.flatten()
    if adam is None:
        m = params.n_geometry
        lr_ctl = problem.lr_control
        if lr_ctl is None:
            lr_ctl = (DEFAULT_LR_OPEN_LOOP
                      if params.controller.kind == "open_loop" else DEFAULT_LR_MLP)
        lr = np.concatenate([np.full(m, problem.lr_geometry),
                             np.full(flat.size - m, lr_ctl)])
        adam = init_adam(flat.size, lr)
    history = list(history) if history else []
    failure = None

    for it in range(start_iteration, problem.iterations + 1):
        try:
            ev = evaluate_design(problem, params)
        except (SimulationError, ValueError, RuntimeError) as exc:
            failure = f"iteration {it}: {exc}"
            break
        row = {
            "iteration": it,
            "loss": ev.loss,
            "loss_speed": ev.loss_speed,
            "loss_efficiency": ev.loss_efficiency,
            "alpha": params.alpha.tolist(),
            "params": params.flatten(),
        }
        history.append(row)
        if it == problem.iterations:
            break
        if len(history) > problem.stop_window:
            prev = history[-1 - problem.stop_window]["loss"]
            if abs(ev.loss - prev) < problem.stop_tol * max(1.0, abs(prev)):
                break
        try:
            grad = design_gradient(problem, params, ev)
            m = params.n_geometry
            g_geo, g_ctl = rescale_gradients(grad[:m], grad[m:], problem.rescale)
            up_geo, up_ctl = _block_mask(problem, params, it)
            if not up_geo:
                g_geo = np.zeros_like(g_geo)
            if not up_ctl:
                g_ctl = np.zeros_like(g_ctl)
            flat = adam_step(params.flatten(),
                             np.concatenate([g_geo, g_ctl]), adam)
            params.set_flat(flat)
        except (SimulationError, ValueError, RuntimeError) as exc:
            failure = f"iteration {it}: {exc}"
            break
        if callback is not None:
            # Post-update: restarting from (it + 1, params, adam) with the
            # history recorded so far reproduces an uninterrupted run.
            callback(it + 1, params, adam, history)
    return OptimizationResult(history=history, params=params, adam=adam,
                              failure=failure)


# ---------------------------------------------------------------------------
# Pareto sweep

@dataclass
class ParetoGamut:
    """All designs visited by a weight sweep plus the non-dominated front."""

    points: list            # dict rows with w_s, iteration, losses, params
    front: list             # indices into points

    def objectives(self) -> np.ndarray:
        return np.array([[p["loss_speed"], p["loss_efficiency"]]
                         for p in self.points])


def _dominates(a, b) -> bool:
    """a dominates b under minimization of both objectives."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def pareto_front(objectives: np.ndarray) -> list:
    """Incremental non-dominated filter; returns sorted point indices."""
    front: list = []
    for i, p in enumerate(objectives):
        if any(_dominates(objectives[j], p) for j in front):
            continue
        front = [j for j in front if not _dominates(p, objectives[j])]
        front.append(i)
    return sorted(front)


def pareto_front_bruteforce(objectives: np.ndarray) -> list:
    """Quadratic oracle: keep points not dominated by any other."""
    n = len(objectives)
    return [i for i in range(n)
            if not any(_dominates(objectives[j], objectives[i])
                       for j in range(n) if j != i)]


def default_weight_grid() -> np.ndarray:
    return np.round(np.linspace(0.0, 1.0, 11), 10)


def _pareto_worker(args):
    problem, w_s = args
    prob = replace(problem,
                   loss_spec={"kind": "weighted", "w_s": float(w_s)})
    res = co_optimize(prob)
    rows = [{"w_s": float(w_s), "iteration": r["iteration"],
             "loss": r["loss"], "loss_speed": r["loss_speed"],
             "loss_efficiency": r["loss_efficiency"], "params": r["params"]}
            for r in res.history]
    return float(w_s), rows, res.failure


def pareto_sweep(problem: OptimizationProblem,
                 weights: Sequence[float] = None,
                 workers: int = 1) -> ParetoGamut:
    """Co-optimize once per speed weight and pool every visited design.

    Runs are independent (each worker gets its own problem copy); results
    are merged in weight order so the gamut is reproducible regardless of
    worker count.
    """
    if weights is None:
        weights = default_weight_grid()
    weights = [float(w) for w in weights]
    for w in weights:
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"speed weight {w} outside [0, 1]")
    jobs = [(problem, w) for w in weights]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_pareto_worker, jobs))
    else:
        results = [_pareto_worker(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    points = []
    for _, rows, failure in results:
        points.extend(rows)
        if failure is not None:
            warnings.warn(f"sweep run failed: {failure}", RuntimeWarning)
    gamut = ParetoGamut(points=points, front=[])
    gamut.front = pareto_front(gamut.objectives())
    return gamut
