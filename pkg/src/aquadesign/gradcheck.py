"""Finite-difference audits of every hand-written adjoint.

Each suite compares an analytic derivative against central differences and
reports the worst relative error.  The suites run on deliberately tiny
problems (the size cap is enforced) so the whole audit takes seconds; they
are wired to the ``gradcheck`` subcommand and reused by the test suite.

Set ``AQUA_GRADCHECK_CORRUPT=<check name>`` to report that check's error as
grossly wrong -- a negative control proving the audit can actually fail.
"""

import copy
import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .control import SensorReading, init_mlp, make_controller
from .grid import stiffness_field, stiffness_field_vjp
from .losses import evaluate_loss
from .optimize import OptimizationProblem, evaluate_design, softmax_simplex
from .simulate import backward, rollout
from .transport import BarycenterProblem, barycenter, barycenter_vjp

CAP_CELLS = 16     # per axis
CAP_STEPS = 10

LOSS_TOL = 1e-6
POLICY_TOL = 1e-4
BARYCENTER_TOL = 1e-4
SIM_E_TOL = 1e-2
SIM_ACT_TOL = 1e-3
SIM_THETA_TOL = 1e-2
SIM_ALPHA_TOL = 1e-2


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


class SizeCapError(Exception):
    """The config is too large for a finite-difference audit."""


def _corrupt(name: str, value: float) -> float:
    if os.environ.get("AQUA_GRADCHECK_CORRUPT", "") == name:
        return value + 1.0
    return value


def _rel_err(fd: float, analytic: float) -> float:
    return abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-30)


def enforce_size_cap(config) -> None:
    if any(n > CAP_CELLS for n in config.grid.dims):
        raise SizeCapError(
            f"gradcheck caps the grid at {CAP_CELLS} cells per axis, "
            f"got {config.grid.dims}")
    if config.sim.n_steps > CAP_STEPS:
        raise SizeCapError(
            f"gradcheck caps the rollout at {CAP_STEPS} steps, "
            f"got {config.sim.n_steps}")


# ---------------------------------------------------------------------------
# Loss cotangents vs. direct perturbation of the trajectory arrays.

def _clone_states(traj, i, dq):
    states = list(traj.states)
    s = states[i]
    states[i] = dataclasses.replace(s, q=s.q + dq)
    return dataclasses.replace(traj, states=states)


def _check_losses(ev, spine, rng) -> list:
    traj = ev.traj
    results = []
    specs = [{"kind": "distance"}, {"kind": "position_keeping"},
             {"kind": "efficiency"}, {"kind": "weighted", "w_s": 0.3}]
    scale = float(np.abs(traj.states[-1].q - traj.states[0].q).max())
    step = max(scale, 1e-3) * 1e-7
    for spec in specs:
        name = f"losses.{spec['kind']}.q"
        _, cot = evaluate_loss(traj, spec, spine)
        worst = 0.0
        for _ in range(4):
            i = int(rng.integers(0, len(traj.states)))
            node = int(rng.integers(0, traj.states[0].q.shape[0]))
            dim = int(rng.integers(0, traj.states[0].q.shape[1]))
            dq = np.zeros_like(traj.states[0].q)
            dq[node, dim] = step
            lp = evaluate_loss(_clone_states(traj, i, dq), spec, spine)[0]
            lm = evaluate_loss(_clone_states(traj, i, -dq), spec, spine)[0]
            fd = (lp - lm) / (2 * step)
            an = float(cot.q[i][node, dim])
            if fd == 0.0 and an == 0.0:
                continue
            worst = max(worst, _rel_err(fd, an))
        results.append(CheckResult(name, _corrupt(name, worst), LOSS_TOL))

    # efficiency also differentiates the per-step force/velocity summaries;
    # probe at a resampled generic point so the |P_t|, |P_d| kinks sit O(1)
    # away from the evaluation point instead of under the difference stencil
    def _generic(shape):
        return rng.uniform(0.5, 1.5, shape) * rng.choice((-1.0, 1.0), shape)

    shape = traj.mean_thrust.shape
    probe = dataclasses.replace(traj, mean_thrust=_generic(shape),
                                mean_drag=_generic(shape),
                                spine_vel=_generic(shape))
    _, cot = evaluate_loss(probe, {"kind": "efficiency"}, spine)
    for field_name in ("mean_thrust", "mean_drag", "spine_vel"):
        name = f"losses.efficiency.{field_name}"
        base = getattr(probe, field_name)
        cbar = getattr(cot, field_name)
        worst = 0.0
        for _ in range(4):
            i = int(rng.integers(0, base.shape[0]))
            dim = int(rng.integers(0, base.shape[1]))
            h = max(abs(base[i, dim]), 1e-4) * 1e-6
            vals = []
            for sgn in (1.0, -1.0):
                arr = base.copy()
                arr[i, dim] += sgn * h
                t2 = dataclasses.replace(probe, **{field_name: arr})
                vals.append(evaluate_loss(t2, {"kind": "efficiency"}, spine)[0])
            fd = (vals[0] - vals[1]) / (2 * h)
            an = float(cbar[i, dim])
            if fd == 0.0 and an == 0.0:
                continue
            worst = max(worst, _rel_err(fd, an))
        results.append(CheckResult(name, _corrupt(name, worst), LOSS_TOL))
    return results


# ---------------------------------------------------------------------------
# Controllers in isolation.

def _check_policies(config, rng) -> list:
    ndim = config.grid.ndim
    n_signals = len({g.category for acts in config.base_actuators
                     for g in acts})
    results = []

    mlp = init_mlp(ndim, n_signals, period=25 * config.sim.h, seed=3)
    reading = SensorReading(positions=np.zeros((3, ndim)),
                            velocities=0.1 * rng.standard_normal((3, ndim)),
                            offsets=0.2 * rng.standard_normal((2, ndim)))
    t = 0.37 * 25 * config.sim.h
    upstream = rng.standard_normal(n_signals)

    def mlp_loss(ctl, rd):
        acts, _ = ctl.activations(t, rd)
        return float(upstream @ acts)

    _, tape = mlp.activations(t, reading)
    g_theta, g_read = mlp.vjp(tape, upstream)
    flat = mlp.flatten()
    probes = rng.choice(flat.size, size=6, replace=False)
    worst = 0.0
    for j in probes:
        h = 1e-5
        vals = []
        for sgn in (1.0, -1.0):
            c2 = copy.deepcopy(mlp)
            f2 = flat.copy()
            f2[j] += sgn * h
            c2.set_flat(f2)
            vals.append(mlp_loss(c2, reading))
        fd = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, _rel_err(fd, float(g_theta[j])))
    results.append(CheckResult("policy.mlp.theta",
                               _corrupt("policy.mlp.theta", worst), POLICY_TOL))

    worst = 0.0
    for arr_name in ("velocities", "offsets"):
        base = getattr(reading, arr_name)
        gbar = getattr(g_read, arr_name)
        for j in range(base.size):
            h = 1e-6
            vals = []
            for sgn in (1.0, -1.0):
                r2 = dataclasses.replace(reading)
                arr = base.copy()
                arr.flat[j] += sgn * h
                setattr(r2, arr_name, arr)
                vals.append(mlp_loss(mlp, r2))
            fd = (vals[0] - vals[1]) / (2 * h)
            an = float(gbar.flat[j])
            if fd == 0.0 and an == 0.0:
                continue
            worst = max(worst, _rel_err(fd, an))
    results.append(CheckResult("policy.mlp.reading",
                               _corrupt("policy.mlp.reading", worst),
                               POLICY_TOL))

    params = np.column_stack([rng.uniform(0.3, 0.8, n_signals),
                              rng.uniform(3.0, 8.0, n_signals),
                              rng.uniform(-1.0, 1.0, n_signals)])
    open_loop = make_controller({"type": "open_loop",
                                 "params": params.tolist()},
                                ndim, n_signals, config.sim.h)
    _, tape = open_loop.activations(t, None)
    g_theta, _ = open_loop.vjp(tape, upstream)
    flat = open_loop.flatten()
    worst = 0.0
    for j in range(flat.size):
        h = 1e-6
        vals = []
        for sgn in (1.0, -1.0):
            c2 = copy.deepcopy(open_loop)
            f2 = flat.copy()
            f2[j] += sgn * h
            c2.set_flat(f2)
            acts, _ = c2.activations(t, None)
            vals.append(float(upstream @ acts))
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(g_theta[j])
        if fd == 0.0 and an == 0.0:
            continue
        worst = max(worst, _rel_err(fd, an))
    results.append(CheckResult("policy.open_loop.params",
                               _corrupt("policy.open_loop.params", worst),
                               POLICY_TOL))
    return results


# ---------------------------------------------------------------------------
# Barycenter weight gradient along simplex tangents.

def _check_barycenter(config, rng) -> list:
    bases = config.bases
    m = len(bases)
    bprob = BarycenterProblem(bases=bases,
                              epsilon=config.optimizer.get("epsilon"))
    logits = 0.3 * rng.standard_normal(m)
    alpha = softmax_simplex(logits)
    cost = rng.standard_normal(config.grid.dims)

    def objective(w):
        density, _ = barycenter(bprob, w)
        return float((cost * density.values).sum())

    density, tape = barycenter(bprob, alpha)
    alpha_bar = barycenter_vjp(tape, cost)
    worst = 0.0
    pairs = [(i, (i + 1) % m) for i in range(min(m, 3))]
    for i, j in pairs:
        t = np.zeros(m)
        t[i], t[j] = 1.0, -1.0
        h = 1e-5
        fd = (objective(alpha + h * t) - objective(alpha - h * t)) / (2 * h)
        an = float(alpha_bar @ t)
        worst = max(worst, _rel_err(fd, an))
    return [CheckResult("barycenter.dalpha",
                        _corrupt("barycenter.dalpha", worst),
                        BARYCENTER_TOL)]


# ---------------------------------------------------------------------------
# The simulator adjoint, end to end.

def _loss_with_elastic(problem, ev, elastic):
    model = dataclasses.replace(ev.model, elastic=elastic)
    traj = rollout(model, problem.setup.n_steps)
    return evaluate_loss(traj, problem.loss_spec, model.spine)[0]


def _check_sim(problem, params, ev, rng) -> list:
    results = []
    grads = backward(ev.traj, ev.cotangent)
    model = ev.model
    E0 = model.elastic.material.E

    worst = 0.0
    cells = rng.choice(np.flatnonzero(E0 > 2.0 * E0.min()),
                       size=3, replace=False)
    for c in cells:
        h = 1e-3 * E0[c]
        vals = []
        for sgn in (1.0, -1.0):
            E2 = E0.copy()
            E2[c] += sgn * h
            vals.append(_loss_with_elastic(problem, ev,
                                           model.elastic.with_modulus(E2)))
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(grads["E"][c])
        worst = max(worst, _rel_err(fd, an))
    results.append(CheckResult("sim.dE", _corrupt("sim.dE", worst), SIM_E_TOL))

    # Activations as free inputs: replay the recorded schedule, nudge one.
    sched = ev.traj.activations.copy()
    t_fix = rollout(model, problem.setup.n_steps, activation_schedule=sched)
    _, cot = evaluate_loss(t_fix, problem.loss_spec, model.spine)
    da = backward(t_fix, cot)["activations"]
    worst = 0.0
    for _ in range(3):
        i = int(rng.integers(0, sched.shape[0]))
        k = int(rng.integers(0, sched.shape[1]))
        h = 1e-4
        vals = []
        for sgn in (1.0, -1.0):
            s2 = sched.copy()
            s2[i, k] += sgn * h
            t2 = rollout(model, problem.setup.n_steps, activation_schedule=s2)
            vals.append(evaluate_loss(t2, problem.loss_spec, model.spine)[0])
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(da[i, k])
        if fd == 0.0 and an == 0.0:
            continue
        worst = max(worst, _rel_err(fd, an))
    results.append(CheckResult("sim.dact", _corrupt("sim.dact", worst),
                               SIM_ACT_TOL))

    flat = params.controller.flatten()
    dtheta = grads["controller"]
    worst = 0.0
    probes = rng.choice(flat.size, size=min(4, flat.size), replace=False)
    for j in probes:
        h = 1e-5
        vals = []
        for sgn in (1.0, -1.0):
            c2 = copy.deepcopy(params.controller)
            f2 = flat.copy()
            f2[j] += sgn * h
            c2.set_flat(f2)
            m2 = dataclasses.replace(model, controller=c2)
            t2 = rollout(m2, problem.setup.n_steps)
            vals.append(evaluate_loss(t2, problem.loss_spec, m2.spine)[0])
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(dtheta[j])
        if fd == 0.0 and an == 0.0:
            continue
        worst = max(worst, _rel_err(fd, an))
    results.append(CheckResult("sim.dtheta", _corrupt("sim.dtheta", worst),
                               SIM_THETA_TOL))

    # Geometry weights through the modulus chain.  The shape mask, actuator
    # cells, and fiber directions are piecewise-constant in alpha, so the
    # geometry gradient is defined through the barycenter -> stiffness path;
    # the comparator holds the discrete artifacts fixed accordingly.
    bprob = BarycenterProblem(bases=problem.bases, epsilon=problem.epsilon)
    e_bar = grads["E"].reshape(problem.grid.dims)
    rho_bar = stiffness_field_vjp(ev.density, problem.setup.e0, e_bar,
                                  problem.setup.e_min)
    alpha_bar = barycenter_vjp(ev.bary_tape, rho_bar)
    alpha = params.alpha
    m = alpha.size

    def loss_at(w):
        density, _ = barycenter(bprob, w)
        E = stiffness_field(density, problem.setup.e0,
                            problem.setup.e_min).ravel()
        return _loss_with_elastic(problem, ev, model.elastic.with_modulus(E))

    worst = 0.0
    for i, j in [(i, (i + 1) % m) for i in range(min(m, 2))]:
        t = np.zeros(m)
        t[i], t[j] = 1.0, -1.0
        h = 1e-4
        fd = (loss_at(alpha + h * t) - loss_at(alpha - h * t)) / (2 * h)
        an = float(alpha_bar @ t)
        worst = max(worst, _rel_err(fd, an))
    results.append(CheckResult("sim.dalpha", _corrupt("sim.dalpha", worst),
                               SIM_ALPHA_TOL))
    return results


def run_gradcheck(config) -> list:
    """All audits on the config's (small) problem; returns CheckResults."""
    enforce_size_cap(config)
    from .config import build_problem  # local import avoids a cycle
    problem = build_problem(config)
    rng = np.random.default_rng(config.seed + 1234)
    params = problem.initial_params()
    ev = evaluate_design(problem, params)
    spine = ev.model.spine
    results = []
    results += _check_losses(ev, spine, rng)
    results += _check_policies(config, rng)
    results += _check_barycenter(config, rng)
    results += _check_sim(problem, params, ev, rng)
    return results
