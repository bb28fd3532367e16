"""Implicit soft-body stepping on the design grid, forward and adjoint.

One step solves

    M (q' - q - h v) + h a_m M (q' - q) + h a_k K0 (q' - q)
        = h^2 [ f_el(q'; E, a) + f_hydro(q, v) + f_ext ]

for ``q'`` by Newton iteration (hydro is explicit: evaluated at the step's
start state so the Newton matrix stays symmetric), then ``v' = (q' - q)/h``.
``a_m, a_k`` are the Rayleigh damping coefficients and ``K0`` the
rest-configuration stiffness.

The adjoint walks the tape backward: each step solves one transposed (=
symmetric) Newton system at the converged state and pushes sensitivities
into the previous state, the per-cell modulus, the activation signals, the
controller parameters, and the hydro inputs.
"""

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .actuators import actuator_region
from .control import read_sensors, sensor_nodes
from .elasticity import ElasticModel, Material
from .grid import DensityField, extract_shape, extract_surface, spine_set, \
    stiffness_field
from .hydro import HydroParams, hydro_forces, hydro_vjp, make_hydro_params
from .mesh import Mesh, build_mesh, remap_nodes, remap_surface, submesh

NEWTON_MAX_ITERS = 20
NEWTON_TOL = 1e-8


class SimulationError(RuntimeError):
    pass


@dataclass
class SimState:
    q: np.ndarray
    v: np.ndarray
    t: float


def _mass_diag(mass: np.ndarray, ndim: int, scale: float):
    return sp.diags(np.repeat(mass * scale, ndim), format="csr")


def step_implicit(state: SimState, force_fn, hessian_fn, mass, h,
                  f_ext=None, damping=(0.0, 0.0), K0=None):
    """One implicit Euler step with a generic internal-force model.

    ``force_fn(q)`` returns nodal forces, ``hessian_fn(q)`` the sparse energy
    Hessian (negative force Jacobian).  Returns ``(next_state, info)`` where
    ``info`` carries the Newton iteration count and achieved residual.  A
    failed line search raises; plain non-convergence only warns, returning
    the best iterate (per the step contract).
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    q_i, v_i = state.q, state.v
    mass = np.asarray(mass, dtype=float)
    Md = mass[:, None]
    a_m, a_k = damping
    if a_k and K0 is None:
        raise ValueError("stiffness damping requires the rest stiffness K0")

    def residual(q):
        g = Md * (q - q_i - h * v_i) - h * h * force_fn(q)
        if f_ext is not None:
            g -= h * h * f_ext
        if a_m:
            g += h * a_m * Md * (q - q_i)
        if a_k:
            g += h * a_k * (K0 @ (q - q_i).ravel()).reshape(q.shape)
        return g

    q = q_i + h * v_i
    try:
        g = residual(q)
    except ValueError:
        # explicit predictor inverted an element; fall back to the previous
        # configuration, which is valid by induction
        q = q_i
        try:
            g = residual(q)
        except ValueError as exc:
            raise SimulationError(
                f"invalid state at step start: {exc}") from exc
    scale = max(1.0, float(np.linalg.norm(g)))
    tol = NEWTON_TOL * scale
    iters = 0
    gnorm = float(np.linalg.norm(g))
    while gnorm >= tol and iters < NEWTON_MAX_ITERS:
        A = _mass_diag(mass, q.shape[1], 1.0 + h * a_m) + h * h * hessian_fn(q)
        if a_k:
            A = A + (h * a_k) * K0
        dq = spsolve(A.tocsr(), -g.ravel()).reshape(q.shape)
        s = 1.0
        while True:
            try:
                g_new = residual(q + s * dq)
                gn = float(np.linalg.norm(g_new))
                if gn <= (1.0 - 1e-4 * s) * gnorm or gn < tol:
                    break
            except ValueError:
                pass  # inverted element on the trial: shrink
            s *= 0.5
            if s < 1e-6:
                raise SimulationError(
                    f"line search failed at Newton iteration {iters}, "
                    f"residual {gnorm:.3e}")
        q = q + s * dq
        g, gnorm = g_new, gn
        iters += 1
    if gnorm >= tol:
        warnings.warn(f"Newton stopped at {iters} iterations with residual "
                      f"{gnorm:.3e} (tolerance {tol:.3e})", RuntimeWarning)
    v = (q - q_i) / h
    info = {"iters": iters, "residual": gnorm}
    return SimState(q=q, v=v, t=state.t + h), info


@dataclass
class SimModel:
    """Everything one rollout needs, immutable over the run."""

    mesh: Mesh
    elastic: ElasticModel
    h: float
    controller: object = None
    sensor_ids: tuple = None          # (head, center, tail) node ids
    spine: np.ndarray = None          # midline node ids (hydro_log velocity)
    surface: object = None            # SurfaceQuadSet in mesh node ids
    hydro: Optional[HydroParams] = None
    f_ext: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("time step must be positive")
        if self.hydro is not None and self.surface is None:
            raise ValueError("hydrodynamics requires a surface")
        if self.controller is not None and self.controller.kind == "mlp" \
                and self.sensor_ids is None:
            raise ValueError("closed-loop controller needs sensor nodes")
        if self.spine is None:
            raise ValueError("spine node set is required")
        k = self.elastic.n_signals
        if self.controller is not None and self.controller.n_signals != k:
            raise ValueError(
                f"controller emits {self.controller.n_signals} signals, "
                f"model has {k} actuators")

    @property
    def n_signals(self):
        return self.elastic.n_signals


@dataclass
class Trajectory:
    model: SimModel
    states: List[SimState]
    activations: np.ndarray           # (N, k)
    mean_drag: np.ndarray             # (N, d)
    mean_thrust: np.ndarray           # (N, d)
    spine_vel: np.ndarray             # (N, d)
    ctl_tapes: list = field(repr=False, default=None)
    hydro_tapes: list = field(repr=False, default=None)
    newton: list = None

    @property
    def n_steps(self):
        return len(self.states) - 1

    @property
    def h(self):
        return self.model.h


def rollout(model: SimModel, n_steps: int, q0=None, v0=None,
            activation_schedule=None) -> Trajectory:
    """Run ``n_steps`` implicit steps from rest (or the given state).

    ``activation_schedule`` (optional, shape ``(n_steps, n_signals)``)
    bypasses the controller and feeds fixed per-step activations; this
    treats the activations as independent inputs, which is what the
    finite-difference checks of ``backward``'s activation gradient need.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if activation_schedule is not None:
        activation_schedule = np.asarray(activation_schedule, dtype=float)
        if activation_schedule.shape != (n_steps, model.n_signals):
            raise ValueError("activation_schedule shape must be "
                             "(n_steps, n_signals)")
    q = model.mesh.nodes.copy() if q0 is None else np.array(q0, dtype=float)
    v = np.zeros_like(q) if v0 is None else np.array(v0, dtype=float)
    d = q.shape[1]
    h = model.h
    k = model.n_signals
    a_m, a_k = model.elastic.material.damping
    K0 = model.elastic.rest_stiffness() if a_k else None

    states = [SimState(q=q, v=v, t=0.0)]
    activations = np.zeros((n_steps, k))
    mean_drag = np.zeros((n_steps, d))
    mean_thrust = np.zeros((n_steps, d))
    spine_vel = np.zeros((n_steps, d))
    ctl_tapes, hydro_tapes, newton = [], [], []

    for i in range(n_steps):
        s = states[-1]
        t_i = i * h
        reading = None
        if model.sensor_ids is not None:
            reading = read_sensors(s.q, s.v, model.sensor_ids)
        if activation_schedule is not None:
            acts, ctape = activation_schedule[i], None
        elif model.controller is not None:
            acts, ctape = model.controller.activations(t_i, reading)
        else:
            acts, ctape = np.zeros(k), None
        f_hydro = None
        htape = None
        if model.hydro is not None:
            f_hydro, md, mt, htape = hydro_forces(s.q, s.v, model.surface,
                                                  model.hydro)
            mean_drag[i] = md
            mean_thrust[i] = mt
        f_const = f_hydro
        if model.f_ext is not None:
            f_const = model.f_ext if f_const is None else f_const + model.f_ext
        spine_vel[i] = s.v[model.spine].mean(axis=0)

        nxt, info = step_implicit(
            s, lambda qq: model.elastic.force(qq, acts),
            lambda qq: model.elastic.hessian(qq, acts),
            model.mesh.mass, h, f_ext=f_const,
            damping=(a_m, a_k), K0=K0)
        nxt.t = (i + 1) * h   # keep times exact multiples of h
        states.append(nxt)
        activations[i] = acts
        ctl_tapes.append(ctape)
        hydro_tapes.append(htape)
        newton.append(info)

    return Trajectory(model=model, states=states, activations=activations,
                      mean_drag=mean_drag, mean_thrust=mean_thrust,
                      spine_vel=spine_vel, ctl_tapes=ctl_tapes,
                      hydro_tapes=hydro_tapes, newton=newton)


@dataclass
class TrajectoryCotangent:
    """Upstream gradients of a loss with respect to trajectory records."""

    q: np.ndarray                       # (N+1, n, d)
    v: np.ndarray                       # (N+1, n, d)
    activations: Optional[np.ndarray] = None    # (N, k)
    mean_drag: Optional[np.ndarray] = None      # (N, d)
    mean_thrust: Optional[np.ndarray] = None    # (N, d)
    spine_vel: Optional[np.ndarray] = None      # (N, d)


def zero_cotangent(traj: Trajectory) -> TrajectoryCotangent:
    n1 = len(traj.states)
    n, d = traj.states[0].q.shape
    return TrajectoryCotangent(q=np.zeros((n1, n, d)), v=np.zeros((n1, n, d)))


def add_cotangents(a: TrajectoryCotangent, b: TrajectoryCotangent,
                   wa: float = 1.0, wb: float = 1.0) -> TrajectoryCotangent:
    def comb(x, y):
        if x is None and y is None:
            return None
        if x is None:
            return wb * y
        if y is None:
            return wa * x
        return wa * x + wb * y

    return TrajectoryCotangent(
        q=comb(a.q, b.q), v=comb(a.v, b.v),
        activations=comb(a.activations, b.activations),
        mean_drag=comb(a.mean_drag, b.mean_drag),
        mean_thrust=comb(a.mean_thrust, b.mean_thrust),
        spine_vel=comb(a.spine_vel, b.spine_vel))


def backward(traj: Trajectory, cot: TrajectoryCotangent) -> dict:
    """Reverse-time adjoint of :func:`rollout`.

    Returns ``{"E", "activations", "controller", "q0", "v0"}`` — gradients
    with respect to the per-cell modulus, the raw activation signals, the
    flat controller parameters, and the initial state.
    """
    model = traj.model
    N = traj.n_steps
    n, d = traj.states[0].q.shape
    if cot.q.shape != (N + 1, n, d) or cot.v.shape != (N + 1, n, d):
        raise ValueError("cotangent shape does not match the trajectory")
    for name in ("activations", "mean_drag", "mean_thrust", "spine_vel"):
        arr = getattr(cot, name)
        if arr is not None and arr.shape[0] != N:
            raise ValueError(f"cotangent field {name} does not match the trajectory")
    if len(traj.ctl_tapes) != N or len(traj.hydro_tapes) != N:
        raise ValueError("trajectory tape is incomplete")

    h = model.h
    mass = model.mesh.mass
    a_m, a_k = model.elastic.material.damping
    K0 = model.elastic.rest_stiffness() if a_k else None

    lam_q = np.array(cot.q, dtype=float)
    lam_v = np.array(cot.v, dtype=float)
    dE = np.zeros(model.mesh.n_cells)
    dact = np.zeros((N, model.n_signals))
    dtheta = None
    if model.controller is not None:
        dtheta = np.zeros_like(model.controller.flatten())

    for i in range(N - 1, -1, -1):
        q_next = traj.states[i + 1].q
        q_i = traj.states[i].q
        acts = traj.activations[i]

        mu = lam_q[i + 1] + lam_v[i + 1] / h
        A = _mass_diag(mass, d, 1.0 + h * a_m) \
            + h * h * model.elastic.hessian(q_next, acts)
        if a_k:
            A = A + (h * a_k) * K0
        y = spsolve(A.tocsr(), mu.ravel()).reshape(n, d)

        lam_q[i] += (1.0 + h * a_m) * mass[:, None] * y - lam_v[i + 1] / h
        if a_k:
            lam_q[i] += h * a_k * (K0 @ y.ravel()).reshape(n, d)
        lam_v[i] += h * mass[:, None] * y

        dots_e, da = model.elastic.adjoint_dots(q_next, y)
        dE += h * h * dots_e
        if a_k:
            dE -= h * a_k * model.elastic.rest_stiffness_dots(q_next - q_i, y)

        a_bar = h * h * da
        if cot.activations is not None:
            a_bar = a_bar + cot.activations[i]
        dact[i] = a_bar

        if model.controller is not None and traj.ctl_tapes[i] is not None:
            g_theta, g_read = model.controller.vjp(traj.ctl_tapes[i], a_bar)
            dtheta += g_theta
            if g_read is not None:
                head, center, tail = model.sensor_ids
                lam_v[i][head] += g_read.velocities[0]
                lam_v[i][center] += g_read.velocities[1]
                lam_v[i][tail] += g_read.velocities[2]
                lam_q[i][head] += g_read.offsets[0]
                lam_q[i][tail] += g_read.offsets[1]
                lam_q[i][center] -= g_read.offsets[0] + g_read.offsets[1]

        if model.hydro is not None:
            md_bar = None if cot.mean_drag is None else cot.mean_drag[i]
            mt_bar = None if cot.mean_thrust is None else cot.mean_thrust[i]
            qb, vb = hydro_vjp(traj.hydro_tapes[i], h * h * y, md_bar, mt_bar)
            lam_q[i] += qb
            lam_v[i] += vb

        if cot.spine_vel is not None:
            lam_v[i][model.spine] += cot.spine_vel[i][None, :] / model.spine.size

    return {"E": dE, "activations": dact, "controller": dtheta,
            "q0": lam_q[0], "v0": lam_v[0]}


@dataclass
class SimSetup:
    """Design-independent simulation constants (usually from the config)."""

    h: float = 3.3e-3
    n_steps: int = 200
    e0: float = 1e5
    e_min: Optional[float] = None
    nu: float = 0.45
    rho_solid: float = 1000.0
    rho_fluid: float = 1000.0
    sigma_max: float = 0.0
    damping: tuple = (0.0, 0.0)
    v_water: tuple = None
    drag_table: object = None
    thrust_table: object = None
    use_hydro: bool = True


def build_swimmer(density: DensityField, gaussians, controller,
                  setup: SimSetup, full_domain: bool = True) -> SimModel:
    """Assemble a simulation model from a design.

    The density sets the per-cell modulus everywhere; the half-peak shape
    fixes the surface, spine, sensors, and actuator-region cells.  With
    ``full_domain=False`` the mesh is restricted to the shape's cells (used
    to measure the fidelity cost of simulating soft exterior cells).
    """
    grid = density.grid
    E = stiffness_field(density, setup.e0, setup.e_min).ravel()
    mask = extract_shape(density)
    mesh = build_mesh(grid, setup.rho_solid)
    spine = spine_set(mask)
    surface = extract_surface(mask)
    regions = [actuator_region(g, mask) for g in gaussians]
    if not full_domain:
        keep = mask.inside.ravel()
        mesh, node_map = submesh(mesh, keep)
        surface = remap_surface(surface, node_map)
        spine = remap_nodes(node_map, spine)
        cell_map = np.cumsum(keep) - 1
        E = E[keep]
        for reg in regions:
            reg.cells = cell_map[reg.cells]
    sensors = tuple(int(i) for i in sensor_nodes(mesh.nodes, spine))
    material = Material(E=E, nu=setup.nu, rho_solid=setup.rho_solid,
                        damping=tuple(setup.damping))
    elastic = ElasticModel(mesh, material, regions, sigma_max=setup.sigma_max)
    hydro = None
    if setup.use_hydro:
        v_water = setup.v_water
        if v_water is None:
            v_water = np.zeros(grid.ndim)
        hydro = make_hydro_params(setup.rho_fluid, v_water,
                                  sensors[0], sensors[2],
                                  drag=setup.drag_table,
                                  thrust=setup.thrust_table)
    return SimModel(mesh=mesh, elastic=elastic, h=setup.h,
                    controller=controller, sensor_ids=sensors, spine=spine,
                    surface=surface, hydro=hydro)
