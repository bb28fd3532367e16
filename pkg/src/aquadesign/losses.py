"""Trajectory objectives and their cotangents.

Every loss returns ``(value, TrajectoryCotangent)`` so the simulator adjoint
can be driven directly.  Conventions: losses are minimized; the swimming
direction is +x; the "spine" is the midline node set of the rest shape.
"""

import numpy as np

from .grid import spine_set  # noqa: F401  (midline extraction lives with the grid)
from .simulate import Trajectory, TrajectoryCotangent, add_cotangents, zero_cotangent

DEFAULT_GAMMA = 0.01
HUBER_SCALE = 1e-6   # times body length


def body_length(traj: Trajectory, spine) -> float:
    """Rest head-to-tail extent along x over the spine nodes."""
    x = traj.model.mesh.nodes[spine, 0]
    return float(x.max() - x.min())


def loss_distance(traj: Trajectory, spine):
    """Negative mean forward displacement of the spine nodes."""
    spine = np.asarray(spine)
    if spine.size == 0:
        raise ValueError("empty spine set")
    q0 = traj.states[0].q
    qN = traj.states[-1].q
    value = -float(np.mean(qN[spine, 0] - q0[spine, 0]))
    cot = zero_cotangent(traj)
    cot.q[-1][spine, 0] -= 1.0 / spine.size
    cot.q[0][spine, 0] += 1.0 / spine.size
    return value, cot


def _huber(x, delta):
    ax = np.abs(x)
    val = np.where(ax <= delta, 0.5 * x * x / delta, ax - 0.5 * delta)
    grad = np.clip(x / delta, -1.0, 1.0)
    return val.sum(), grad


def loss_position_keeping(traj: Trajectory, spine, gamma: float = DEFAULT_GAMMA,
                          q_target=None, d_target=None, h0=None, h1=None):
    """Station keeping: L1 pull of the central spine node to a target point,
    minus a heading reward along ``d_target``.

    The L1 norm is Huber-smoothed at ``1e-6`` body lengths so the gradient is
    defined at the target.  Sums run over steps 1..N.  ``h0``/``h1`` default
    to the head and tail spine nodes.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    spine = np.asarray(spine)
    mesh = traj.model.mesh
    d = mesh.ndim
    x = mesh.nodes[spine, 0]
    center = int(spine[np.argmin(np.abs(x))])
    if h0 is None:
        h0 = int(spine[np.argmax(x)])
    if h1 is None:
        h1 = int(spine[np.argmin(x)])
    if h0 == h1:
        raise ValueError("heading nodes h0 and h1 must differ")
    if q_target is None:
        q_target = np.zeros(d)
    q_target = np.asarray(q_target, dtype=float)
    if d_target is None:
        d_target = np.zeros(d)
        d_target[0] = 1.0
    d_target = np.asarray(d_target, dtype=float)

    delta = HUBER_SCALE * body_length(traj, spine)
    value = 0.0
    cot = zero_cotangent(traj)
    for i in range(1, len(traj.states)):
        qi = traj.states[i].q
        err = qi[center] - q_target
        vi, gi = _huber(err, delta)
        value += vi
        cot.q[i][center] += gi
        value -= gamma * float((qi[h0] - qi[h1]) @ d_target)
        cot.q[i][h0] -= gamma * d_target
        cot.q[i][h1] += gamma * d_target
    return value, cot


def loss_efficiency(traj: Trajectory):
    """Negative per-step thrust utility ``|P_t| / (1 + |P_t| + |P_d|)``.

    ``P_t``/``P_d`` dot the facet-averaged thrust/drag force with the mean
    spine velocity at the same step; the +1 keeps everything finite at rest.
    """
    if traj.model.hydro is None:
        raise ValueError("efficiency loss needs hydrodynamics enabled")
    N = traj.n_steps
    d = traj.spine_vel.shape[1]
    cot = zero_cotangent(traj)
    cot.mean_thrust = np.zeros((N, d))
    cot.mean_drag = np.zeros((N, d))
    cot.spine_vel = np.zeros((N, d))
    value = 0.0
    for i in range(N):
        ft, fd, sv = traj.mean_thrust[i], traj.mean_drag[i], traj.spine_vel[i]
        pt = float(ft @ sv)
        pd = float(fd @ sv)
        den = 1.0 + abs(pt) + abs(pd)
        value -= abs(pt) / den
        st, sd = np.sign(pt), np.sign(pd)
        d_pt = -(st * den - abs(pt) * st) / den ** 2
        d_pd = abs(pt) * sd / den ** 2
        cot.mean_thrust[i] = d_pt * sv
        cot.mean_drag[i] = d_pd * sv
        cot.spine_vel[i] = d_pt * ft + d_pd * fd
    return value, cot


def loss_weighted(traj: Trajectory, spine, w_s: float):
    """``w_s * distance + (1 - w_s) * efficiency``."""
    if not 0.0 <= w_s <= 1.0:
        raise ValueError("w_s must lie in [0, 1]")
    v_d, c_d = loss_distance(traj, spine)
    v_e, c_e = loss_efficiency(traj)
    value = w_s * v_d + (1.0 - w_s) * v_e
    return value, add_cotangents(c_d, c_e, w_s, 1.0 - w_s)


def evaluate_loss(traj: Trajectory, spec: dict, spine):
    """Dispatch on a loss-spec dict (see the config schema)."""
    kind = spec.get("kind", "distance")
    if kind == "distance":
        return loss_distance(traj, spine)
    if kind == "position_keeping":
        return loss_position_keeping(
            traj, spine, gamma=spec.get("gamma", DEFAULT_GAMMA),
            q_target=spec.get("q_target"), d_target=spec.get("d_target"))
    if kind == "efficiency":
        return loss_efficiency(traj)
    if kind == "weighted":
        return loss_weighted(traj, spine, float(spec.get("w_s", 0.5)))
    raise ValueError(f"unknown loss kind {kind!r}")
