"""Analytic facet hydrodynamics: tabulated drag/thrust with exact VJPs.

Every boundary facet sees the water at the relative velocity
``v_rel = v_water - mean(corner velocities)``.  The attack angle
``Phi = arccos(n . d) - pi/2`` (``d`` the unit relative flow, ``n`` the
outward deformed normal) indexes two piecewise-linear coefficient tables:

* drag ``f_d = 1/2 rho A C_d(Phi) |v_rel| v_rel`` acts along the flow;
* thrust ``f_t = -1/2 rho A C_t(Phi) |v_lat|^2 n`` acts against the normal,
  where ``v_lat`` removes the spine-parallel component of ``v_rel`` so
  that coasting along the spine produces no thrust.

Forces are split equally between the facet corners.  A facet with
``v_rel = 0`` emits zero force and zero gradient (removable singularity).
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import SurfaceQuadSet

HALF_PI = math.pi / 2.0


class CoefficientTable:
    """Piecewise-linear coefficient curve over the attack angle."""

    def __init__(self, phis, values):
        self.phis = np.asarray(phis, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.phis.ndim != 1 or self.phis.shape != self.values.shape:
            raise ValueError("table needs matching 1D knot and value arrays")
        if self.phis.size < 2 or np.any(np.diff(self.phis) <= 0):
            raise ValueError("table knots must be strictly increasing")
        if self.phis[0] > -HALF_PI + 1e-12 or self.phis[-1] < HALF_PI - 1e-12:
            raise ValueError("table must cover [-pi/2, pi/2]")
        if np.any(self.values < 0):
            raise ValueError("coefficients must be nonnegative")
        self._slopes = np.diff(self.values) / np.diff(self.phis)

    def __call__(self, phi):
        return np.interp(phi, self.phis, self.values)

    def slope(self, phi):
        """Derivative of the interpolant (piecewise constant)."""
        idx = np.clip(np.searchsorted(self.phis, phi, side="right") - 1,
                      0, self._slopes.size - 1)
        return self._slopes[idx]


def _default_knots(n_half: int = 32) -> np.ndarray:
    # Dyadic fractions of pi/2 so that 0 is a knot hit exactly by interp.
    return (np.arange(-n_half, n_half + 1) / n_half) * HALF_PI


def default_drag_table() -> CoefficientTable:
    phis = _default_knots()
    return CoefficientTable(phis, 0.2 + 0.8 * np.abs(np.cos(phis)))


def default_thrust_table() -> CoefficientTable:
    # One-sided: only facets advancing into the water (Phi > 0) thrust.
    # A symmetric curve would cancel pairwise on thin bodies.
    phis = _default_knots()
    return CoefficientTable(phis, np.maximum(np.sin(phis), 0.0))


@dataclass
class HydroParams:
    rho_fluid: float
    v_water: np.ndarray
    drag: CoefficientTable
    thrust: CoefficientTable
    head: int
    tail: int

    def __post_init__(self):
        self.v_water = np.asarray(self.v_water, dtype=float)
        if self.rho_fluid <= 0:
            raise ValueError("rho_fluid must be positive")
        if self.head == self.tail:
            raise ValueError("spine head and tail nodes must differ")


def make_hydro_params(rho_fluid, v_water, head, tail,
                      drag=None, thrust=None) -> HydroParams:
    return HydroParams(rho_fluid=rho_fluid, v_water=v_water,
                       drag=drag or default_drag_table(),
                       thrust=thrust or default_thrust_table(),
                       head=int(head), tail=int(tail))


@dataclass
class HydroTape:
    """Forward intermediates needed by :func:`hydro_vjp`."""

    params: HydroParams
    ids: np.ndarray
    n_nodes: int
    live: np.ndarray
    area: np.ndarray
    nhat: np.ndarray
    vrel: np.ndarray
    speed: np.ndarray
    dhat: np.ndarray
    raw_cos: np.ndarray
    phi: np.ndarray
    cd: np.ndarray
    ct: np.ndarray
    slon: np.ndarray
    msq: np.ndarray
    shat: np.ndarray
    spine_len: float
    fdrag: np.ndarray
    fthrust: np.ndarray
    diag1: np.ndarray = None   # 3D only
    diag2: np.ndarray = None


def _facet_geometry(q, ids):
    P = q[ids]
    if ids.shape[1] == 2:
        t = P[:, 1] - P[:, 0]
        nvec = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return nvec, None, None
    d1 = P[:, 2] - P[:, 0]
    d2 = P[:, 3] - P[:, 1]
    return 0.5 * np.cross(d1, d2), d1, d2


def hydro_forces(q, v, surface: SurfaceQuadSet, params: HydroParams):
    """Nodal hydro force, per-step facet means, and the adjoint tape.

    Returns ``(f, mean_drag, mean_thrust, tape)`` where the means average
    the per-facet force vectors over all facets.
    """
    ids = surface.node_ids
    nf, ncf = ids.shape
    nvec, d1, d2 = _facet_geometry(q, ids)
    area = np.linalg.norm(nvec, axis=1)
    nhat = nvec / area[:, None]

    vrel = params.v_water[None, :] - v[ids].mean(axis=1)
    speed = np.linalg.norm(vrel, axis=1)
    live = speed > 0.0
    safe = np.where(live, speed, 1.0)
    dhat = vrel / safe[:, None]

    raw_cos = np.einsum("fd,fd->f", nhat, dhat)
    phi = np.arccos(np.clip(raw_cos, -1.0, 1.0)) - HALF_PI
    cd = params.drag(phi)
    ct = params.thrust(phi)

    u = q[params.head] - q[params.tail]
    spine_len = float(np.linalg.norm(u))
    if spine_len == 0.0:
        raise ValueError("degenerate spine: head and tail nodes coincide")
    shat = u / spine_len

    slon = vrel @ shat
    msq = np.maximum(speed ** 2 - slon ** 2, 0.0)

    k = 0.5 * params.rho_fluid
    fdrag = (k * area * cd * speed)[:, None] * vrel
    fthrust = -(k * area * ct * msq)[:, None] * nhat
    fdrag[~live] = 0.0
    fthrust[~live] = 0.0

    f = np.zeros_like(q)
    np.add.at(f, ids.ravel(),
              np.repeat((fdrag + fthrust) / ncf, ncf, axis=0))
    tape = HydroTape(params=params, ids=ids, n_nodes=q.shape[0], live=live,
                     area=area, nhat=nhat, vrel=vrel, speed=speed, dhat=dhat,
                     raw_cos=raw_cos, phi=phi, cd=cd, ct=ct, slon=slon,
                     msq=msq, shat=shat, spine_len=spine_len,
                     fdrag=fdrag, fthrust=fthrust, diag1=d1, diag2=d2)
    return f, fdrag.mean(axis=0), fthrust.mean(axis=0), tape


def hydro_vjp(tape: HydroTape, f_bar, mean_drag_bar=None, mean_thrust_bar=None):
    """Pull upstream force gradients back to positions and velocities.

    ``f_bar`` is the cotangent of the nodal force array; the optional mean
    cotangents correspond to the per-step facet averages returned by
    :func:`hydro_forces`.  Returns ``(q_bar, v_bar)``.
    """
    p = tape.params
    ids = tape.ids
    nf, ncf = ids.shape
    d = tape.vrel.shape[1]
    k = 0.5 * p.rho_fluid

    g = f_bar[ids].sum(axis=1) / ncf          # (nf, d), shared by drag+thrust
    gd = g.copy()
    gt = g.copy()
    if mean_drag_bar is not None:
        gd += np.asarray(mean_drag_bar)[None, :] / nf
    if mean_thrust_bar is not None:
        gt += np.asarray(mean_thrust_bar)[None, :] / nf
    gd[~tape.live] = 0.0
    gt[~tape.live] = 0.0

    area, nhat, vrel = tape.area, tape.nhat, tape.vrel
    speed = np.where(tape.live, tape.speed, 1.0)
    dhat, shat = tape.dhat, tape.shat

    gd_v = np.einsum("fd,fd->f", gd, vrel)
    gt_n = np.einsum("fd,fd->f", gt, nhat)

    # drag = k*A*Cd*speed * vrel
    area_bar = k * tape.cd * tape.speed * gd_v
    cd_bar = k * area * tape.speed * gd_v
    speed_bar = k * area * tape.cd * gd_v
    vrel_bar = (k * area * tape.cd * tape.speed)[:, None] * gd

    # thrust = -k*A*Ct*msq * nhat
    area_bar += -k * tape.ct * tape.msq * gt_n
    ct_bar = -k * area * tape.msq * gt_n
    msq_bar = -k * area * tape.ct * gt_n
    nhat_bar = -(k * area * tape.ct * tape.msq)[:, None] * gt

    # msq = speed^2 - slon^2
    vlat = vrel - tape.slon[:, None] * shat[None, :]
    vrel_bar += (2.0 * msq_bar)[:, None] * vlat
    shat_bar = -(2.0 * msq_bar * tape.slon)[:, None] * vrel   # summed later

    # coefficient tables -> phi -> cos
    phi_bar = cd_bar * p.drag.slope(tape.phi) + ct_bar * p.thrust.slope(tape.phi)
    sin2 = 1.0 - tape.raw_cos ** 2
    interior = (np.abs(tape.raw_cos) < 1.0) & tape.live
    cos_bar = np.where(interior, -phi_bar / np.sqrt(np.where(interior, sin2, 1.0)), 0.0)
    nhat_bar += cos_bar[:, None] * dhat
    dhat_bar = cos_bar[:, None] * nhat

    # dhat = vrel / speed  (full normalize jacobian)
    proj = dhat_bar - np.einsum("fd,fd->f", dhat, dhat_bar)[:, None] * dhat
    vrel_bar += proj / speed[:, None]
    vrel_bar += speed_bar[:, None] * dhat

    vrel_bar[~tape.live] = 0.0

    # nhat = nvec / |nvec|, area = |nvec|
    nproj = nhat_bar - np.einsum("fd,fd->f", nhat, nhat_bar)[:, None] * nhat
    nvec_bar = nproj / area[:, None] + area_bar[:, None] * nhat

    q_bar = np.zeros((tape.n_nodes, d))
    v_bar = np.zeros((tape.n_nodes, d))

    if ncf == 2:
        t_bar = np.stack([-nvec_bar[:, 1], nvec_bar[:, 0]], axis=1)
        np.add.at(q_bar, ids[:, 1], t_bar)
        np.add.at(q_bar, ids[:, 0], -t_bar)
    else:
        d1_bar = 0.5 * np.cross(tape.diag2, nvec_bar)
        d2_bar = 0.5 * np.cross(nvec_bar, tape.diag1)
        np.add.at(q_bar, ids[:, 2], d1_bar)
        np.add.at(q_bar, ids[:, 0], -d1_bar)
        np.add.at(q_bar, ids[:, 3], d2_bar)
        np.add.at(q_bar, ids[:, 1], -d2_bar)

    # vrel = v_water - mean(corner velocities)
    np.add.at(v_bar, ids.ravel(),
              np.repeat(-vrel_bar / ncf, ncf, axis=0))

    # spine direction from head/tail positions
    s_total = shat_bar.sum(axis=0)
    u_bar = (s_total - shat @ s_total * shat) / tape.spine_len
    q_bar[p.head] += u_bar
    q_bar[p.tail] -= u_bar
    return q_bar, v_bar
