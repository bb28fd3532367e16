"""Corotational elastic model with cell-wise stiffness and muscle stress.

Per cell the passive energy density is ``mu |F - R|^2 + lam/2 (tr S - d)^2``
with ``F = R S`` the polar decomposition; both Lame factors scale linearly
with the cell's Young's modulus, which is what makes the modulus adjoint a
cheap per-cell dot product.  Muscle cells add the active energy
``act/2 |F f|^2`` where ``act = a * sigma_max * sign`` combines the control
signal, the stress scale, and the antagonistic-group sign.

Active and passive contributions are evaluated by the same kernels: the
active pass runs with zero Lame factors on just the actuator cells, so
overlapping actuator regions simply sum their stresses.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import kernels
from .actuators import ActuatorRegion
from .mesh import Mesh

DEFAULT_NU = 0.45
GAUSS_1D = (0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0)))


def lame_parameters(E, nu: float):
    """Lame factors from Young's modulus (plane strain in 2D)."""
    if not 0.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must be in (0, 0.5), got {nu}")
    E = np.asarray(E, dtype=float)
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


@dataclass
class Material:
    """Cell-wise modulus plus global constitutive constants."""

    E: np.ndarray
    nu: float = DEFAULT_NU
    rho_solid: float = 1000.0
    damping: Tuple[float, float] = (0.0, 0.0)   # Rayleigh (mass, stiffness)

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        if not np.all(self.E > 0):
            raise ValueError("Young's modulus must be positive everywhere")
        if not 0.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must be in (0, 0.5)")
        if self.rho_solid <= 0:
            raise ValueError("rho_solid must be positive")


def _corner_bits(ndim: int) -> np.ndarray:
    bits = np.array([[(i >> (ndim - 1 - ax)) & 1 for ax in range(ndim)]
                     for i in range(2 ** ndim)], dtype=float)
    return bits


def quadrature(ndim: int, cell_size: float):
    """Shape-function gradients and weight for tensor-product Gauss points.

    Returns ``grads`` of shape (nq, 2**d, d) with dN_a/dx_e at each point,
    and the common quadrature weight ``wq = (cell_size/2)**d``.
    """
    bits = _corner_bits(ndim)
    points = np.stack(np.meshgrid(*([np.array(GAUSS_1D)] * ndim),
                                  indexing="ij"), axis=-1).reshape(-1, ndim)
    nq, ne = points.shape[0], bits.shape[0]
    grads = np.empty((nq, ne, ndim))
    for q in range(nq):
        u = points[q]
        for a in range(ne):
            b = bits[a]
            for e in range(ndim):
                g = 1.0
                for ax in range(ndim):
                    if ax == e:
                        g *= 1.0 if b[ax] else -1.0
                    else:
                        g *= u[ax] if b[ax] else 1.0 - u[ax]
                grads[q, a, e] = g / cell_size
    wq = (cell_size / 2.0) ** ndim
    return grads, wq


def strain_matrices(grads: np.ndarray) -> np.ndarray:
    """Per-point maps from stacked nodal positions to vec(F), (nq, d*d, ne*d)."""
    nq, ne, d = grads.shape
    B = np.zeros((nq, d * d, ne * d))
    for q in range(nq):
        for a in range(ne):
            for dd in range(d):
                for e in range(d):
                    B[q, d * dd + e, d * a + dd] = grads[q, a, e]
    return B


def _dispatch(ndim: int):
    if ndim == 2:
        return (kernels.elastic2d_force, kernels.elastic2d_energy,
                kernels.elastic2d_hessian_blocks, kernels.elastic2d_dots)
    return (kernels.elastic3d_force, kernels.elastic3d_energy,
            kernels.elastic3d_hessian_blocks, kernels.elastic3d_dots)


@dataclass
class _RegionData:
    region: ActuatorRegion
    cells: np.ndarray        # flat cell ids
    fibers: np.ndarray       # (m, d)
    signs: np.ndarray        # (m,)
    dofs: np.ndarray = field(default=None, repr=False)


class ElasticModel:
    """Assembled forces/Hessians for one mesh, material, and actuator layout."""

    def __init__(self, mesh: Mesh, material: Material,
                 regions: Sequence[ActuatorRegion] = (),
                 sigma_max: float = 0.0):
        if material.E.shape != (mesh.n_cells,):
            raise ValueError(
                f"modulus field has {material.E.shape}, mesh has {mesh.n_cells} cells")
        self.mesh = mesh
        self.material = material
        self.sigma_max = float(sigma_max)
        d = mesh.ndim
        self.ndim = d
        self.grads, self.wq = quadrature(d, mesh.grid.cell_size)
        self.bmats = strain_matrices(self.grads)
        self.mu_hat, self.lam_hat = lame_parameters(1.0, material.nu)
        self.mu = material.E * self.mu_hat
        self.lam = material.E * self.lam_hat
        self._force, self._energy, self._hess, self._dots = _dispatch(d)
        self.dofs = (mesh.cells[:, :, None] * d
                     + np.arange(d)).reshape(mesh.n_cells, -1)
        ne_d = self.dofs.shape[1]
        self.rows = np.repeat(self.dofs, ne_d, axis=1).ravel()
        self.cols = np.tile(self.dofs, (1, ne_d)).ravel()
        self.regions = []
        for reg in regions:
            m = reg.cells.size
            signs = np.asarray(reg.signs, dtype=float)
            fibers = np.tile(np.asarray(reg.fiber, dtype=float), (m, 1))
            dofs = self.dofs[reg.cells]
            self.regions.append(_RegionData(region=reg, cells=reg.cells,
                                            fibers=fibers, signs=signs, dofs=dofs))
        self._zero_fibers = np.zeros((mesh.n_cells, d))
        self._rest_blocks_unit = None
        self._rest_stiffness = None

    # -- plumbing -----------------------------------------------------------

    @property
    def n_signals(self) -> int:
        return len(self.regions)

    def with_modulus(self, E) -> "ElasticModel":
        """Same mesh/actuators, different per-cell modulus field."""
        material = dataclasses.replace(self.material, E=np.asarray(E, dtype=float))
        return ElasticModel(self.mesh, material,
                            [r.region for r in self.regions],
                            sigma_max=self.sigma_max)

    def _acts(self, activations):
        if activations is None:
            return np.zeros(len(self.regions))
        a = np.asarray(activations, dtype=float)
        if a.shape != (len(self.regions),):
            raise ValueError(
                f"expected {len(self.regions)} activation signals, got {a.shape}")
        return a

    def _assemble(self, blocks, dofs):
        ne_d = dofs.shape[1]
        rows = np.repeat(dofs, ne_d, axis=1).ravel()
        cols = np.tile(dofs, (1, ne_d)).ravel()
        n = self.mesh.n_nodes * self.ndim
        return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    # -- forward ------------------------------------------------------------

    def force(self, q, activations=None):
        """Internal elastic + muscle force, (n, d)."""
        acts = self._acts(activations)
        f = self._force(q, self.mesh.cells, self.grads, self.wq,
                        self.mu, self.lam, None, None)
        for a, reg in zip(acts, self.regions):
            if a == 0.0:
                continue
            zeros = np.zeros(reg.cells.size)
            act_vals = a * self.sigma_max * reg.signs
            f += self._force(q, self.mesh.cells[reg.cells], self.grads, self.wq,
                             zeros, zeros, act_vals, reg.fibers)
        return f

    def energy(self, q, activations=None) -> float:
        acts = self._acts(activations)
        e = self._energy(q, self.mesh.cells, self.grads, self.wq,
                         self.mu, self.lam, None, None)
        for a, reg in zip(acts, self.regions):
            if a == 0.0:
                continue
            zeros = np.zeros(reg.cells.size)
            act_vals = a * self.sigma_max * reg.signs
            e += self._energy(q, self.mesh.cells[reg.cells], self.grads, self.wq,
                              zeros, zeros, act_vals, reg.fibers)
        return e

    def hessian(self, q, activations=None):
        """Energy Hessian (= negative force Jacobian) as CSR."""
        acts = self._acts(activations)
        blocks = self._hess(q, self.mesh.cells, self.grads, self.wq,
                            self.mu, self.lam, None, None, self.bmats)
        n = self.mesh.n_nodes * self.ndim
        H = sp.coo_matrix((blocks.ravel(), (self.rows, self.cols)),
                          shape=(n, n)).tocsr()
        for a, reg in zip(acts, self.regions):
            if a == 0.0:
                continue
            zeros = np.zeros(reg.cells.size)
            act_vals = a * self.sigma_max * reg.signs
            hb = self._hess(q, self.mesh.cells[reg.cells], self.grads, self.wq,
                            zeros, zeros, act_vals, reg.fibers, self.bmats)
            H = H + self._assemble(hb, reg.dofs)
        return H

    # -- adjoint ------------------------------------------------------------

    def adjoint_dots(self, q, y, activations=None):
        """Per-cell modulus dots and per-signal activation dots.

        Returns ``(dE, dact)`` with ``dE[c] = y . d force/d E_c`` and
        ``dact[k] = y . d force/d a_k`` evaluated at positions ``q``.
        """
        dots_e, _ = self._dots(q, y, self.mesh.cells, self.grads, self.wq,
                               self.mu_hat, self.lam_hat, self._zero_fibers)
        dact = np.zeros(len(self.regions))
        for k, reg in enumerate(self.regions):
            _, da = self._dots(q, y, self.mesh.cells[reg.cells], self.grads,
                               self.wq, self.mu_hat, self.lam_hat, reg.fibers)
            dact[k] = self.sigma_max * float(np.dot(reg.signs, da))
        return dots_e, dact

    # -- rest stiffness (for Rayleigh damping) --------------------------------

    def _rest_unit_blocks(self):
        if self._rest_blocks_unit is None:
            ones = np.ones(self.mesh.n_cells)
            self._rest_blocks_unit = self._hess(
                self.mesh.nodes, self.mesh.cells, self.grads, self.wq,
                ones * self.mu_hat, ones * self.lam_hat, None, None, self.bmats)
        return self._rest_blocks_unit

    def rest_stiffness(self):
        """Rest-configuration stiffness with the current modulus field."""
        if self._rest_stiffness is None:
            blocks = self._rest_unit_blocks() * self.material.E[:, None, None]
            n = self.mesh.n_nodes * self.ndim
            self._rest_stiffness = sp.coo_matrix(
                (blocks.ravel(), (self.rows, self.cols)), shape=(n, n)).tocsr()
        return self._rest_stiffness

    def rest_stiffness_dots(self, x, y):
        """Per-cell ``y . K_hat_c x`` for the stiffness-damping modulus adjoint."""
        blocks = self._rest_unit_blocks()
        xb = x.ravel()[self.dofs]
        yb = y.ravel()[self.dofs]
        return np.einsum("cab,ca,cb->c", blocks, yb, xb)
