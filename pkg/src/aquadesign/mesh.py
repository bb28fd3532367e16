"""Finite-element meshes over the regular design grid.

The simulator works on the full domain by default: every grid cell becomes a
bilinear quad (2D) or trilinear hex (3D) whose corners are the grid nodes.
Mass is row-sum lumped, so each cell sends ``rho * volume / 2**d`` to each of
its corners and the total mass is exactly ``rho`` times the meshed volume.

:func:`submesh` restricts a mesh to a cell subset (used to compare a
shape-only mesh against the full-domain mesh with soft exterior cells).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import GridSpec, SurfaceQuadSet

DEFAULT_RHO_SOLID = 1000.0


@dataclass(frozen=True)
class Mesh:
    grid: GridSpec
    nodes: np.ndarray        # (n, d) rest positions
    cells: np.ndarray        # (nc, 2**d) corner node ids, binary corner order
    rho_solid: float
    mass: np.ndarray         # (n,) lumped nodal masses
    parent_nodes: Optional[np.ndarray] = None   # submesh -> parent node ids

    @property
    def ndim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_size ** self.ndim


def build_mesh(grid: GridSpec, rho_solid: float = DEFAULT_RHO_SOLID) -> Mesh:
    """Mesh the whole domain: one element per grid cell."""
    if rho_solid <= 0:
        raise ValueError("rho_solid must be positive")
    nodes = grid.node_positions()
    cells = grid.cell_corner_nodes()
    volume = grid.cell_size ** grid.ndim
    mass = np.zeros(nodes.shape[0])
    share = rho_solid * volume / cells.shape[1]
    np.add.at(mass, cells.ravel(), share)
    return Mesh(grid=grid, nodes=nodes, cells=cells,
                rho_solid=float(rho_solid), mass=mass)


def submesh(mesh: Mesh, keep_cells: np.ndarray):
    """Restrict to a cell subset.

    Returns the reduced mesh plus a node map of length ``mesh.n_nodes`` with
    the new index of every kept node and -1 elsewhere.  Lumped masses are
    rebuilt from the kept cells only.
    """
    keep_cells = np.asarray(keep_cells)
    if keep_cells.dtype == bool:
        keep_cells = np.flatnonzero(keep_cells)
    if keep_cells.size == 0:
        raise ValueError("submesh needs at least one cell")
    old_cells = mesh.cells[keep_cells]
    used = np.unique(old_cells)
    node_map = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_map[used] = np.arange(used.size)
    cells = node_map[old_cells]
    volume = mesh.cell_volume
    mass = np.zeros(used.size)
    share = mesh.rho_solid * volume / cells.shape[1]
    np.add.at(mass, cells.ravel(), share)
    parent = used if mesh.parent_nodes is None else mesh.parent_nodes[used]
    sub = Mesh(grid=mesh.grid, nodes=mesh.nodes[used], cells=cells,
               rho_solid=mesh.rho_solid, mass=mass, parent_nodes=parent)
    return sub, node_map


def remap_surface(surface: SurfaceQuadSet, node_map: np.ndarray) -> SurfaceQuadSet:
    """Re-express surface facets in submesh node ids."""
    ids = node_map[surface.node_ids]
    if (ids < 0).any():
        raise ValueError("surface references nodes outside the submesh")
    return SurfaceQuadSet(grid=surface.grid, node_ids=ids, normals=surface.normals,
                          areas=surface.areas, inside_cells=surface.inside_cells)


def remap_nodes(node_map: np.ndarray, ids) -> np.ndarray:
    """Map full-mesh node ids into a submesh, rejecting dropped nodes."""
    out = node_map[np.asarray(ids)]
    if (np.asarray(out) < 0).any():
        raise ValueError("node set references nodes outside the submesh")
    return out
