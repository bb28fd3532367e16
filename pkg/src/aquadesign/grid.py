"""Regular-grid domain: density fields, shape masks, and surface extraction.

Geometry lives on a uniform grid of square (2D) or cubic (3D) cells centered
at the origin.  Densities are cell-centered probability masses; simulation
nodes live on the grid corners.  Array values are indexed ``[ix, iy]`` or
``[ix, iy, iz]`` and flattened in C order wherever a flat cell or node index
is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-9

# Cell corner offsets in binary order: bit pattern (bx, by[, bz]).
CORNER_BITS_2D = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int64)
CORNER_BITS_3D = np.array(
    [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
     [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]], dtype=np.int64)


def corner_bits(ndim):
    return CORNER_BITS_2D if ndim == 2 else CORNER_BITS_3D


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``dims`` cells with edge length ``cell_size``.

    The domain box is centered at the origin, so the cell with index
    ``(0, ...)`` has its low corner at ``origin = -dims * cell_size / 2``.
    """

    dims: tuple
    cell_size: float

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got dims={dims}")
        if any(n < 2 for n in dims):
            raise ValueError(f"need at least 2 cells per axis, got dims={dims}")
        if not (self.cell_size > 0):
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def origin(self):
        return tuple(-n * self.cell_size / 2.0 for n in self.dims)

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    @property
    def node_dims(self):
        return tuple(n + 1 for n in self.dims)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_dims))

    @property
    def volume(self):
        return float(np.prod([n * self.cell_size for n in self.dims]))

    def axis_centers(self, axis):
        """Cell-center coordinates along one axis."""
        o = self.origin[axis]
        return o + (np.arange(self.dims[axis]) + 0.5) * self.cell_size

    def cell_centers(self):
        """Cell-center coordinates, shape ``dims + (ndim,)``."""
        axes = [self.axis_centers(k) for k in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_positions(self):
        """Corner-node coordinates, shape ``(n_nodes, ndim)``, C-order ids."""
        axes = [self.origin[k] + np.arange(self.dims[k] + 1) * self.cell_size
                for k in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_id(self, idx):
        """Flat node id from a multi-index (array-friendly)."""
        idx = np.asarray(idx)
        nd = self.node_dims
        out = idx[..., 0]
        for k in range(1, self.ndim):
            out = out * nd[k] + idx[..., k]
        return out

    def cell_corner_nodes(self):
        """Corner node ids per cell in binary order, shape ``(n_cells, 2**ndim)``."""
        grids = np.meshgrid(*[np.arange(n) for n in self.dims], indexing="ij")
        base = np.stack([g.ravel() for g in grids], axis=-1)  # (n_cells, ndim)
        bits = corner_bits(self.ndim)
        corners = base[:, None, :] + bits[None, :, :]
        return self.node_id(corners)


def normalize_domain(bbox, dims):
    """Rescale a box uniformly to unit volume and center it at the origin.

    ``bbox`` is a per-axis sequence of ``(lo, hi)`` pairs.  The aspect ratio
    of the box must match ``dims`` so that cells stay square; anisotropic
    inputs are rejected.
    """
    bbox = [(float(lo), float(hi)) for lo, hi in bbox]
    dims = tuple(int(n) for n in dims)
    if len(bbox) != len(dims):
        raise ValueError("bbox and dims dimensionality mismatch")
    extents = np.array([hi - lo for lo, hi in bbox])
    if np.any(extents <= 0):
        raise ValueError(f"degenerate bbox extents {extents}")
    per_cell = extents / np.array(dims)
    if not np.allclose(per_cell, per_cell[0], rtol=1e-9):
        raise ValueError(
            f"bbox aspect ratio {extents} incompatible with dims {dims}: cells must be square")
    scale = float(np.prod(extents)) ** (-1.0 / len(dims))
    cell = scale * float(per_cell[0])
    return GridSpec(dims=dims, cell_size=cell)


@dataclass
class DensityField:
    """Nonnegative cell masses summing to one on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.dims:
            raise ValueError(
                f"values shape {self.values.shape} != grid dims {self.grid.dims}")
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")
        total = self.values.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"density must sum to 1 within {MASS_TOL}, got {total!r}")


@dataclass
class ShapeMask:
    """Boolean inside/outside flags per cell."""

    grid: GridSpec
    inside: np.ndarray

    def __post_init__(self):
        self.inside = np.asarray(self.inside, dtype=bool)
        if self.inside.shape != self.grid.dims:
            raise ValueError(
                f"mask shape {self.inside.shape} != grid dims {self.grid.dims}")
        if not self.inside.any():
            raise ValueError("shape mask has no inside cells")

    @property
    def n_inside(self):
        return int(self.inside.sum())


@dataclass
class SurfaceQuadSet:
    """Boundary facets of a shape: corner node ids, outward normals, areas.

    2D facets are edges with two corner nodes; 3D facets are quads with four
    corner nodes in cyclic order.  Normals are rest-state outward units, areas
    are rest areas (edge length in 2D).
    """

    grid: GridSpec
    node_ids: np.ndarray     # (n_facets, 2 or 4) int
    normals: np.ndarray      # (n_facets, ndim)
    areas: np.ndarray        # (n_facets,)
    inside_cells: np.ndarray  # (n_facets,) flat cell index the facet belongs to

    @property
    def n_facets(self):
        return len(self.areas)


def density_from_mask(mask: ShapeMask) -> DensityField:
    """Uniform density over the inside cells of a mask."""
    values = mask.inside.astype(float)
    values /= values.sum()
    return DensityField(grid=mask.grid, values=values)


def extract_shape(density: DensityField) -> ShapeMask:
    """Half-peak shape: cells with density at or above half the peak value."""
    peak = density.values.max()
    if peak <= 0:
        raise ValueError("cannot extract a shape from an all-zero density")
    return ShapeMask(grid=density.grid, inside=density.values >= 0.5 * peak)


def _facet_corner_offsets(ndim, axis, side):
    """Facet corner node offsets relative to the cell's low corner.

    Corners are ordered so that the outward normal convention holds:
    2D, perp(t) = (t_y, -t_x) applied to t = x1 - x0 points outward;
    3D, corners are cyclic with (x2-x0) x (x3-x1) pointing outward.
    """
    if ndim == 2:
        # (axis, side) -> two corner offsets
        table = {
            (0, 1): [(1, 0), (1, 1)],   # +x face
            (0, 0): [(0, 1), (0, 0)],   # -x face
            (1, 1): [(1, 1), (0, 1)],   # +y face
            (1, 0): [(0, 0), (1, 0)],   # -y face
        }
        return np.array(table[(axis, side)], dtype=np.int64)
    # 3D: in-plane axes (u, v) with u x v = +axis
    u, v = [(1, 2), (2, 0), (0, 1)][axis]
    loop = [(0, 0), (1, 0), (1, 1), (0, 1)]  # CCW in (u, v), normal +axis
    if side == 0:
        loop = [loop[0], loop[3], loop[2], loop[1]]  # reversed, normal -axis
    out = np.zeros((4, 3), dtype=np.int64)
    for c, (bu, bv) in enumerate(loop):
        out[c, axis] = side
        out[c, u] = bu
        out[c, v] = bv
    return out


def extract_surface(mask: ShapeMask) -> SurfaceQuadSet:
    """Facets separating inside cells from outside cells or the domain boundary."""
    grid = mask.grid
    ndim = grid.ndim
    inside = mask.inside
    node_chunks, normal_chunks, area_chunks, cell_chunks = [], [], [], []
    area = grid.cell_size ** (ndim - 1)
    cell_index = np.arange(grid.n_cells).reshape(grid.dims)
    for axis in range(ndim):
        for side in (0, 1):
            # neighbor on this side is outside (or beyond the domain)
            pad = [(0, 0)] * ndim
            pad[axis] = (1, 1)
            padded = np.pad(inside, pad, constant_values=False)
            shifted = np.roll(padded, -1 if side == 1 else 1, axis=axis)
            sl = tuple(slice(1, -1) if k == axis else slice(None) for k in range(ndim))
            exposed = inside & ~shifted[sl]
            if not exposed.any():
                continue
            cells = np.argwhere(exposed)  # (m, ndim) low-corner multi-indices
            offs = _facet_corner_offsets(ndim, axis, side)
            corners = cells[:, None, :] + offs[None, :, :]
            ids = grid.node_id(corners)
            nrm = np.zeros((len(cells), ndim))
            nrm[:, axis] = 1.0 if side == 1 else -1.0
            node_chunks.append(ids)
            normal_chunks.append(nrm)
            area_chunks.append(np.full(len(cells), area))
            cell_chunks.append(cell_index[exposed])
    return SurfaceQuadSet(
        grid=grid,
        node_ids=np.concatenate(node_chunks, axis=0),
        normals=np.concatenate(normal_chunks, axis=0),
        areas=np.concatenate(area_chunks, axis=0),
        inside_cells=np.concatenate(cell_chunks, axis=0),
    )


def schlick_gain(t, a):
    """Schlick's gain curve on [0, 1] with sharpness ``a`` in (0, 1).

    Built from the bias curve ``b(t, a) = t / ((1/a - 2)(1 - t) + 1)``:
    the gain is ``b(2t, a)/2`` below one half and ``1 - b(2-2t, a)/2`` above.
    Strictly increasing with G(0)=0, G(0.5)=0.5, G(1)=1.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("gain input t must lie in [0, 1]")
    if not (0 < a < 1):
        raise ValueError("gain sharpness a must lie in (0, 1)")
    k = 1.0 / a - 2.0

    def bias(x):
        return x / (k * (1.0 - x) + 1.0)

    lo = 0.5 * bias(2.0 * t)
    hi = 1.0 - 0.5 * bias(2.0 - 2.0 * t)
    out = np.where(t < 0.5, lo, hi)
    return out if out.ndim else float(out)


def schlick_gain_derivative(t, a):
    """Derivative of :func:`schlick_gain` with respect to ``t``."""
    t = np.asarray(t, dtype=float)
    if not (0 < a < 1):
        raise ValueError("gain sharpness a must lie in (0, 1)")
    k = 1.0 / a - 2.0

    def dbias(x):
        den = k * (1.0 - x) + 1.0
        return (den + k * x) / (den * den)

    lo = dbias(2.0 * t)
    hi = dbias(2.0 - 2.0 * t)
    out = np.where(t < 0.5, lo, hi)
    return out if out.ndim else float(out)


def stiffness_field(density: DensityField, e0: float, e_min: float = None) -> np.ndarray:
    """Per-cell Young's modulus from a density field.

    Cell densities are normalized by the peak value and passed through the
    Schlick gain with sharpness 0.1: ``E = E0 * G(rho/peak)``, floored at
    ``e_min`` so empty regions keep a small nonzero stiffness instead of a
    singular one.  Peak cells map to ``E0`` exactly and half-peak cells to
    ``E0/2``.
    """
    if not (e0 > 0):
        raise ValueError("e0 must be positive")
    if e_min is None:
        e_min = 1e-4 * e0
    if not (0 < e_min < e0):
        raise ValueError("need 0 < e_min < e0")
    peak = density.values.max()
    if peak <= 0:
        raise ValueError("density has no mass")
    gain = schlick_gain(density.values / peak, 0.1)
    return np.maximum(e0 * gain, e_min)


def stiffness_field_vjp(density: DensityField, e0: float, d_e: np.ndarray,
                        e_min: float = None) -> np.ndarray:
    """Adjoint of :func:`stiffness_field`: maps dL/dE back to dL/d(density).

    The peak normalization routes part of the gradient to the argmax cell;
    cells sitting on the ``e_min`` floor are insensitive to density and pass
    no gradient.
    """
    if e_min is None:
        e_min = 1e-4 * e0
    rho = density.values
    peak = rho.max()
    that = rho / peak
    live = e0 * schlick_gain(that, 0.1) > e_min
    w = np.where(live, e0 * schlick_gain_derivative(that, 0.1), 0.0)
    w = w * np.asarray(d_e)
    grad = w / peak
    imax = np.unravel_index(np.argmax(rho), rho.shape)
    grad[imax] -= float((w * rho).sum()) / peak ** 2
    return grad


def spine_set(mask: ShapeMask, tol_cells: float = 0.5) -> np.ndarray:
    """Node ids on the body midline: rest ``y`` within ``tol_cells`` cells of 0.

    Only nodes belonging to inside cells count.  Grids rarely place nodes at
    exactly y = 0, hence the half-cell snap tolerance.
    """
    grid = mask.grid
    corner_ids = grid.cell_corner_nodes()[mask.inside.ravel()]
    candidates = np.unique(corner_ids)
    y = grid.node_positions()[candidates, 1]
    tol = tol_cells * grid.cell_size + 1e-12
    nodes = candidates[np.abs(y) <= tol]
    if nodes.size == 0:
        lo, hi = float(y.min()), float(y.max())
        raise ValueError(
            f"no midline nodes: shape spans y in [{lo:g}, {hi:g}], "
            f"none within {tol:g} of 0 — recenter the shape on the x axis")
    return nodes


def save_field(path, grid: GridSpec, values) -> None:
    """Write a cell field as text: ``d n1 [n2 [n3]] cell_size`` then C-order values."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.dims:
        raise ValueError(f"field shape {values.shape} != grid dims {grid.dims}")
    with open(path, "w") as fh:
        header = ([str(grid.ndim)] + [str(n) for n in grid.dims]
                  + [repr(float(grid.cell_size))])
        fh.write(" ".join(header) + "\n")
        flat = values.ravel()
        for start in range(0, flat.size, 8):
            fh.write(" ".join(repr(float(x))
                              for x in flat[start:start + 8]) + "\n")


def load_field(path):
    """Read a cell field written by :func:`save_field`.

    Returns ``(GridSpec, values)``; values are not normalized or validated
    beyond shape, so masks and raw densities both round-trip.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise ValueError(f"{path}: empty field file")
    ndim = int(tokens[0])
    if ndim not in (2, 3):
        raise ValueError(f"{path}: dimension must be 2 or 3, got {ndim}")
    if len(tokens) < 1 + ndim + 1:
        raise ValueError(f"{path}: truncated header")
    dims = tuple(int(t) for t in tokens[1:1 + ndim])
    cell = float(tokens[1 + ndim])
    grid = GridSpec(dims=dims, cell_size=cell)
    data = np.array([float(t) for t in tokens[2 + ndim:]])
    if data.size != grid.n_cells:
        raise ValueError(
            f"{path}: expected {grid.n_cells} values, found {data.size}")
    return grid, data.reshape(dims)
