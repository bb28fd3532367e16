"""Muscle actuators: clipped Gaussians, weight-space interpolation, cell regions.

An actuator is an anisotropic Gaussian ``N(mu, Sigma)`` attached to a shape.
Its covariance is stored factored as Euler angles plus eigenvalues (sorted
descending), which is the representation that interpolates cleanly across
design bases.  The actuated cell region is the half-maximum ellipsoid's
principal-axes bounding box, clipped to the shape, with muscle fibers along
the leading principal axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import ShapeMask

CATEGORIES = ("left_fin", "right_fin", "caudal_fin")

# Mahalanobis radius of the half-maximum level set of a Gaussian.
HALF_MAX_RADIUS = math.sqrt(2.0 * math.log(2.0))


def rotation_matrix(angles, ndim):
    """Rotation with principal axes as columns.

    2D uses a single in-plane angle; 3D composes intrinsic z-y-x rotations
    ``Rz(a) @ Ry(b) @ Rx(c)`` from ``angles = (a, b, c)``.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if ndim == 2:
        if angles.shape != (1,):
            raise ValueError("2D actuators take a single rotation angle")
        c, s = math.cos(angles[0]), math.sin(angles[0])
        return np.array([[c, -s], [s, c]])
    if angles.shape != (3,):
        raise ValueError("3D actuators take three z-y-x Euler angles")
    a, b, g = angles
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cg, sg = math.cos(g), math.sin(g)
    rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rx = np.array([[1, 0, 0], [0, cg, -sg], [0, sg, cg]])
    return rz @ ry @ rx


@dataclass
class ActuatorGaussian:
    """One muscle group: category, center, orientation angles, eigenvalues."""

    category: str
    mu: np.ndarray
    angles: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(
                f"unknown actuator category {self.category!r}; expected one of {CATEGORIES}")
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.angles = np.atleast_1d(np.asarray(self.angles, dtype=float))
        self.eigenvalues = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        d = self.mu.shape[0]
        if d not in (2, 3):
            raise ValueError("actuator center must be 2D or 3D")
        if self.eigenvalues.shape != (d,):
            raise ValueError("need one eigenvalue per axis")
        if np.any(self.eigenvalues <= 0):
            raise ValueError(f"eigenvalues must be positive, got {self.eigenvalues}")
        if np.any(np.diff(self.eigenvalues) > 0):
            raise ValueError(
                f"eigenvalues must be sorted descending, got {self.eigenvalues}")
        # shape check happens inside rotation_matrix
        rotation_matrix(self.angles, d)

    @property
    def ndim(self):
        return self.mu.shape[0]

    def axes(self):
        """Principal axes as columns, leading eigenvalue first."""
        return rotation_matrix(self.angles, self.ndim)

    def covariance(self):
        q = self.axes()
        return q @ np.diag(self.eigenvalues) @ q.T


def _circular_mean(angles, weights):
    s = float((weights * np.sin(angles)).sum())
    c = float((weights * np.cos(angles)).sum())
    return math.atan2(s, c)


def _unwrap_near(angles, center):
    """Shift each angle by multiples of 2*pi into (center - pi, center + pi]."""
    return center + np.mod(angles - center + math.pi, 2.0 * math.pi) - math.pi


def interpolate_mean(mus, weights):
    """Convex combination of actuator centers."""
    mus = np.asarray(mus, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return np.einsum("i,id->d", weights, mus)


def interpolate_covariance(angle_sets, eigenvalue_sets, weights):
    """Interpolate factored covariances: linear eigenvalues, unwrapped angles.

    Each Euler angle is unwrapped to the branch nearest its weighted circular
    mean before the linear combination, so orientations never take the long
    way around.
    """
    angle_sets = np.asarray(angle_sets, dtype=float)
    eigenvalue_sets = np.asarray(eigenvalue_sets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    eigs = np.einsum("i,ik->k", weights, eigenvalue_sets)
    n_angles = angle_sets.shape[1]
    angles = np.empty(n_angles)
    for k in range(n_angles):
        center = _circular_mean(angle_sets[:, k], weights)
        angles[k] = float((weights * _unwrap_near(angle_sets[:, k], center)).sum())
    return angles, eigs


def interpolate_actuators(per_base, weights):
    """Blend per-base actuator lists into one actuator set.

    ``per_base`` holds one list of :class:`ActuatorGaussian` per design base.
    For every category, bases lacking it get zero weight and the rest are
    renormalized; a category whose supporting bases carry no weight is
    dropped.  Categories are returned in the fixed order left, right, caudal.
    """
    weights = np.asarray(weights, dtype=float)
    if len(per_base) != weights.shape[0]:
        raise ValueError("one actuator list per base is required")
    out = []
    for cat in CATEGORIES:
        entries = []
        for i, actuators in enumerate(per_base):
            found = [g for g in actuators if g.category == cat]
            if len(found) > 1:
                raise ValueError(f"base {i} declares {cat} more than once")
            if found:
                entries.append((i, found[0]))
        if not entries:
            continue
        w = np.array([weights[i] for i, _ in entries])
        total = w.sum()
        if total <= 0:
            continue
        w = w / total
        mus = [g.mu for _, g in entries]
        angle_sets = [g.angles for _, g in entries]
        eig_sets = [g.eigenvalues for _, g in entries]
        angles, eigs = interpolate_covariance(angle_sets, eig_sets, w)
        out.append(ActuatorGaussian(
            category=cat, mu=interpolate_mean(mus, w),
            angles=angles, eigenvalues=np.maximum(eigs, 1e-300)))
    return out


def _resign_nonneg_x(axis):
    for comp in axis:
        if comp > 0:
            return axis
        if comp < 0:
            return -axis
    return axis


@dataclass
class ActuatorRegion:
    """Actuated cells with fiber direction and antagonistic signs."""

    category: str
    cells: np.ndarray    # flat cell indices
    fiber: np.ndarray    # unit vector, nonnegative x component
    signs: np.ndarray    # +1/-1 per cell (antagonistic split), +1 for fins

    @property
    def n_cells(self):
        return len(self.cells)


def actuator_region(gaussian: ActuatorGaussian, mask: ShapeMask) -> ActuatorRegion:
    """Cells actuated by a Gaussian: half-max bounding box clipped to the shape.

    The box is aligned with the principal axes and extends
    ``sqrt(2 ln 2 * eigenvalue)`` along each.  Membership tests cell centers.
    Caudal actuators are split by the plane through the center normal to the
    y axis into antagonistic +1/-1 groups.
    """
    grid = mask.grid
    if gaussian.ndim != grid.ndim:
        raise ValueError("actuator and grid dimensionality differ")
    centers = grid.cell_centers().reshape(-1, grid.ndim)
    rel = centers - gaussian.mu
    axes = gaussian.axes()
    half_widths = HALF_MAX_RADIUS * np.sqrt(gaussian.eigenvalues)
    local = rel @ axes  # coordinates along principal axes
    in_box = np.all(np.abs(local) <= half_widths, axis=1)
    selected = in_box & mask.inside.ravel()
    cells = np.nonzero(selected)[0]
    if cells.size == 0:
        # a muscle that misses the body contributes no force; keep going so
        # the optimizer can move the shape back under it
        warnings.warn(
            f"actuator region is empty: category={gaussian.category} "
            f"mu={gaussian.mu.tolist()} angles={gaussian.angles.tolist()} "
            f"eigenvalues={gaussian.eigenvalues.tolist()}", RuntimeWarning,
            stacklevel=2)
    fiber = _resign_nonneg_x(axes[:, 0].copy())
    signs = np.ones(cells.size)
    if gaussian.category == "caudal_fin":
        y_centers = centers[cells, 1]
        signs = np.where(y_centers > gaussian.mu[1], 1.0, -1.0)
    return ActuatorRegion(category=gaussian.category, cells=cells,
                          fiber=fiber, signs=signs)


def save_actuators(path, actuators) -> None:
    """Write actuators as text lines: category, center, angles, eigenvalues."""
    with open(path, "w") as fh:
        for g in actuators:
            parts = ([g.category] + [repr(float(x)) for x in g.mu]
                     + [repr(float(x)) for x in g.angles]
                     + [repr(float(x)) for x in g.eigenvalues])
            fh.write(" ".join(parts) + "\n")


def load_actuators(path, ndim):
    """Read an actuator file written by :func:`save_actuators`."""
    n_angles = 1 if ndim == 2 else 3
    expected = 1 + ndim + n_angles + ndim
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != expected:
                raise ValueError(
                    f"{path}:{lineno}: expected {expected} fields for a "
                    f"{ndim}D actuator, got {len(tokens)}")
            cat = tokens[0]
            vals = [float(t) for t in tokens[1:]]
            mu = vals[:ndim]
            angles = vals[ndim:ndim + n_angles]
            eigs = vals[ndim + n_angles:]
            out.append(ActuatorGaussian(category=cat, mu=mu, angles=angles,
                                        eigenvalues=eigs))
    return out
