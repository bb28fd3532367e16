"""Entropic optimal transport on the grid: heat-kernel Sinkhorn and barycenters.

The squared-distance Gibbs kernel ``exp(-|x - y|^2 / epsilon)`` on a regular
grid factorizes into one Gaussian convolution per axis with standard
deviation ``sigma = sqrt(epsilon / 2)``.  All scaling iterations below apply
the kernel through :class:`HeatKernel`, which implements the convolution with
reflecting boundaries, so it is symmetric, strictly positive, and preserves
both total mass and constant fields.

Barycenters use the debiased scaling iteration: the classic iterated Bregman
projection produces a barycenter convolved with the kernel (visibly blurred
at moderate ``epsilon``), while the debiased fixed point removes that
entropic bias with one extra autocorrelation potential.  Weight vectors that
sit exactly on a simplex vertex short-circuit to the corresponding base,
which is the exact barycenter there.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import DensityField, GridSpec, MASS_TOL

logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-10
DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-7


def default_epsilon(grid: GridSpec) -> float:
    """Regularization used when none is given: ``(2 * cell_size) ** 2``."""
    return (2.0 * grid.cell_size) ** 2


def _axis_kernel(n, cell_size, epsilon):
    """Dense 1D Gaussian convolution matrix with reflecting boundaries.

    Built by folding the integer Gaussian ``g(k) = exp(-(k*cell)^2/epsilon)``
    (normalized over all of Z) into ``[0, n)`` with mirror images about both
    domain edges.  The folded matrix is symmetric and doubly stochastic up to
    roundoff, hence mass- and constant-preserving.
    """
    sigma_cells = np.sqrt(epsilon / 2.0) / cell_size
    reach = int(np.ceil(10.0 * sigma_cells)) + 2 * n
    k = np.arange(-reach, reach + 1, dtype=float)
    g = np.exp(-((k * cell_size) ** 2) / epsilon)
    g /= g.sum()

    def gauss(arg):
        out = np.zeros_like(arg, dtype=float)
        ok = np.abs(arg) <= reach
        out[ok] = g[(arg[ok] + reach).astype(np.int64)]
        return out

    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    B = np.zeros((n, n))
    t_max = int(np.ceil((10.0 * sigma_cells + n) / (2.0 * n))) + 1
    for t in range(-t_max, t_max + 1):
        B += gauss(i - j - 2 * n * t)          # direct and translated images
        B += gauss(i + j + 1 - 2 * n * t)      # mirrored images
    B = 0.5 * (B + B.T)
    # Keep the operator strictly positive even where the Gaussian underflows.
    return np.maximum(B, 1e-300)


class HeatKernel:
    """Separable heat-kernel convolution for a given grid and ``epsilon``."""

    def __init__(self, grid: GridSpec, epsilon: float):
        if not (epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.grid = grid
        self.epsilon = float(epsilon)
        self._mats = [_axis_kernel(n, grid.cell_size, epsilon) for n in grid.dims]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Convolve a cell field (shape ``grid.dims``), one axis at a time.

        The operator is self-adjoint, so this is also its transpose.
        """
        out = np.asarray(values, dtype=float)
        if out.shape != self.grid.dims:
            raise ValueError(f"field shape {out.shape} != grid dims {self.grid.dims}")
        for axis, B in enumerate(self._mats):
            out = np.moveaxis(np.tensordot(B, out, axes=(1, axis)), 0, axis)
        return out


_KERNEL_CACHE = {}


def get_kernel(grid: GridSpec, epsilon: float) -> HeatKernel:
    key = (grid.dims, grid.cell_size, float(epsilon))
    kern = _KERNEL_CACHE.get(key)
    if kern is None:
        kern = HeatKernel(grid, epsilon)
        _KERNEL_CACHE[key] = kern
    return kern


def heat_convolution(grid: GridSpec, values: np.ndarray, epsilon: float) -> np.ndarray:
    """Gaussian blur of a cell field with ``sigma = sqrt(epsilon/2)``."""
    return get_kernel(grid, epsilon).apply(values)


def floor_mass(values: np.ndarray) -> np.ndarray:
    """Add a tiny uniform mass and renormalize; guards Sinkhorn divisions."""
    v = np.asarray(values, dtype=float)
    total = v.sum()
    if total <= 0:
        raise ValueError("distribution has zero total mass")
    v = v / total
    v = v + MASS_FLOOR / v.size
    return v / v.sum()


@dataclass
class SinkhornTape:
    """Scaling state and convergence report of a Sinkhorn run."""

    epsilon: float
    iterations: int
    residual: float
    converged: bool
    a: np.ndarray
    b: np.ndarray


def sinkhorn_distance(p: DensityField, q: DensityField, epsilon: float = None,
                      max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL):
    """Entropy-regularized squared Wasserstein-2 cost between two densities.

    Runs the symmetric scaling iteration with the heat kernel and returns the
    primal transport cost ``<pi, C>`` of the resulting plan (which tends to
    the unregularized squared cost as ``epsilon`` shrinks), together with a
    :class:`SinkhornTape` recording the scalings and convergence data.

    Parameters
    ----------
    p, q : DensityField
        Marginals on a common grid.
    epsilon : float, optional
        Entropic regularization; defaults to ``(2 * cell_size)^2``.
    max_iters : int
        Iteration cap; non-convergence is reported, not raised.
    tol : float
        L1 marginal-violation tolerance.
    """
    if p.grid != q.grid:
        raise ValueError("sinkhorn_distance requires a common grid")
    grid = p.grid
    if epsilon is None:
        epsilon = default_epsilon(grid)
    kern = get_kernel(grid, epsilon)
    pv = floor_mass(p.values)
    qv = floor_mass(q.values)

    a = np.ones_like(pv)
    b = np.ones_like(qv)
    residual = np.inf
    iterations = 0
    for it in range(max_iters):
        a = pv / kern.apply(b)
        b = qv / kern.apply(a)
        iterations = it + 1
        residual = float(np.abs(a * kern.apply(b) - pv).sum())
        if residual < tol:
            break
    converged = residual < tol
    if not converged:
        warnings.warn(
            f"sinkhorn did not converge in {max_iters} iterations "
            f"(residual {residual:.3e})", RuntimeWarning)

    # Primal cost <pi, C> with C = squared distance, axis by axis:
    # sum_ij a_i K_ij b_j (x_i - x_j)^2 expands into three kernel moments.
    cost = 0.0
    centers = grid.cell_centers()
    for axis in range(grid.ndim):
        x = centers[..., axis]
        kb = kern.apply(b)
        kxb = kern.apply(x * b)
        kxxb = kern.apply(x * x * b)
        cost += float((a * (x * x * kb - 2.0 * x * kxb + kxxb)).sum())
    tape = SinkhornTape(epsilon=float(epsilon), iterations=iterations,
                        residual=residual, converged=converged, a=a, b=b)
    return cost, tape


def validate_weights(w, m: int) -> np.ndarray:
    """Check a barycentric weight vector: length m, nonnegative, sums to one."""
    w = np.asarray(w, dtype=float)
    if w.shape != (m,):
        raise ValueError(f"expected {m} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError(f"weights must be nonnegative, got {w}")
    if abs(w.sum() - 1.0) > MASS_TOL:
        raise ValueError(f"weights must sum to 1 within {MASS_TOL}, got sum {w.sum()!r}")
    return w


@dataclass
class BarycenterProblem:
    """A fixed set of base densities plus solver settings."""

    bases: list
    epsilon: float = None
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    debias: bool = True

    def __post_init__(self):
        if not self.bases:
            raise ValueError("need at least one base density")
        grid = self.bases[0].grid
        for b in self.bases[1:]:
            if b.grid != grid:
                raise ValueError("all bases must share one grid")
        if self.epsilon is None:
            self.epsilon = default_epsilon(grid)
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    @property
    def grid(self) -> GridSpec:
        return self.bases[0].grid

    @property
    def n_bases(self) -> int:
        return len(self.bases)


@dataclass
class BarycenterTape:
    """Everything needed to replay or reverse one barycenter solve."""

    grid: GridSpec
    epsilon: float
    weights: np.ndarray
    floored_bases: np.ndarray      # (m, *dims)
    iterations: int
    v_hist: np.ndarray             # (iterations, m, *dims) scaling inputs
    d_hist: np.ndarray             # (iterations, *dims) debias inputs
    raw_sum: float                 # mass of the final iterate before renormalizing
    residual: float
    converged: bool
    debias: bool
    vertex: int = None             # set when a simplex-vertex fast path was taken


def _weighted_logsum(log_psi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_i w_i * log_psi_i`` with a canonical summation order.

    Terms are sorted per cell before accumulation so the result is invariant,
    bit for bit, under permutations of the bases.
    """
    terms = w.reshape((-1,) + (1,) * (log_psi.ndim - 1)) * log_psi
    return np.sort(terms, axis=0).sum(axis=0)


def barycenter(problem: BarycenterProblem, w):
    """Weighted Wasserstein barycenter of the problem's bases.

    Interior weights run the debiased convolutional scaling iteration until
    the L1 change of the iterate drops below ``tol`` or ``max_iters`` is
    reached; the iteration count actually used is recorded on the returned
    tape.  A weight vector sitting exactly on a simplex vertex returns that
    base directly (the exact barycenter), flagged on the tape.

    Returns
    -------
    (DensityField, BarycenterTape)
    """
    w = validate_weights(w, problem.n_bases)
    grid = problem.grid
    kern = get_kernel(grid, problem.epsilon)
    P = np.stack([floor_mass(b.values) for b in problem.bases])
    m = problem.n_bases

    vertex = np.nonzero(w == 1.0)[0]
    if vertex.size:
        k = int(vertex[0])
        out = problem.bases[k].values.copy()
        tape = BarycenterTape(
            grid=grid, epsilon=problem.epsilon, weights=w, floored_bases=P,
            iterations=0, v_hist=np.zeros((0, m) + grid.dims),
            d_hist=np.zeros((0,) + grid.dims), raw_sum=float(out.sum()),
            residual=0.0, converged=True, debias=problem.debias, vertex=k)
        return DensityField(grid=grid, values=out / out.sum()), tape

    v = np.ones((m,) + grid.dims)
    d = np.ones(grid.dims)
    v_hist = np.empty((problem.max_iters, m) + grid.dims)
    d_hist = np.empty((problem.max_iters,) + grid.dims)
    mu = None
    residual = np.inf
    iterations = 0
    for it in range(problem.max_iters):
        v_hist[it] = v
        d_hist[it] = d
        psi = np.empty_like(v)
        for i in range(m):
            u = P[i] / kern.apply(v[i])
            psi[i] = kern.apply(u)
        ell = _weighted_logsum(np.log(psi), w)
        mu_prev = mu
        mu = np.exp(ell)
        if problem.debias:
            mu = d * mu
        for i in range(m):
            v[i] = mu / psi[i]
        if problem.debias:
            d = np.sqrt(d * mu / kern.apply(d))
        iterations = it + 1
        if mu_prev is not None:
            residual = float(np.abs(mu - mu_prev).sum())
            if residual < problem.tol:
                break
    converged = residual < problem.tol
    if not converged:
        logger.debug("barycenter stopped at max_iters=%d (residual %.3e)",
                     problem.max_iters, residual)
    raw_sum = float(mu.sum())
    tape = BarycenterTape(
        grid=grid, epsilon=problem.epsilon, weights=w, floored_bases=P,
        iterations=iterations, v_hist=v_hist[:iterations].copy(),
        d_hist=d_hist[:iterations].copy(), raw_sum=raw_sum,
        residual=residual, converged=converged, debias=problem.debias)
    return DensityField(grid=grid, values=mu / raw_sum), tape


def replay_barycenter(tape: BarycenterTape) -> np.ndarray:
    """Recompute the barycenter recorded on a tape (bit-exact)."""
    if tape.vertex is not None:
        raise ValueError("simplex-vertex tapes record no iterations to replay")
    kern = get_kernel(tape.grid, tape.epsilon)
    m = tape.floored_bases.shape[0]
    v = tape.v_hist[0].copy()
    d = tape.d_hist[0].copy()
    mu = None
    for _ in range(tape.iterations):
        psi = np.empty_like(v)
        for i in range(m):
            u = tape.floored_bases[i] / kern.apply(v[i])
            psi[i] = kern.apply(u)
        mu = np.exp(_weighted_logsum(np.log(psi), tape.weights))
        if tape.debias:
            mu = d * mu
        for i in range(m):
            v[i] = mu / psi[i]
        if tape.debias:
            d = np.sqrt(d * mu / kern.apply(d))
    return mu / mu.sum()


def barycenter_vjp(tape: BarycenterTape, upstream: np.ndarray,
                   project_tangent: bool = False) -> np.ndarray:
    """Reverse-mode gradient of the barycenter with respect to its weights.

    Replays the recorded iterations backwards, propagating the upstream
    cotangent ``dL/d(barycenter)`` through every scaling update.  With
    ``project_tangent`` the result is projected onto the simplex tangent
    space (components summing to zero).

    Parameters
    ----------
    tape : BarycenterTape
        Tape returned by :func:`barycenter` for an interior weight vector.
    upstream : ndarray
        Cotangent with the grid's cell shape.
    """
    if tape.vertex is not None:
        raise ValueError("weight gradient is undefined on the simplex-vertex fast path")
    if tape.iterations == 0:
        raise ValueError("empty tape")
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != tape.grid.dims:
        raise ValueError(f"upstream shape {upstream.shape} != grid dims {tape.grid.dims}")

    kern = get_kernel(tape.grid, tape.epsilon)
    P = tape.floored_bases
    m = P.shape[0]
    w = tape.weights
    K = tape.iterations

    w_bar = np.zeros(m)
    v_bar = np.zeros_like(tape.v_hist[0])
    d_bar = np.zeros(tape.grid.dims)

    for it in range(K - 1, -1, -1):
        v = tape.v_hist[it]
        d = tape.d_hist[it]
        # Forward replay of this iteration's intermediates.
        phi = np.empty_like(v)
        u = np.empty_like(v)
        psi = np.empty_like(v)
        for i in range(m):
            phi[i] = kern.apply(v[i])
            u[i] = P[i] / phi[i]
            psi[i] = kern.apply(u[i])
        log_psi = np.log(psi)
        ell = _weighted_logsum(log_psi, w)
        mu = np.exp(ell)
        if tape.debias:
            mu = d * mu
            chi = kern.apply(d)
            d_next = np.sqrt(d * mu / chi)

        mu_bar = np.zeros_like(mu)
        if it == K - 1:
            # Output stage: out = mu / sum(mu).
            s = tape.raw_sum
            mu_bar += upstream / s - float((upstream * mu).sum()) / s ** 2

        if tape.debias:
            # d_next = sqrt(d * mu / chi)
            d_bar_in = d_bar
            d_bar = d_bar_in * d_next / (2.0 * d)
            mu_bar += d_bar_in * d_next / (2.0 * mu)
            chi_bar = -d_bar_in * d_next / (2.0 * chi)
            d_bar += kern.apply(chi_bar)
        else:
            d_bar = np.zeros_like(d_bar)

        # v'_i = mu / psi_i
        psi_bar = np.empty_like(psi)
        for i in range(m):
            mu_bar += v_bar[i] / psi[i]
            psi_bar[i] = -v_bar[i] * mu / psi[i] ** 2

        # mu = [d *] exp(ell)
        if tape.debias:
            d_bar += mu_bar * mu / d
        ell_bar = mu_bar * mu

        # ell = sum_i w_i log(psi_i)
        new_v_bar = np.empty_like(v_bar)
        for i in range(m):
            w_bar[i] += float((ell_bar * log_psi[i]).sum())
            psi_bar[i] += w[i] * ell_bar / psi[i]
            # psi_i = K u_i ; u_i = P_i / phi_i ; phi_i = K v_i
            u_bar = kern.apply(psi_bar[i])
            phi_bar = -u_bar * u[i] / phi[i]
            new_v_bar[i] = kern.apply(phi_bar)
        v_bar = new_v_bar

    if project_tangent:
        w_bar = w_bar - w_bar.mean()
    return w_bar
