"""Entropic transport: heat kernel, Sinkhorn cost, barycenters, and the
weight gradient."""

import numpy as np
import pytest

from aquadesign.grid import DensityField, GridSpec, extract_shape
from aquadesign.transport import (BarycenterProblem, barycenter,
                                  barycenter_vjp, default_epsilon,
                                  heat_convolution, replay_barycenter,
                                  sinkhorn_distance, validate_weights)

from conftest import blob, dirac


# ---------------------------------------------------------------------------
# heat_convolution

def test_blur_delta_is_symmetric():
    g = GridSpec(dims=(17, 17), cell_size=0.1)
    vals = np.zeros((17, 17))
    vals[8, 8] = 1.0
    out = heat_convolution(g, vals, epsilon=0.04)
    assert np.allclose(out, out[::-1, :], atol=1e-12)
    assert np.allclose(out, out[:, ::-1], atol=1e-12)
    assert np.allclose(out, out.T, atol=1e-12)


def test_blur_fixes_uniform():
    g = GridSpec(dims=(9, 7), cell_size=0.2)
    vals = np.full((9, 7), 1.0 / 63)
    out = heat_convolution(g, vals, epsilon=0.1)
    assert np.allclose(out, vals, atol=1e-9)


def test_blur_superposition():
    g = GridSpec(dims=(21, 21), cell_size=0.1)
    a = np.zeros((21, 21)); a[4, 5] = 1.0
    b = np.zeros((21, 21)); b[16, 14] = 1.0
    eps = 0.02
    both = heat_convolution(g, a + b, eps)
    assert np.allclose(both, heat_convolution(g, a, eps) + heat_convolution(g, b, eps),
                       atol=1e-12)


def test_blur_preserves_mass_and_positivity(rng):
    g = GridSpec(dims=(12, 8), cell_size=0.15)
    vals = rng.random((12, 8))
    vals[vals < 0.7] = 0.0
    vals[3, 3] = 1.0
    out = heat_convolution(g, vals, epsilon=0.05)
    assert abs(out.sum() - vals.sum()) < 1e-9
    assert np.all(out > 0)


def test_blur_rejects_bad_epsilon():
    g = GridSpec(dims=(4, 4), cell_size=0.25)
    with pytest.raises(ValueError):
        heat_convolution(g, np.ones((4, 4)), 0.0)


# ---------------------------------------------------------------------------
# sinkhorn_distance

def test_self_distance_is_the_minimum():
    g = GridSpec(dims=(16, 16), cell_size=0.1)
    p = blob(g, (0.0, 0.0), 0.2)
    eps = default_epsilon(g)
    d_self, _ = sinkhorn_distance(p, p, eps)
    for center in [(0.3, 0.0), (-0.2, 0.4), (0.5, 0.5)]:
        d_other, _ = sinkhorn_distance(p, blob(g, center, 0.2), eps)
        assert d_other > d_self


def test_two_deltas_cost_squared_distance():
    # between unit Diracs the only feasible coupling is the singleton, so the
    # entropy terms of the three transport problems cancel in the debiased
    # cost and the value equals the squared distance for any epsilon
    g = GridSpec(dims=(32, 8), cell_size=0.125)
    p = dirac(g, (8, 4))
    q = dirac(g, (24, 4))
    L = 16 * 0.125
    for eps in (0.25, 0.0625, 0.015625):
        val, _ = sinkhorn_distance(p, q, eps, max_iters=2000, tol=1e-12)
        assert val == pytest.approx(L * L, abs=1e-6)


def test_two_cell_lp_oracle():
    # 1D-style two-cell problem: moving 0.5 of the mass one cell over is the
    # only feasible plan, so the exact cost is 0.5 * cell_size^2
    g = GridSpec(dims=(2, 2), cell_size=0.5)
    p = DensityField(g, np.array([[0.25, 0.25], [0.25, 0.25]]))
    q = DensityField(g, np.array([[0.5, 0.5], [0.0, 0.0]]))
    exact = 0.5 * 0.5 ** 2
    val, _ = sinkhorn_distance(p, q, epsilon=0.01, max_iters=5000, tol=1e-14)
    assert val == pytest.approx(exact, rel=0.15)


def test_sinkhorn_is_symmetric():
    g = GridSpec(dims=(12, 12), cell_size=0.1)
    p = blob(g, (-0.2, 0.1), 0.15)
    q = blob(g, (0.3, -0.2), 0.2)
    a, _ = sinkhorn_distance(p, q)
    b, _ = sinkhorn_distance(q, p)
    assert a == pytest.approx(b, abs=1e-6)


def test_sinkhorn_warns_on_iteration_cap():
    g = GridSpec(dims=(16, 16), cell_size=0.1)
    p = blob(g, (-0.4, 0.0), 0.1)
    q = blob(g, (0.4, 0.0), 0.1)
    with pytest.warns(RuntimeWarning):
        val, tape = sinkhorn_distance(p, q, epsilon=0.001, max_iters=2,
                                      tol=1e-14)
    assert np.isfinite(val)


# ---------------------------------------------------------------------------
# barycenter

def two_blob_problem(sep=0.4):
    g = GridSpec(dims=(20, 12), cell_size=0.1)
    return BarycenterProblem([blob(g, (-sep, 0.0), 0.15),
                              blob(g, (sep, 0.0), 0.15)])


def test_one_hot_recovers_base_exactly():
    prob = two_blob_problem()
    for i in range(2):
        w = np.zeros(2); w[i] = 1.0
        out, tape = barycenter(prob, w)
        assert np.abs(out.values - prob.bases[i].values).sum() <= 1e-3
        assert tape.vertex is not None


def test_identical_bases_fixed_point():
    g = GridSpec(dims=(14, 14), cell_size=0.1)
    base = blob(g, (0.1, -0.1), 0.2)
    prob = BarycenterProblem([base, DensityField(g, base.values.copy())])
    out, _ = barycenter(prob, [0.5, 0.5])
    # interior weights run the full fixed-point iteration, which carries a
    # little entropic blur; only one-hot weights reproduce a base exactly
    assert np.abs(out.values - base.values).sum() < 1e-2


def test_dirac_displacement_interpolation():
    g = GridSpec(dims=(24, 8), cell_size=0.125)
    i0, i1 = (4, 4), (20, 4)
    prob = BarycenterProblem([dirac(g, i0), dirac(g, i1)])
    centers = g.cell_centers()
    x0, x1 = centers[i0], centers[i1]
    for t in (0.25, 0.5, 0.75):
        out, _ = barycenter(prob, [1 - t, t])
        mode = np.unravel_index(np.argmax(out.values), g.dims)
        target = (1 - t) * x0 + t * x1
        assert np.all(np.abs(centers[mode] - target) <= g.cell_size + 1e-12)


def test_barycenter_mass_and_validity(rng):
    prob = two_blob_problem()
    for _ in range(5):
        w = rng.dirichlet((1.0, 1.0))
        out, _ = barycenter(prob, w)
        assert abs(out.values.sum() - 1.0) < 1e-9
        assert np.all(out.values >= 0)


def test_barycenter_permutation_equivariance():
    prob = two_blob_problem()
    w = np.array([0.3, 0.7])
    out, _ = barycenter(prob, w)
    flipped = BarycenterProblem(prob.bases[::-1], epsilon=prob.epsilon)
    out2, _ = barycenter(flipped, w[::-1])
    assert np.array_equal(out.values, out2.values)


def test_barycenter_centroid_moves_monotonically():
    prob = two_blob_problem()
    g = prob.grid
    centers = g.cell_centers()
    xs = []
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out, _ = barycenter(prob, [1 - t, t])
        mask = extract_shape(out).inside
        xs.append(centers[mask][:, 0].mean())
    assert np.all(np.diff(xs) > 0)


def test_replay_reproduces_barycenter_bit_exactly():
    prob = two_blob_problem()
    out, tape = barycenter(prob, [0.4, 0.6])
    assert np.array_equal(replay_barycenter(tape), out.values)


def test_validate_weights_rejects_bad_vectors():
    with pytest.raises(ValueError):
        validate_weights([0.5, 0.6], 2)       # sums over 1
    with pytest.raises(ValueError):
        validate_weights([-0.1, 1.1], 2)      # negative entry
    with pytest.raises(ValueError):
        validate_weights([1.0], 2)            # wrong length


# ---------------------------------------------------------------------------
# barycenter_vjp

def test_vjp_zero_upstream():
    prob = two_blob_problem()
    _, tape = barycenter(prob, [0.5, 0.5])
    g = barycenter_vjp(tape, np.zeros(prob.grid.dims))
    assert np.all(g == 0)


def test_vjp_matches_finite_differences(rng):
    prob = two_blob_problem()
    w = np.array([0.35, 0.65])
    out, tape = barycenter(prob, w)
    upstream = rng.normal(size=prob.grid.dims)

    def value(wv):
        o, _ = barycenter(prob, wv)
        return float((o.values * upstream).sum())

    grad = barycenter_vjp(tape, upstream)
    delta = 1e-4
    t = np.array([1.0, -1.0])  # simplex tangent e_0 - e_1
    fd = (value(w + delta * t) - value(w - delta * t)) / (2 * delta)
    an = float(grad @ t)
    assert an == pytest.approx(fd, rel=1e-3)


def test_vjp_mirror_symmetry():
    g = GridSpec(dims=(20, 10), cell_size=0.1)
    left = blob(g, (-0.4, 0.0), 0.15)
    right = DensityField(g, left.values[::-1, :].copy())
    prob = BarycenterProblem([left, right])
    out, tape = barycenter(prob, [0.5, 0.5])
    upstream = out.values + out.values[::-1, :]   # symmetric cotangent
    grad = barycenter_vjp(tape, upstream)
    assert grad[0] == pytest.approx(grad[1], abs=1e-9)


def test_vjp_rejects_wrong_grid():
    prob = two_blob_problem()
    _, tape = barycenter(prob, [0.5, 0.5])
    with pytest.raises(ValueError):
        barycenter_vjp(tape, np.zeros((3, 3)))
