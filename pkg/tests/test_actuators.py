"""Actuator Gaussians: validation, interpolation, cell regions, file I/O."""

import math

import numpy as np
import pytest

from aquadesign.actuators import (HALF_MAX_RADIUS, ActuatorGaussian,
                                  actuator_region, interpolate_actuators,
                                  interpolate_covariance, interpolate_mean,
                                  load_actuators, rotation_matrix,
                                  save_actuators)
from aquadesign.grid import GridSpec, ShapeMask


def full_mask(dims, cell_size):
    g = GridSpec(dims=dims, cell_size=cell_size)
    return ShapeMask(g, np.ones(dims, dtype=bool))


# ---------------------------------------------------------------------------
# construction

def test_rotation_matrices_are_special_orthogonal(rng):
    for _ in range(10):
        r2 = rotation_matrix(rng.uniform(-4, 4, 1), 2)
        r3 = rotation_matrix(rng.uniform(-4, 4, 3), 3)
        for r in (r2, r3):
            assert np.allclose(r.T @ r, np.eye(len(r)), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_gaussian_rejects_bad_inputs():
    with pytest.raises(ValueError, match="category"):
        ActuatorGaussian("dorsal_fin", [0, 0], [0.0], [1.0, 0.5])
    with pytest.raises(ValueError, match="descending"):
        ActuatorGaussian("left_fin", [0, 0], [0.0], [0.5, 1.0])
    with pytest.raises(ValueError, match="positive"):
        ActuatorGaussian("left_fin", [0, 0], [0.0], [1.0, 0.0])
    with pytest.raises(ValueError, match="angle"):
        ActuatorGaussian("left_fin", [0, 0], [0.0, 0.0, 0.0], [1.0, 0.5])


def test_covariance_is_spd():
    g = ActuatorGaussian("caudal_fin", [0.5, -0.2, 0.1], [0.3, -1.1, 2.0],
                         [2.0, 1.0, 0.25])
    cov = g.covariance()
    assert np.allclose(cov, cov.T, atol=1e-12)
    assert np.linalg.eigvalsh(cov).min() > 0


# ---------------------------------------------------------------------------
# interpolation

def test_mean_one_hot_reproduces_base():
    mus = [[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]
    out = interpolate_mean(mus, [0.0, 1.0, 0.0])
    assert np.array_equal(out, [2.0, -1.0])


def test_mean_midpoint():
    out = interpolate_mean([[0.0, 0.0], [2.0, 0.0]], [0.5, 0.5])
    assert np.array_equal(out, [1.0, 0.0])


def test_covariance_identical_bases():
    angles, eigs = interpolate_covariance([[0.7], [0.7]], [[3.0, 1.0]] * 2,
                                          [0.5, 0.5])
    assert angles[0] == pytest.approx(0.7, abs=1e-12)
    assert np.allclose(eigs, [3.0, 1.0])


def test_covariance_angle_midpoint():
    angles, _ = interpolate_covariance([[0.0], [math.pi / 2]],
                                       [[1.0, 1.0]] * 2, [0.5, 0.5])
    assert angles[0] == pytest.approx(math.pi / 4, abs=1e-12)


def test_covariance_eigenvalue_mean():
    _, eigs = interpolate_covariance([[0.0], [0.0]], [[4.0, 1.0], [2.0, 3.0]],
                                     [0.5, 0.5])
    assert np.allclose(eigs, [3.0, 2.0])


def test_covariance_angles_avoid_branch_cut():
    # -3 rad and +3 rad sit on either side of pi; the blend must land near
    # pi, not swing the long way through zero
    angles, _ = interpolate_covariance([[-3.0], [3.0]], [[1.0, 1.0]] * 2,
                                       [0.5, 0.5])
    wrapped = math.atan2(math.sin(angles[0]), math.cos(angles[0]))
    assert abs(abs(wrapped) - math.pi) < 1e-9


def left(mu, angle, eigs):
    return ActuatorGaussian("left_fin", mu, [angle], eigs)


def test_one_hot_weights_reproduce_base_actuators():
    per_base = [
        [left([0.0, 0.2], 0.3, [2.0, 0.5]),
         ActuatorGaussian("caudal_fin", [1.0, 0.0], [0.0], [1.0, 1.0])],
        [left([0.5, -0.1], -1.2, [1.0, 0.4])],
    ]
    out = interpolate_actuators(per_base, [1.0, 0.0])
    assert len(out) == 2
    by_cat = {g.category: g for g in out}
    for g in per_base[0]:
        got = by_cat[g.category]
        assert np.allclose(got.mu, g.mu, atol=1e-12)
        assert np.allclose(got.axes(), g.axes(), atol=1e-12)
        assert np.allclose(got.eigenvalues, g.eigenvalues, atol=1e-12)


def test_absent_category_renormalizes_weights():
    per_base = [
        [ActuatorGaussian("caudal_fin", [1.0, 0.0], [0.0], [1.0, 1.0])],
        [left([0.5, -0.1], -1.2, [1.0, 0.4])],
    ]
    out = interpolate_actuators(per_base, [0.5, 0.5])
    by_cat = {g.category: g for g in out}
    # each category is backed by a single base, so the halved weight
    # renormalizes to 1 and the base comes through unchanged
    assert np.allclose(by_cat["left_fin"].mu, [0.5, -0.1])
    assert np.allclose(by_cat["caudal_fin"].mu, [1.0, 0.0])


def test_category_without_weight_is_dropped():
    per_base = [
        [left([0.0, 0.0], 0.0, [1.0, 0.5])],
        [ActuatorGaussian("caudal_fin", [1.0, 0.0], [0.0], [1.0, 1.0])],
    ]
    out = interpolate_actuators(per_base, [0.0, 1.0])
    assert [g.category for g in out] == ["caudal_fin"]


def test_categories_come_out_in_fixed_order(rng):
    per_base = [[
        ActuatorGaussian("caudal_fin", [1.0, 0.0], [0.0], [1.0, 1.0]),
        ActuatorGaussian("right_fin", [0.0, -0.5], [0.1], [1.0, 0.5]),
        left([0.0, 0.5], 0.1, [1.0, 0.5]),
    ]] * 2
    out = interpolate_actuators(per_base, rng.dirichlet((1, 1)))
    assert [g.category for g in out] == ["left_fin", "right_fin", "caudal_fin"]


def test_interpolated_covariance_stays_spd(rng):
    per_base = [
        [left([0.0, 0.0], 0.3, [2.0, 0.5])],
        [left([1.0, 0.5], 2.8, [0.9, 0.2])],
        [left([-0.5, 0.2], -2.9, [3.0, 1.5])],
    ]
    for _ in range(20):
        w = rng.dirichlet((1.0, 1.0, 1.0))
        (g,) = interpolate_actuators(per_base, w)
        assert np.linalg.eigvalsh(g.covariance()).min() > 0


# ---------------------------------------------------------------------------
# actuator_region

def test_isotropic_region_is_centered_box():
    mask = full_mask((16, 16), 0.125)
    sigma2 = 0.09  # sigma = 0.3
    g = ActuatorGaussian("left_fin", [0.0, 0.0], [0.0], [sigma2, sigma2])
    reg = actuator_region(g, mask)
    half = HALF_MAX_RADIUS * math.sqrt(sigma2)
    centers = mask.grid.cell_centers().reshape(-1, 2)
    oracle = np.nonzero(np.all(np.abs(centers) <= half, axis=1))[0]
    assert np.array_equal(np.sort(reg.cells), oracle)
    assert np.array_equal(reg.fiber, [1.0, 0.0])
    assert np.all(reg.signs == 1.0)


def test_region_outside_shape_is_reported_empty():
    g = GridSpec(dims=(8, 8), cell_size=0.125)
    inside = np.zeros((8, 8), dtype=bool)
    inside[:2, :] = True       # body hugs the -x edge
    mask = ShapeMask(g, inside)
    gauss = ActuatorGaussian("left_fin", [0.4, 0.4], [0.0], [1e-4, 1e-4])
    with pytest.warns(RuntimeWarning, match="empty"):
        reg = actuator_region(gauss, mask)
    assert reg.n_cells == 0


def test_rotated_region_matches_brute_force():
    g = GridSpec(dims=(20, 14), cell_size=0.1)
    inside = np.zeros((20, 14), dtype=bool)
    inside[3:17, 2:12] = True
    inside[5, 5] = False       # notch to make the clip nontrivial
    inside[9:11, 3] = False
    mask = ShapeMask(g, inside)
    gauss = ActuatorGaussian("caudal_fin", [0.15, -0.05], [math.pi / 4],
                             [0.08, 0.02])
    reg = actuator_region(gauss, mask)

    axes = gauss.axes()
    centers = g.cell_centers().reshape(-1, 2)
    want = []
    for idx, x in enumerate(centers):
        ok = mask.inside.ravel()[idx]
        for k in range(2):
            proj = abs(np.dot(axes[:, k], x - gauss.mu))
            ok = ok and proj <= math.sqrt(2 * math.log(2) * gauss.eigenvalues[k])
        if ok:
            want.append(idx)
    assert np.array_equal(np.sort(reg.cells), np.array(want))
    assert reg.n_cells > 0


def test_region_grows_with_shape():
    g = GridSpec(dims=(12, 12), cell_size=0.1)
    small = np.zeros((12, 12), dtype=bool)
    small[4:8, 4:8] = True
    big = small.copy()
    big[2:10, 2:10] = True
    gauss = ActuatorGaussian("left_fin", [0.0, 0.0], [0.4], [0.05, 0.02])
    reg_small = actuator_region(gauss, ShapeMask(g, small))
    reg_big = actuator_region(gauss, ShapeMask(g, big))
    assert set(reg_small.cells) <= set(reg_big.cells)


def test_caudal_split_mirrors_for_symmetric_region():
    mask = full_mask((6, 6), 0.25)
    gauss = ActuatorGaussian("caudal_fin", [0.0, 0.0], [0.0], [0.2, 0.2])
    reg = actuator_region(gauss, mask)
    assert set(np.unique(reg.signs)) == {-1.0, 1.0}
    ny = 6
    ij = np.stack(np.unravel_index(reg.cells, (6, 6)), axis=1)
    plus = {(i, j) for (i, j), s in zip(map(tuple, ij), reg.signs) if s > 0}
    minus = {(i, j) for (i, j), s in zip(map(tuple, ij), reg.signs) if s < 0}
    assert {(i, ny - 1 - j) for i, j in plus} == minus


def test_fiber_is_resigned_to_nonnegative_x():
    mask = full_mask((8, 8), 0.125)
    # leading axis at 3 rad points into -x; the fiber must be flipped
    gauss = ActuatorGaussian("left_fin", [0.0, 0.0], [3.0], [0.1, 0.05])
    reg = actuator_region(gauss, mask)
    assert reg.fiber[0] > 0
    assert np.linalg.norm(reg.fiber) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.abs(reg.fiber),
                       np.abs([math.cos(3.0), math.sin(3.0)]), atol=1e-12)


def test_region_rejects_dimension_mismatch():
    mask = full_mask((6, 6), 0.25)
    gauss = ActuatorGaussian("left_fin", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0],
                             [1.0, 1.0, 1.0])
    with pytest.raises(ValueError, match="dimensionality"):
        actuator_region(gauss, mask)


# ---------------------------------------------------------------------------
# file I/O

def test_actuator_file_round_trip(tmp_path):
    acts = [
        left([0.125, -0.375], 0.7853981633974483, [0.04, 0.01]),
        ActuatorGaussian("caudal_fin", [0.875, 0.0], [0.0], [0.02, 0.02]),
    ]
    path = tmp_path / "acts.txt"
    save_actuators(path, acts)
    back = load_actuators(path, ndim=2)
    assert len(back) == 2
    for a, b in zip(acts, back):
        assert b.category == a.category
        assert np.array_equal(b.mu, a.mu)
        assert np.array_equal(b.angles, a.angles)
        assert np.array_equal(b.eigenvalues, a.eigenvalues)


def test_load_reports_malformed_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("left_fin 0.0 0.0 0.0 1.0\n")  # one eigenvalue missing
    with pytest.raises(ValueError, match=r"bad\.txt:1"):
        load_actuators(path, ndim=2)
