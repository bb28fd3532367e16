"""Facet hydrodynamics: coefficient tables, force laws, and the VJP."""

import math

import numpy as np
import pytest

from aquadesign.grid import (GridSpec, ShapeMask, SurfaceQuadSet,
                             extract_surface)
from aquadesign.hydro import (CoefficientTable, default_drag_table,
                              default_thrust_table, hydro_forces, hydro_vjp,
                              make_hydro_params)
from aquadesign.mesh import build_mesh

HALF_PI = math.pi / 2


def single_facet():
    """One unit edge with outward normal (0, 1), plus two spine nodes."""
    grid = GridSpec(dims=(2, 2), cell_size=1.0)
    q = np.array([[1.0, 0.0], [0.0, 0.0],      # facet corners
                  [-2.0, -1.0], [2.0, -1.0]])  # tail, head
    surface = SurfaceQuadSet(grid=grid, node_ids=np.array([[0, 1]]),
                             normals=np.array([[0.0, 1.0]]),
                             areas=np.array([1.0]),
                             inside_cells=np.array([0]))
    return q, surface


def body_setup():
    grid = GridSpec(dims=(8, 6), cell_size=0.25)
    inside = np.zeros((8, 6), dtype=bool)
    inside[2:6, 2:4] = True
    mask = ShapeMask(grid, inside)
    surface = extract_surface(mask)
    mesh = build_mesh(grid)
    head = int(np.argmax(mesh.nodes[:, 0] - 10 * np.abs(mesh.nodes[:, 1])))
    tail = int(np.argmax(-mesh.nodes[:, 0] - 10 * np.abs(mesh.nodes[:, 1])))
    return mesh, surface, head, tail


# ---------------------------------------------------------------------------
# coefficient tables

def test_table_interpolates_linearly():
    table = CoefficientTable([-HALF_PI, 0.0, HALF_PI], [0.0, 1.0, 0.0])
    assert table(0.0) == 1.0
    assert table(HALF_PI / 2) == pytest.approx(0.5, abs=1e-15)
    assert table.slope(-HALF_PI / 2) == pytest.approx(2 / math.pi)
    assert table.slope(HALF_PI / 2) == pytest.approx(-2 / math.pi)


def test_table_validation():
    with pytest.raises(ValueError, match="cover"):
        CoefficientTable([0.0, HALF_PI], [1.0, 1.0])
    with pytest.raises(ValueError, match="increasing"):
        CoefficientTable([-HALF_PI, -HALF_PI, HALF_PI], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError, match="nonnegative"):
        CoefficientTable([-HALF_PI, HALF_PI], [1.0, -0.1])


def test_default_tables_cover_range():
    for table in (default_drag_table(), default_thrust_table()):
        assert np.all(table.values >= 0)
        assert table(HALF_PI) >= 0
    assert default_thrust_table()(0.0) == 0.0   # one-sided thrust
    assert default_drag_table()(0.0) == 1.0


def test_params_reject_degenerate_spine():
    with pytest.raises(ValueError, match="differ"):
        make_hydro_params(1000.0, [0.0, 0.0], head=3, tail=3)


# ---------------------------------------------------------------------------
# force laws

def test_unit_drag_contract():
    # n=(0,1), v_rel=(1,0), A=1, rho=1, C_d(0)=1 -> drag (0.5, 0), split
    # equally between the two corners
    q, surface = single_facet()
    v = np.zeros_like(q)
    params = make_hydro_params(
        1.0, [1.0, 0.0], head=3, tail=2,
        drag=CoefficientTable([-HALF_PI, HALF_PI], [1.0, 1.0]),
        thrust=CoefficientTable([-HALF_PI, HALF_PI], [0.0, 0.0]))
    f, mean_drag, mean_thrust, tape = hydro_forces(q, v, surface, params)
    assert np.abs(tape.fdrag[0] - [0.5, 0.0]).max() <= 1e-12
    assert np.abs(f[0] - [0.25, 0.0]).max() <= 1e-12
    assert np.abs(f[1] - [0.25, 0.0]).max() <= 1e-12
    assert np.abs(mean_drag - [0.5, 0.0]).max() <= 1e-12
    assert np.all(mean_thrust == 0.0)


def test_matching_flow_produces_no_force():
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(1000.0, [0.3, -0.1], head, tail)
    v = np.tile(params.v_water, (mesh.n_nodes, 1))
    f, mean_drag, mean_thrust, _ = hydro_forces(mesh.nodes, v, surface, params)
    assert np.all(f == 0.0)
    assert np.all(mean_drag == 0.0) and np.all(mean_thrust == 0.0)


def test_coasting_along_spine_gives_zero_thrust():
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(1000.0, [0.0, 0.0], head, tail)
    shat = mesh.nodes[head] - mesh.nodes[tail]
    shat = shat / np.linalg.norm(shat)
    v = np.tile(0.7 * shat, (mesh.n_nodes, 1))
    f, _, mean_thrust, tape = hydro_forces(mesh.nodes, v, surface, params)
    assert np.all(tape.fthrust == 0.0)
    assert np.all(mean_thrust == 0.0)
    assert np.abs(tape.fdrag).max() > 0      # drag still resists the motion


def test_drag_is_parallel_to_relative_flow(rng):
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(1000.0, [0.1, 0.05], head, tail)
    q = mesh.nodes + 0.01 * rng.normal(size=mesh.nodes.shape)
    v = 0.5 * rng.normal(size=mesh.nodes.shape)
    _, _, _, tape = hydro_forces(q, v, surface, params)
    cross = (tape.fdrag[:, 0] * tape.vrel[:, 1]
             - tape.fdrag[:, 1] * tape.vrel[:, 0])
    scale = np.linalg.norm(tape.fdrag, axis=1) * np.linalg.norm(tape.vrel, axis=1)
    assert np.abs(cross).max() <= 1e-14 * max(scale.max(), 1e-30)


def test_thrust_pushes_against_outward_normal(rng):
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(1000.0, [0.0, 0.0], head, tail)
    for _ in range(5):
        q = mesh.nodes + 0.01 * rng.normal(size=mesh.nodes.shape)
        v = rng.normal(size=mesh.nodes.shape)
        _, _, _, tape = hydro_forces(q, v, surface, params)
        dots = np.einsum("fd,fd->f", tape.fthrust, tape.nhat)
        assert np.all(dots <= 1e-15)


def test_still_facet_is_a_removable_singularity():
    # facets moving exactly with the water emit zero force and, crucially,
    # zero gradient instead of NaNs from the normalization
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(1000.0, [0.25, 0.0], head, tail)
    v = np.tile(params.v_water, (mesh.n_nodes, 1))
    f, _, _, tape = hydro_forces(mesh.nodes, v, surface, params)
    assert not tape.live.any()
    q_bar, v_bar = hydro_vjp(tape, np.ones_like(f),
                             np.ones(2), np.ones(2))
    assert np.all(np.isfinite(q_bar)) and np.all(np.isfinite(v_bar))
    assert np.all(q_bar == 0.0) and np.all(v_bar == 0.0)


def test_normals_follow_the_deformed_body():
    q, surface = single_facet()
    params = make_hydro_params(
        1.0, [0.0, 1.0], head=3, tail=2,
        drag=CoefficientTable([-HALF_PI, HALF_PI], [1.0, 1.0]),
        thrust=CoefficientTable([-HALF_PI, HALF_PI], [0.0, 0.0]))
    # rotate the edge 90 degrees counterclockwise about its second corner;
    # the live normal must rotate with it even though the rest-state normal
    # stays (0, 1)
    q_rot = q.copy()
    q_rot[0] = [0.0, 1.0]
    _, _, _, tape = hydro_forces(q_rot, np.zeros_like(q), surface, params)
    assert np.allclose(tape.nhat[0], [-1.0, 0.0], atol=1e-12)


# ---------------------------------------------------------------------------
# adjoint

def test_hydro_vjp_matches_finite_differences(rng):
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(800.0, [0.2, -0.1], head, tail)
    q0 = mesh.nodes + 0.013 * rng.normal(size=mesh.nodes.shape)
    v0 = 0.4 * rng.normal(size=mesh.nodes.shape)
    f_bar = rng.normal(size=q0.shape)
    md_bar = rng.normal(size=2)
    mt_bar = rng.normal(size=2)

    def value(q, v):
        f, md, mt, _ = hydro_forces(q, v, surface, params)
        return float((f * f_bar).sum() + md @ md_bar + mt @ mt_bar)

    _, _, _, tape = hydro_forces(q0, v0, surface, params)
    q_bar, v_bar = hydro_vjp(tape, f_bar, md_bar, mt_bar)

    eps = 1e-6
    for arr, grad, which in ((q0, q_bar, "q"), (v0, v_bar, "v")):
        t = rng.normal(size=arr.shape)
        hi = value(q0 + eps * t, v0) if which == "q" else value(q0, v0 + eps * t)
        lo = value(q0 - eps * t, v0) if which == "q" else value(q0, v0 - eps * t)
        fd = (hi - lo) / (2 * eps)
        an = float((grad * t).sum())
        assert an == pytest.approx(fd, rel=1e-5), which


def test_hydro_vjp_zero_upstream(rng):
    mesh, surface, head, tail = body_setup()
    params = make_hydro_params(1000.0, [0.1, 0.0], head, tail)
    v = 0.3 * rng.normal(size=mesh.nodes.shape)
    f, _, _, tape = hydro_forces(mesh.nodes, v, surface, params)
    q_bar, v_bar = hydro_vjp(tape, np.zeros_like(f))
    assert np.all(q_bar == 0.0) and np.all(v_bar == 0.0)
