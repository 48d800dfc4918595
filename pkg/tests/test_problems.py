import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilinear_cg.mesh import build_unit_square_mesh
from bilinear_cg.pde import Discretization, TimeGrid
from bilinear_cg.problems import (
    example1_control,
    example1_data,
    example2_data,
    error_norms,
    exact_adjoint,
    exact_adjoint_grad,
    exact_state,
    exact_state_grad,
    exact_state_laplacian,
    reference_control,
)

unit = st.floats(min_value=0.0, max_value=1.0)


def test_control_values():
    assert np.allclose(example1_control(0.0), [2.0, -1.0])
    assert np.allclose(example1_control(1.0), [0.0, 0.0])
    assert example1_control(np.linspace(0, 1, 5)).shape == (5, 2)


def test_terminal_adjoint_and_boundary_values():
    x = np.linspace(0, 1, 7)
    assert not exact_adjoint(x, 0.3, 1.0).any()
    assert exact_state(0.5, 0.5, 0.0) == pytest.approx(0.0, abs=1e-14)
    for b in (0.0, 1.0):
        assert np.abs(exact_state(x, b, 0.4)).max() < 1e-13
        assert np.abs(exact_state(b, x, 0.4)).max() < 1e-13


@given(unit, unit, unit)
@settings(max_examples=30, deadline=None)
def test_state_derivatives_match_differences(x, y, t):
    e = 1e-5
    gx, gy = exact_state_grad(x, y, t)
    assert gx == pytest.approx((exact_state(x + e, y, t) - exact_state(x - e, y, t)) / (2 * e), abs=1e-6)
    assert gy == pytest.approx((exact_state(x, y + e, t) - exact_state(x, y - e, t)) / (2 * e), abs=1e-6)
    e = 1e-3
    lap = (
        exact_state(x + e, y, t) + exact_state(x - e, y, t) + exact_state(x, y + e, t)
        + exact_state(x, y - e, t) - 4 * exact_state(x, y, t)
    ) / e**2
    assert exact_state_laplacian(x, y, t) == pytest.approx(lap, rel=1e-5, abs=1e-3)


def test_example1_control_is_mean_of_p_grad_y():
    # u(t) = integral over the square of p grad y
    n = 400
    s = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(s, s)
    for t in (0.0, 0.3, 0.8):
        gx, gy = exact_state_grad(X, Y, t)
        p = exact_adjoint(X, Y, t)
        mean = np.array([np.mean(p * gx), np.mean(p * gy)])
        assert np.allclose(mean, example1_control(t), atol=1e-4)


@given(unit, unit, st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=30, deadline=None)
def test_tracking_target_reproduces_adjoint_equation(x, y, t):
    alpha1 = 1e6
    d = example1_data(alpha1).data
    u1, u2 = example1_control(t)
    ax, ay = exact_adjoint_grad(x, y, t)
    p = exact_adjoint(x, y, t)
    # -p_t - lap p - u.grad p + p = alpha1 (y - y_d)
    residual = np.sin(np.pi * x) * np.sin(np.pi * y) + 2 * np.pi**2 * p - (u1 * ax + u2 * ay) + p
    # y - y_d is O(1/alpha1), so scaling back up loses about 1e-16 * alpha1 * |y|
    assert alpha1 * (exact_state(x, y, t) - d.yd(x, y, t)) == pytest.approx(residual, abs=1e-8)


@given(unit, unit, unit)
@settings(max_examples=30, deadline=None)
def test_source_reproduces_state_equation(x, y, t):
    d = example1_data(1e6).data
    u1, u2 = example1_control(t)
    gx, gy = exact_state_grad(x, y, t)
    yv = exact_state(x, y, t)
    expected = yv + 5 * np.pi**2 * yv + u1 * gx + u2 * gy + yv
    assert d.f(x, y, t) == pytest.approx(expected, abs=1e-9)


def test_example1_data_constants():
    d = example1_data(1e4).data
    assert (d.nu, d.a0, d.alpha1, d.alpha2) == (1.0, 1.0, 1e4, 0.0)


@pytest.fixture(scope="module")
def reference4():
    mesh = build_unit_square_mesh(3)
    grid = TimeGrid(1.0, 4)
    table, iters = reference_control(mesh, grid, 4, tol1=1e-12)
    return mesh, grid, table, iters


def test_reference_control_shape_and_final_time(reference4):
    mesh, grid, table, iters = reference4
    assert table.shape == (grid.N + 1, 2, mesh.n_fine)
    assert not table[-1].any()
    assert iters[-1] == 0 and iters[:-1].min() >= 1


def test_reference_control_is_projection_of_p_grad_y(reference4):
    mesh, grid, table, _ = reference4
    x, y = mesh.fine_nodes.T
    t = grid.t(1)
    gx, gy = exact_state_grad(x, y, t)
    p = exact_adjoint(x, y, t)
    raw = np.stack([p * gx, p * gy])
    # the projection removes a sizable gradient component
    assert np.abs(table[1] - raw).max() > 0.1 * np.abs(raw).max()


def test_reference_level_checked():
    with pytest.raises(ValueError):
        reference_control(build_unit_square_mesh(4), TimeGrid(1.0, 2), 3)


def test_example2_sampler_rejects_off_grid_times():
    mesh = build_unit_square_mesh(2)
    grid = TimeGrid(1.0, 4)
    pb = example2_data(mesh, grid, reference_level=3)
    x, y = mesh.fine_nodes.T
    pb.data.f(x, y, 0.25)
    with pytest.raises(ValueError):
        pb.data.f(x, y, 0.3)
    with pytest.raises(ValueError):
        pb.data.f(np.array([0.1]), np.array([0.1]), 0.25)


def test_error_norms_vanish_for_exact_input():
    pb = example1_data(1e6)
    mesh = build_unit_square_mesh(3)
    grid = TimeGrid(1.0, 8)
    disc = Discretization(pb.data, mesh, grid)
    x, y = mesh.fine_nodes.T
    exact_y = np.stack([exact_state(x, y, t) for t in grid.times])
    err = error_norms(pb, disc, example1_control(grid.times[1:]), exact_y)
    assert err["err_u"] == 0.0 and err["err_y"] == 0.0
    assert 0 < err["rel_misfit"] < 1e-4


def test_error_norms_weighting():
    pb = example1_data(1e6)
    mesh = build_unit_square_mesh(3)
    grid = TimeGrid(1.0, 8)
    disc = Discretization(pb.data, mesh, grid)
    u = example1_control(grid.times[1:]) + 1.0
    y = disc.state(u)
    # a unit shift in both components gives sqrt(dt * N * 2)
    assert error_norms(pb, disc, u, y)["err_u"] == pytest.approx(np.sqrt(2.0), rel=1e-14)
