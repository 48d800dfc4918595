"""Manufactured test problems with known optimal controls.

Both examples use the same state and adjoint on the unit square, ``T = 1``,
``nu = 1``, ``a0 = 1``, ``alpha2 = 0`` and homogeneous boundary data:

    y = e^t (-3 sin(2 pi x) sin(pi y) + 1.5 sin(pi x) sin(2 pi y))
    p = (T - t) sin(pi x) sin(pi y)

Example 1 restricts the control to spatially constant velocities, for
which ``u = (2 e^t (T - t), -e^t (T - t))``. Example 2 allows divergence
free velocity fields; its optimal control is the divergence-free
projection of ``p grad y`` and is only available numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import TwoLevelMesh, build_unit_square_mesh
from .pde import ProblemData, TimeGrid, zero_sampler
from .projection import ProjectionWorkspace, project

PI = np.pi
T_FINAL = 1.0


def _y0(x, y):
    return -3.0 * np.sin(2 * PI * x) * np.sin(PI * y) + 1.5 * np.sin(PI * x) * np.sin(2 * PI * y)


def exact_state(x, y, t):
    return np.exp(t) * _y0(x, y)


def exact_state_grad(x, y, t):
    e = np.exp(t)
    dx = -6 * PI * np.cos(2 * PI * x) * np.sin(PI * y) + 1.5 * PI * np.cos(PI * x) * np.sin(2 * PI * y)
    dy = -3 * PI * np.sin(2 * PI * x) * np.cos(PI * y) + 3 * PI * np.sin(PI * x) * np.cos(2 * PI * y)
    return e * dx, e * dy


def exact_state_dt(x, y, t):
    return exact_state(x, y, t)


def exact_state_laplacian(x, y, t):
    # both modes are Laplacian eigenfunctions with eigenvalue -5 pi^2
    return -5 * PI**2 * exact_state(x, y, t)


def exact_adjoint(x, y, t, T=T_FINAL):
    return (T - t) * np.sin(PI * x) * np.sin(PI * y)


def exact_adjoint_grad(x, y, t, T=T_FINAL):
    return (
        (T - t) * PI * np.cos(PI * x) * np.sin(PI * y),
        (T - t) * PI * np.sin(PI * x) * np.cos(PI * y),
    )


def exact_adjoint_dt(x, y, t):
    return -np.sin(PI * x) * np.sin(PI * y)


def exact_adjoint_laplacian(x, y, t, T=T_FINAL):
    return -2 * PI**2 * exact_adjoint(x, y, t, T)


def example1_control(t, T=T_FINAL):
    t = np.asarray(t, dtype=float)
    return np.stack([2 * np.exp(t) * (T - t), -np.exp(t) * (T - t)], axis=-1)


VelocitySampler = Callable[[np.ndarray, np.ndarray, float], tuple[np.ndarray, np.ndarray]]


def _data_for_control(u: VelocitySampler, alpha1: float) -> ProblemData:
    nu, a0 = 1.0, 1.0

    def f(x, y, t):
        u1, u2 = u(x, y, t)
        gx, gy = exact_state_grad(x, y, t)
        return (
            exact_state_dt(x, y, t)
            - nu * exact_state_laplacian(x, y, t)
            + u1 * gx
            + u2 * gy
            + a0 * exact_state(x, y, t)
        )

    def adjoint_residual(x, y, t):
        u1, u2 = u(x, y, t)
        px, py = exact_adjoint_grad(x, y, t)
        return (
            -exact_adjoint_dt(x, y, t)
            - nu * exact_adjoint_laplacian(x, y, t)
            - (u1 * px + u2 * py)
            + a0 * exact_adjoint(x, y, t)
        )

    def yd(x, y, t):
        return exact_state(x, y, t) - adjoint_residual(x, y, t) / alpha1

    return ProblemData(
        nu=nu,
        a0=a0,
        alpha1=alpha1,
        alpha2=0.0,
        phi=lambda x, y: exact_state(x, y, 0.0),
        f=f,
        g=zero_sampler,
        yd=yd,
        yT=None,
    )


@dataclass
class Manufactured:
    """Problem data plus the exact (or reference) solution."""

    example: int
    data: ProblemData
    state: Callable = exact_state
    adjoint: Callable = exact_adjoint
    # Example 1: control(t) -> (..., 2); Example 2: nodal table (N+1, 2, n_fine)
    control: Callable | None = None
    reference: np.ndarray | None = None
    reference_iterations: np.ndarray | None = field(default=None, repr=False)


def example1_data(alpha1: float = 1e6) -> Manufactured:
    def u(x, y, t):
        c = example1_control(t)
        return c[..., 0] + 0 * x, c[..., 1] + 0 * x

    return Manufactured(example=1, data=_data_for_control(u, alpha1), control=example1_control)


def reference_control(
    mesh: TwoLevelMesh, grid: TimeGrid, reference_level: int, tol1: float = 1e-8
) -> tuple[np.ndarray, np.ndarray]:
    """Divergence-free projection of ``p grad y`` on a finer nested mesh.

    Computed at the time levels of ``grid`` and restricted to the nodes of
    ``mesh``. Returns ``(table, inner_iterations)`` with ``table`` of shape
    ``(N + 1, 2, n_fine)``.
    """
    if reference_level < mesh.level:
        raise ValueError("reference level must not be coarser than the experiment level")
    ref = mesh if reference_level == mesh.level else build_unit_square_mesh(reference_level)
    ws = ProjectionWorkspace(ref, tol1=tol1)
    x, y = ref.fine_nodes[:, 0], ref.fine_nodes[:, 1]
    keep = ref.node_index(mesh.fine_nodes[:, 0], mesh.fine_nodes[:, 1])
    table = np.empty((grid.N + 1, 2, mesh.n_fine))
    iters = np.empty(grid.N + 1, dtype=np.int64)
    for n in range(grid.N + 1):
        t = grid.t(n)
        pv = exact_adjoint(x, y, t)
        gx, gy = exact_state_grad(x, y, t)
        field_ = np.vstack([pv * gx, pv * gy])
        g, _, iters[n] = project(field_, ws, as_load=False)
        table[n] = g[:, keep]
    return table, iters


def example2_data(
    mesh: TwoLevelMesh,
    grid: TimeGrid,
    alpha1: float = 1e6,
    reference_level: int | None = None,
    tol1: float = 1e-8,
) -> Manufactured:
    """Example 2 data on ``mesh``; the reference control lives on a finer mesh.

    ``reference_level`` defaults to ``mesh.level + 2`` capped at 8.
    """
    if reference_level is None:
        reference_level = max(mesh.level, min(mesh.level + 2, 8))
    table, iters = reference_control(mesh, grid, reference_level, tol1)
    n_cells = mesh.cells

    def u(x, y, t):
        k = int(round(t / grid.dt))
        if k < 0 or k > grid.N or abs(k * grid.dt - t) > 1e-12:
            raise ValueError(f"reference control not available at t={t}")
        idx = mesh.node_index(x, y)
        if np.any(np.abs(np.asarray(x) * n_cells - np.rint(np.asarray(x) * n_cells)) > 1e-9):
            raise ValueError("reference control sampled off the mesh nodes")
        return table[k, 0, idx], table[k, 1, idx]

    return Manufactured(
        example=2,
        data=_data_for_control(u, alpha1),
        reference=table,
        reference_iterations=iters,
    )


def error_norms(problem: Manufactured, disc, control: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """Control error, state error and relative misfit, all ``dt``-weighted."""
    grid, mesh = disc.grid, disc.mesh
    M = disc.ops.mass.matrix
    dt = grid.dt
    xs, ys = mesh.fine_nodes[:, 0], mesh.fine_nodes[:, 1]
    times = grid.times[1:]

    if control.ndim == 2:
        exact_u = problem.control(times)
        err_u = np.sqrt(dt * np.sum((control - exact_u) ** 2))
    else:
        diff = control - problem.reference[1:]
        n = mesh.n_fine
        d2 = diff.reshape(-1, n)
        err_u = np.sqrt(dt * np.sum(d2 * (M @ d2.T).T))

    ex = np.stack([problem.state(xs, ys, t) for t in times])
    e = y[1:] - ex
    err_y = np.sqrt(dt * np.sum(e * (M @ e.T).T))
    m = y[1:] - disc.yd[1:]
    yd = disc.yd[1:]
    misfit = np.sqrt(np.sum(m * (M @ m.T).T) / np.sum(yd * (M @ yd.T).T))
    return {"err_u": float(err_u), "err_y": float(err_y), "rel_misfit": float(misfit)}
