"""Self-checks on small meshes: oracles, duality and finite differences.

Each check returns the measured residual next to its threshold, so the
command line can print one line per check and fail on any miss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import build_unit_square_mesh
from .optimizer import ControlSpace, compute_gradient, evaluate_objective
from .pde import Discretization, ProblemData, TimeGrid, zero_sampler
from .problems import exact_state
from .projection import ProjectionWorkspace, dense_saddle_oracle, project


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value)) and self.value <= self.threshold

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<44s} {self.value:.3e}  (<= {self.threshold:.0e})"


def m_norm(ws: ProjectionWorkspace, field: np.ndarray) -> float:
    return math.sqrt(ws.m_inner(field, field))


def random_discretization(
    level: int, N: int, rng: np.random.Generator, *, alpha1: float = 1.0, alpha2: float = 0.5, T: float = 1.0
) -> Discretization:
    """Discretization whose data (initial value, source, targets) are random nodal fields."""
    data = ProblemData(
        nu=1.0, a0=1.0, alpha1=alpha1, alpha2=alpha2,
        phi=zero_sampler, f=zero_sampler, g=zero_sampler, yd=zero_sampler,
    )
    disc = Discretization(data, build_unit_square_mesh(level), TimeGrid(T, N))
    n = disc.mesh.n_fine
    interior = disc.ops.interior
    disc.phi = np.zeros(n)
    disc.phi[interior] = rng.standard_normal(len(interior))
    disc.f = rng.standard_normal((N + 1, n))
    disc.Mf = (disc.ops.mass.matrix @ disc.f.T).T
    disc.yd = rng.standard_normal((N + 1, n))
    disc.yT = rng.standard_normal(n)
    return disc


def random_control(space: ControlSpace, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random admissible control; field mode slices are projected."""
    raw = scale * rng.standard_normal(space.shape)
    if space.mode == "finite_dim":
        return raw
    return np.stack([project(v, space.ws, as_load=False)[0] for v in raw])


def check_oracle(seed: int = 0, level: int = 3, tol1: float = 1e-16) -> Check:
    # the stopping rule bounds the squared residual, so the default 1e-8
    # leaves errors near 1e-6; the comparison runs the PCG to roundoff
    rng = np.random.default_rng(seed)
    ws = ProjectionWorkspace(build_unit_square_mesh(level), tol1=tol1)
    rhs = rng.standard_normal((2, ws.n))
    g, _, _ = project(rhs, ws, as_load=False)
    ref = dense_saddle_oracle(rhs, ws.mesh, as_load=False)
    return Check("projection vs dense KKT (M-norm)", m_norm(ws, g - ref), 1e-8)


def check_idempotence(seed: int = 1, level: int = 4) -> Check:
    rng = np.random.default_rng(seed)
    ws = ProjectionWorkspace(build_unit_square_mesh(level))
    g1, _, _ = project(rng.standard_normal((2, ws.n)), ws, as_load=False)
    g2, _, _ = project(g1, ws, as_load=False)
    return Check("projection idempotence (M-norm)", m_norm(ws, g2 - g1), 1e-9)


def duality_residual(disc: Discretization, u: np.ndarray, w: np.ndarray) -> float:
    """Relative mismatch between the two sides of the state/adjoint duality."""
    d, dt = disc.data, disc.grid.dt
    M = disc.ops.mass.matrix
    y = disc.state(u)
    p = disc.adjoint(u, y)
    z = disc.linearized(u, w, y)
    e = y[1:] - disc.yd[1:]
    lhs = dt * d.alpha1 * float(np.sum(e * (M @ z[1:].T).T))
    lhs += d.alpha2 * float((y[-1] - disc.yT) @ (M @ z[-1]))
    rhs = -dt * sum(float(p[n] @ disc.ops.advect(y[n - 1], w[n - 1])) for n in range(1, disc.grid.N + 1))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def check_duality(seed: int = 2, level: int = 4, N: int = 16) -> Check:
    rng = np.random.default_rng(seed)
    disc = random_discretization(level, N, rng)
    n = disc.mesh.n_fine
    u = rng.standard_normal((N, 2, n))
    w = rng.standard_normal((N, 2, n))
    return Check("adjoint duality (relative)", duality_residual(disc, u, w), 1e-11)


def fd_gradient_error(space: ControlSpace, u: np.ndarray, w: np.ndarray, eps: float = 1e-5) -> float:
    """Relative gap between ``(g, w)`` and a central difference of ``J``."""
    g = compute_gradient(space, u).g
    exact = space.inner(g, w)
    fd = (evaluate_objective(space, u + eps * w) - evaluate_objective(space, u - eps * w)) / (2 * eps)
    return abs(fd - exact) / max(abs(exact), 1e-300)


def check_gradient(mode: str, seed: int = 3, level: int = 4, N: int = 16) -> Check:
    rng = np.random.default_rng(seed)
    disc = random_discretization(level, N, rng)
    ws = ProjectionWorkspace(disc.mesh, tol1=1e-12) if mode == "field" else None
    space = ControlSpace(disc, mode, ws)
    u = random_control(space, rng)
    w = random_control(space, rng)
    return Check(f"gradient vs central difference ({mode})", fd_gradient_error(space, u, w), 1e-4)


def heat_benchmark_error(level: int = 5, T: float = 0.1, N: int = 7) -> float:
    """Relative error of the zero-control solver against the decaying sine mode."""
    phi = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    data = ProblemData(
        nu=1.0, a0=0.0, alpha1=1.0, alpha2=0.0,
        phi=phi, f=zero_sampler, g=zero_sampler, yd=zero_sampler,
    )
    disc = Discretization(data, build_unit_square_mesh(level), TimeGrid(T, N))
    y = disc.state(np.zeros((N, 2)))
    exact = math.exp(-2 * math.pi**2 * T) * disc.phi
    return math.sqrt(disc.ops.mass_norm2(y[-1] - exact) / disc.ops.mass_norm2(disc.phi))


def check_heat() -> Check:
    return Check("heat benchmark (relative L2)", heat_benchmark_error(), 5e-2)


def energy_increase(level: int = 5, seed: int = 4) -> float:
    """Largest relative growth of ``||y_n||_M`` with no source and a divergence-free velocity."""
    data = ProblemData(
        nu=1.0, a0=1.0, alpha1=1.0, alpha2=0.0,
        phi=lambda x, y: exact_state(x, y, 0.0), f=zero_sampler, g=zero_sampler, yd=zero_sampler,
    )
    N = 2 ** (level + 1)
    disc = Discretization(data, build_unit_square_mesh(level), TimeGrid(1.0, N))
    ws = ProjectionWorkspace(disc.mesh)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((2, disc.mesh.n_fine))
    v, _, _ = project(raw, ws, as_load=False)
    v *= 2.0 / math.sqrt(ws.m_inner(v, v))
    y = disc.state(np.broadcast_to(v, (N, 2, disc.mesh.n_fine)))
    norms = np.sqrt([disc.ops.mass_norm2(yn) for yn in y])
    return float(max(0.0, np.max(np.diff(norms) / norms[:-1])))


def check_energy() -> Check:
    return Check("energy growth with f = 0", energy_increase(), 0.0)


CHECKS: tuple[Callable[[], Check], ...] = (
    check_oracle,
    check_idempotence,
    check_duality,
    lambda: check_gradient("finite_dim"),
    lambda: check_gradient("field"),
    check_heat,
    check_energy,
)


def run_checks(callback: Callable[[Check], None] | None = None) -> list[Check]:
    results = []
    for fn in CHECKS:
        c = fn()
        results.append(c)
        if callback is not None:
            callback(c)
    return results
