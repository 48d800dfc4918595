"""Nested conjugate gradient for the bilinear (velocity) control problem.

Each outer iteration solves three parabolic problems (state, adjoint,
linearized state) plus ``N`` divergence-free projections when the control
is a velocity field. The stepsize minimizes the quadratic model obtained
by linearizing the control-to-state map, and directions are updated with
the Fletcher-Reeves rule.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .pde import Discretization
from .projection import ProjectionWorkspace, project_many

log = logging.getLogger(__name__)


class DegenerateDirection(ArithmeticError):
    """The stepsize denominator vanished."""


class ControlSpace:
    """Inner products and helpers for one of the two control modes.

    ``finite_dim``: one 2-vector per time level, shape ``(N, 2)``.
    ``field``: one nodal velocity field per time level, ``(N, 2, n_fine)``.
    """

    def __init__(self, disc: Discretization, mode: str, ws: ProjectionWorkspace | None = None):
        if mode not in ("field", "finite_dim"):
            raise ValueError(f"unknown control mode {mode!r}")
        if mode == "field" and ws is None:
            raise ValueError("field mode needs a projection workspace")
        self.disc = disc
        self.mode = mode
        self.ws = ws
        self.M = disc.ops.mass.matrix

    @property
    def shape(self) -> tuple[int, ...]:
        N = self.disc.grid.N
        return (N, 2) if self.mode == "finite_dim" else (N, 2, self.disc.mesh.n_fine)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        dt = self.disc.grid.dt
        if self.mode == "finite_dim":
            return dt * float(np.sum(a * b))
        N, n = a.shape[0], a.shape[2]
        Mb = (self.M @ b.reshape(-1, n).T).T
        return dt * float(np.sum(a.reshape(-1, n) * Mb))

    def norm2(self, a: np.ndarray) -> float:
        return self.inner(a, a)


def _tracking(disc: Discretization, y: np.ndarray) -> tuple[float, float]:
    M = disc.ops.mass.matrix
    e = y[1:] - disc.yd[1:]
    track = float(np.sum(e * (M @ e.T).T))
    eT = y[-1] - disc.yT
    return track, float(eT @ (M @ eT))


def objective_from_state(space: ControlSpace, control: np.ndarray, y: np.ndarray) -> float:
    disc = space.disc
    d, dt = disc.data, disc.grid.dt
    track, term = _tracking(disc, y)
    return 0.5 * space.norm2(control) + 0.5 * d.alpha1 * dt * track + 0.5 * d.alpha2 * term


def evaluate_objective(space: ControlSpace, control: np.ndarray) -> float:
    """Discrete objective; solves the state equation."""
    return objective_from_state(space, control, space.disc.state(control))


@dataclass
class Gradient:
    g: np.ndarray
    inner_iterations: np.ndarray | None = None
    multipliers: np.ndarray | None = None

    @property
    def max_inner(self) -> int:
        return 0 if self.inner_iterations is None else int(self.inner_iterations.max())


def gradient_from_adjoint(
    space: ControlSpace,
    control: np.ndarray,
    y: np.ndarray,
    p: np.ndarray,
    threads: int = 1,
    lam0: np.ndarray | None = None,
) -> Gradient:
    """Gradient of the discrete objective given state and adjoint."""
    ops = space.disc.ops
    N = space.disc.grid.N
    if space.mode == "finite_dim":
        g = np.empty((N, 2))
        for n in range(1, N + 1):
            g[n - 1] = control[n - 1] - ops.p_grad_y_integral(p[n], y[n - 1])
        return Gradient(g)
    n_f = space.disc.mesh.n_fine
    loads = (space.M @ control.reshape(-1, n_f).T).T.reshape(N, 2, n_f)
    for n in range(1, N + 1):
        loads[n - 1] -= ops.p_grad_y_load(p[n], y[n - 1])
    g, lam, iters = project_many(loads, space.ws, lam0=lam0, threads=threads)
    return Gradient(g, iters, lam)


def compute_gradient(space: ControlSpace, control: np.ndarray, threads: int = 1) -> Gradient:
    y = space.disc.state(control)
    p = space.disc.adjoint(control, y)
    return gradient_from_adjoint(space, control, y, p, threads=threads)


def compute_stepsize(
    space: ControlSpace, g: np.ndarray, w: np.ndarray, z: np.ndarray
) -> float:
    """Minimizer of the quadratic model along ``-w``."""
    disc = space.disc
    d, dt = disc.data, disc.grid.dt
    M = disc.ops.mass.matrix
    zz = float(np.sum(z[1:] * (M @ z[1:].T).T))
    zN = float(z[-1] @ (M @ z[-1]))
    denom = space.norm2(w) + d.alpha1 * dt * zz + d.alpha2 * zN
    if not denom > 0:
        raise DegenerateDirection("stepsize denominator is not positive")
    return space.inner(g, w) / denom


def quadratic_model(
    space: ControlSpace, u: np.ndarray, w: np.ndarray, y: np.ndarray, z: np.ndarray, rho: float
) -> float:
    """Objective with the state replaced by its linearization ``y - rho z``."""
    return objective_from_state(space, u - rho * w, y - rho * z)


@dataclass
class RunConfig:
    tol: float = 1e-5
    max_outer: int = 2000
    threads: int = 1
    restart_every: int = 0
    rho_min: float = 1e-16
    warm_start: bool = False


@dataclass
class RunReport:
    status: str
    iterations: int
    objective: list[float] = field(default_factory=list)
    grad_norm2: list[float] = field(default_factory=list)
    stepsize: list[float] = field(default_factory=list)
    max_inner: list[int] = field(default_factory=list)
    control: np.ndarray | None = None
    state: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def max_inner_overall(self) -> int:
        return max(self.max_inner) if self.max_inner else 0

    @property
    def descent_violations(self) -> list[int]:
        J = self.objective
        return [k for k in range(1, len(J)) if not J[k] < J[k - 1]]


def run(
    space: ControlSpace,
    config: RunConfig | None = None,
    u0: np.ndarray | None = None,
    callback: Callable[[int, RunReport], None] | None = None,
) -> RunReport:
    """Nested CG iteration from ``u0`` (zero by default)."""
    cfg = config or RunConfig()
    disc = space.disc
    start = time.perf_counter()
    u = space.zeros() if u0 is None else np.array(u0, dtype=float)

    y = disc.state(u)
    p = disc.adjoint(u, y)
    grad = gradient_from_adjoint(space, u, y, p, cfg.threads)
    g = grad.g
    gg = gg0 = space.norm2(g)
    report = RunReport(status="running", iterations=0)
    report.objective.append(objective_from_state(space, u, y))
    report.grad_norm2.append(gg)
    report.stepsize.append(float("nan"))
    report.max_inner.append(grad.max_inner)
    lam = grad.multipliers if cfg.warm_start else None

    if gg0 == 0.0:
        report.status = "converged"
    w = g.copy()
    k = 0
    while report.status == "running":
        if k >= cfg.max_outer:
            report.status = "max_outer"
            break
        z = disc.linearized(u, w, y)
        try:
            rho = compute_stepsize(space, g, w, z)
        except DegenerateDirection:
            report.status = "degenerate"
            break
        if abs(rho) < cfg.rho_min:
            report.status = "degenerate"
            break
        u = u - rho * w
        y = disc.state(u)
        p = disc.adjoint(u, y)
        grad = gradient_from_adjoint(space, u, y, p, cfg.threads, lam0=lam)
        if cfg.warm_start:
            lam = grad.multipliers
        g_new = grad.g
        gg_new = space.norm2(g_new)
        k += 1
        report.iterations = k
        report.objective.append(objective_from_state(space, u, y))
        report.grad_norm2.append(gg_new)
        report.stepsize.append(rho)
        report.max_inner.append(grad.max_inner)
        report.control, report.state = u, y
        if callback is not None:
            callback(k, report)
        if k % 25 == 0:
            log.info("outer %d: J=%.6e |g|^2/|g0|^2=%.3e", k, report.objective[-1], gg_new / gg0)
        if gg_new / gg0 <= cfg.tol:
            report.status = "converged"
            break
        if cfg.restart_every and k % cfg.restart_every == 0:
            w = g_new.copy()
        else:
            w = g_new + (gg_new / gg) * w
        g, gg = g_new, gg_new

    report.control = u
    report.state = y
    report.wall_time = time.perf_counter() - start
    return report
