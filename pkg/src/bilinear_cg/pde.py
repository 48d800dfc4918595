"""Semi-implicit time stepping for the state, adjoint and linearized state.

Diffusion is implicit; advection and reaction are explicit. Every step
solves with the same matrix ``M/dt + nu K`` on interior nodes, factorized
once per :class:`Discretization`.

Controls are arrays indexed by ``n - 1`` for time level ``n = 1..N``:
shape ``(N, 2)`` for spatially constant velocities and ``(N, 2, n_fine)``
for nodal velocity fields. Trajectories are arrays indexed directly by
the time level (``y[n]``, ``p[n]``, ``z[n]``).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .fem import FineOperators
from .linalg import Factorization
from .mesh import TwoLevelMesh

Sampler = Callable[..., np.ndarray]


class InstabilityError(ArithmeticError):
    """Non-finite values appeared while time stepping."""

    def __init__(self, step: int, which: str = "state"):
        super().__init__(f"{which} solution became non-finite at step {step}")
        self.step = step
        self.which = which


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T!r}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def dt_exact(self) -> Fraction:
        return Fraction(self.T).limit_denominator(10**12) / self.N

    def t(self, n: int) -> float:
        return n * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


@dataclass(frozen=True)
class ProblemData:
    """Coefficients, weights and data samplers.

    Samplers take node coordinate arrays ``(x, y)`` and, where time
    dependent, a scalar time ``t``.
    """

    nu: float
    a0: float
    alpha1: float
    alpha2: float
    phi: Sampler
    f: Sampler
    g: Sampler
    yd: Sampler
    yT: Sampler | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be non-negative")
        if not self.alpha1 + self.alpha2 > 0:
            raise ValueError("alpha1 + alpha2 must be positive")


def zero_sampler(x, y, t=None):
    return np.zeros_like(np.asarray(x, dtype=float))


class Discretization:
    """Everything needed to time-step one problem on one mesh and grid.

    Parameters
    ----------
    adjoint_form : {"exact", "advective"}
        ``"exact"`` uses the transpose of the discrete advection operator,
        which makes state and adjoint exactly dual. ``"advective"`` assembles
        ``int (v . grad p) phi`` directly; the two agree when the velocity
        is pointwise divergence-free (e.g. spatially constant).
    linearized_state : {"previous", "current"}
        Which state level multiplies the direction in the linearized
        equation. ``"previous"`` is the exact derivative of the scheme.
    """

    def __init__(
        self,
        data: ProblemData,
        mesh: TwoLevelMesh,
        grid: TimeGrid,
        *,
        adjoint_form: str = "exact",
        linearized_state: str = "previous",
        ops: FineOperators | None = None,
    ):
        if adjoint_form not in ("exact", "advective"):
            raise ValueError(f"unknown adjoint_form {adjoint_form!r}")
        if linearized_state not in ("previous", "current"):
            raise ValueError(f"unknown linearized_state {linearized_state!r}")
        self.data = data
        self.mesh = mesh
        self.grid = grid
        self.adjoint_form = adjoint_form
        self.linearized_state = linearized_state
        self.ops = ops if ops is not None else FineOperators(mesh)
        dt = grid.dt
        M = self.ops.mass.matrix
        A = (M / dt + data.nu * self.ops.stiffness.matrix).tocsr()
        I, Bd = self.ops.interior, self.ops.boundary
        self.A_II = A[I][:, I]
        self.A_IB = A[I][:, Bd]
        self.factor = Factorization(self.A_II, spd=True)
        self.explicit = 1.0 / dt - data.a0
        self._sample()

    def _sample(self):
        x, y = self.mesh.fine_nodes[:, 0], self.mesh.fine_nodes[:, 1]
        xb, yb = x[self.ops.boundary], y[self.ops.boundary]
        N, d = self.grid.N, self.data
        n = self.mesh.n_fine
        self.phi = np.asarray(d.phi(x, y), dtype=float) * np.ones(n)
        self.f = np.zeros((N + 1, n))
        self.yd = np.zeros((N + 1, n))
        self.gb = np.zeros((N + 1, len(xb)))
        for k in range(N + 1):
            t = self.grid.t(k)
            self.f[k] = d.f(x, y, t)
            self.yd[k] = d.yd(x, y, t)
            self.gb[k] = d.g(xb, yb, t)
        self.yT = np.zeros(n) if d.yT is None else np.asarray(d.yT(x, y), dtype=float) * np.ones(n)
        self.Mf = (self.ops.mass.matrix @ self.f.T).T

    # -- helpers -------------------------------------------------------------

    def check_control(self, control: np.ndarray) -> np.ndarray:
        control = np.asarray(control, dtype=float)
        N, n = self.grid.N, self.mesh.n_fine
        if control.shape not in ((N, 2), (N, 2, n)):
            raise ValueError(f"control must have shape ({N}, 2) or ({N}, 2, {n}), got {control.shape}")
        return control

    def _step(self, rhs_full: np.ndarray, boundary: np.ndarray | None) -> np.ndarray:
        I = self.ops.interior
        out = np.zeros(self.mesh.n_fine)
        rhs = rhs_full[I]
        if boundary is not None:
            out[self.ops.boundary] = boundary
            if np.any(boundary):
                rhs = rhs - self.A_IB @ boundary
        out[I] = self.factor.solve(rhs)
        return out

    # -- solvers -------------------------------------------------------------

    def state(self, control: np.ndarray) -> np.ndarray:
        """Forward state ``y[0..N]``."""
        control = self.check_control(control)
        M = self.ops.mass.matrix
        y = np.empty((self.grid.N + 1, self.mesh.n_fine))
        y[0] = self.phi
        for n in range(1, self.grid.N + 1):
            prev = y[n - 1]
            rhs = self.explicit * (M @ prev) - self.ops.advect(prev, control[n - 1]) + self.Mf[n]
            y[n] = self._step(rhs, self.gb[n])
            if not np.all(np.isfinite(y[n])):
                raise InstabilityError(n, "state")
        return y

    def adjoint(self, control: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Backward adjoint ``p[1..N+1]`` (row 0 is unused and zero)."""
        control = self.check_control(control)
        d, N, dt = self.data, self.grid.N, self.grid.dt
        M = self.ops.mass.matrix
        p = np.zeros((N + 2, self.mesh.n_fine))
        p[N + 1] = d.alpha2 * (y[N] - self.yT)
        rhs = M @ (p[N + 1] / dt + d.alpha1 * (y[N] - self.yd[N]))
        p[N] = self._step(rhs, None)
        if not np.all(np.isfinite(p[N])):
            raise InstabilityError(N, "adjoint")
        for n in range(N - 1, 0, -1):
            nxt = p[n + 1]
            v = control[n]  # v_{n+1}
            if self.adjoint_form == "exact":
                adv = -self.ops.advect_transpose(nxt, v)
            else:
                adv = self.ops.advect(nxt, v)
            rhs = M @ (self.explicit * nxt + d.alpha1 * (y[n] - self.yd[n])) + adv
            p[n] = self._step(rhs, None)
            if not np.all(np.isfinite(p[n])):
                raise InstabilityError(n, "adjoint")
        return p

    def linearized(self, control: np.ndarray, direction: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Forward linearized state ``z[0..N]`` for direction ``w``."""
        control = self.check_control(control)
        direction = self.check_control(direction)
        M = self.ops.mass.matrix
        shift = 1 if self.linearized_state == "previous" else 0
        z = np.zeros((self.grid.N + 1, self.mesh.n_fine))
        for n in range(1, self.grid.N + 1):
            prev = z[n - 1]
            rhs = (
                self.explicit * (M @ prev)
                - self.ops.advect(prev, control[n - 1])
                - self.ops.advect(y[n - shift], direction[n - 1])
            )
            z[n] = self._step(rhs, None)
            if not np.all(np.isfinite(z[n])):
                raise InstabilityError(n, "linearized")
        return z


def solve_state(data: ProblemData, grid: TimeGrid, control: np.ndarray, mesh: TwoLevelMesh) -> np.ndarray:
    return Discretization(data, mesh, grid).state(control)


def solve_adjoint(
    data: ProblemData, grid: TimeGrid, control: np.ndarray, state: np.ndarray, mesh: TwoLevelMesh
) -> np.ndarray:
    return Discretization(data, mesh, grid).adjoint(control, state)


def solve_linearized(
    data: ProblemData,
    grid: TimeGrid,
    control: np.ndarray,
    direction: np.ndarray,
    state: np.ndarray,
    mesh: TwoLevelMesh,
) -> np.ndarray:
    return Discretization(data, mesh, grid).linearized(control, direction, state)
