"""L2 projection onto discretely divergence-free velocity fields.

Velocities are P1 on the fine mesh; the divergence constraint is tested
against P1 functions on the twice coarser mesh that vanish on the
boundary. The projection of a load vector ``b`` solves the saddle-point
system

    M g - B^T lam = b,    B g = 0,

by conjugate gradients on the multiplier, preconditioned by the coarse
Dirichlet Laplacian.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg as sl

from .fem import assemble_coarse_laplacian, assemble_divergence_coupling, assemble_mass
from .linalg import Factorization
from .mesh import TwoLevelMesh


class ProjectionNotConverged(RuntimeError):
    def __init__(self, iterations: int, ratio: float):
        super().__init__(f"projection did not converge in {iterations} iterations (ratio {ratio:.3e})")
        self.iterations = iterations
        self.ratio = ratio


class ProjectionWorkspace:
    """Factorizations and coupling matrix shared by all projections on a mesh."""

    def __init__(self, mesh: TwoLevelMesh, tol1: float = 1e-8, max_inner: int = 200, warm_start: bool = False):
        if not tol1 > 0:
            raise ValueError("tol1 must be positive")
        self.mesh = mesh
        self.tol1 = tol1
        self.max_inner = max_inner
        self.warm_start = warm_start
        self.mass = assemble_mass(mesh, "fine")
        self.mass_factor = Factorization(self.mass.matrix, spd=True)
        self.laplacian = assemble_coarse_laplacian(mesh)
        self.laplacian_factor = Factorization(self.laplacian.matrix, spd=True)
        self.B = assemble_divergence_coupling(mesh)
        self.BT = self.B.T.tocsr()
        self.n = mesh.n_fine
        self.n_multiplier = self.B.shape[0]

    def mass_solve(self, load: np.ndarray) -> np.ndarray:
        """Apply ``M^-1`` to each component of a ``(2, n)`` load."""
        return self.mass_factor.solve(load.T).T

    def mass_apply(self, field: np.ndarray) -> np.ndarray:
        return (self.mass.matrix @ field.T).T

    def divergence(self, field: np.ndarray) -> np.ndarray:
        return self.B @ field.ravel()

    def divergence_adjoint(self, lam: np.ndarray) -> np.ndarray:
        return (self.BT @ lam).reshape(2, self.n)

    def m_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * self.mass_apply(b)))


def project(
    rhs: np.ndarray,
    ws: ProjectionWorkspace,
    lam0: np.ndarray | None = None,
    *,
    as_load: bool = True,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Project one velocity right-hand side onto the divergence-free space.

    Parameters
    ----------
    rhs : array, shape (2, n_fine)
        Load vector ``int f . z`` (default) or, with ``as_load=False``, a
        nodal field ``f`` whose load is formed with the mass matrix.
    lam0 : array, optional
        Initial multiplier on interior coarse nodes; zero by default.

    Returns
    -------
    g, lam, iterations
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (2, ws.n):
        raise ValueError(f"rhs must have shape (2, {ws.n}), got {rhs.shape}")
    load = rhs if as_load else ws.mass_apply(rhs)
    lam = np.zeros(ws.n_multiplier) if lam0 is None else np.array(lam0, dtype=float)
    L = ws.laplacian.matrix

    g = ws.mass_solve(load + ws.divergence_adjoint(lam))
    Lr = ws.divergence(g)  # L r = B g
    r = ws.laplacian_factor.solve(Lr)
    rr = float(r @ Lr)
    rr0 = rr
    if rr / max(1.0, float(lam @ (L @ lam))) <= ws.tol1:
        return g, lam, 0
    w = r.copy()
    scale = max(1.0, rr0)
    for k in range(1, ws.max_inner + 1):
        gbar = ws.mass_solve(ws.divergence_adjoint(w))
        Lrbar = ws.divergence(gbar)
        rbar = ws.laplacian_factor.solve(Lrbar)
        eta = rr / float(w @ Lrbar)
        lam -= eta * w
        g -= eta * gbar
        r -= eta * rbar
        Lr -= eta * Lrbar
        rr_new = float(r @ Lr)
        if rr_new / scale <= ws.tol1:
            return g, lam, k
        gamma = rr_new / rr
        rr = rr_new
        w = r + gamma * w
    raise ProjectionNotConverged(ws.max_inner, rr / scale)


def project_many(
    loads: np.ndarray,
    ws: ProjectionWorkspace,
    lam0: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project a stack of loads ``(N, 2, n)`` independently.

    Each slice runs the same sequence of floating point operations whatever
    the number of threads, so results do not depend on ``threads``.
    """
    N = len(loads)
    lam0s = [None] * N if lam0 is None else list(lam0)

    def one(k):
        return project(loads[k], ws, lam0s[k])

    if threads > 1 and N > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(N)))
    else:
        results = [one(k) for k in range(N)]
    g = np.stack([r[0] for r in results])
    lam = np.stack([r[1] for r in results])
    iters = np.array([r[2] for r in results], dtype=np.int64)
    return g, lam, iters


def dense_saddle_oracle(rhs: np.ndarray, mesh: TwoLevelMesh, *, as_load: bool = True) -> np.ndarray:
    """Exact projection by a dense LU solve of the full KKT system.

    Only meant as a test oracle; refuses meshes finer than level 4.
    """
    if mesh.level > 4:
        raise ValueError(f"dense oracle refused for level {mesh.level} > 4")
    M = assemble_mass(mesh, "fine").matrix.toarray()
    B = assemble_divergence_coupling(mesh).toarray()
    n = mesh.n_fine
    m = B.shape[0]
    M2 = np.zeros((2 * n, 2 * n))
    M2[:n, :n] = M
    M2[n:, n:] = M
    rhs = np.asarray(rhs, dtype=float)
    load = rhs.ravel() if as_load else (M2 @ rhs.ravel())
    K = np.block([[M2, -B.T], [B, np.zeros((m, m))]])
    sol = sl.lu_solve(sl.lu_factor(K), np.concatenate([load, np.zeros(m)]))
    return sol[: 2 * n].reshape(2, n)
