"""P1 finite element operators on a :class:`~bilinear_cg.mesh.TwoLevelMesh`.

Velocity fields are stored as arrays of shape ``(2, n_fine)``; stacked
velocity vectors (as seen by the divergence coupling ``B``) are laid out as
``[v1, v2]`` of length ``2 * n_fine``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import TwoLevelMesh, interior_dof_map, signed_areas

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def _rule_midpoint():
    bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    return bary, np.full(3, 1.0 / 3.0)


def _rule_seven():
    # degree-5 rule on the reference triangle, weights normalized to sum 1
    s = np.sqrt(15.0)
    b1, b2 = (6.0 + s) / 21.0, (6.0 - s) / 21.0
    a1, a2 = 1.0 - 2.0 * b1, 1.0 - 2.0 * b2
    w1, w2 = (155.0 + s) / 1200.0, (155.0 - s) / 1200.0
    bary = np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
            [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
        ]
    )
    return bary, np.array([9 / 40, w1, w1, w1, w2, w2, w2])


QUADRATURE = {"midpoint": _rule_midpoint, "seven": _rule_seven}


def p1_geometry(nodes: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangle areas ``(nt,)`` and barycentric gradients ``(nt, 3, 2)``."""
    area = signed_areas(nodes, tris)
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    # grad(lambda_k) = rot(opposite edge) / (2 area)
    grads = np.empty((len(tris), 3, 2))
    for k, (pa, pb) in enumerate(((p1, p2), (p2, p0), (p0, p1))):
        e = pb - pa
        grads[:, k, 0] = -e[:, 1]
        grads[:, k, 1] = e[:, 0]
    grads /= (2.0 * area)[:, None, None]
    return area, grads


class SparseOperator:
    """A CSR matrix tagged with symmetry information.

    The factorization is computed on first use and cached.
    """

    def __init__(self, matrix, symmetric: bool = False, positive_definite: bool = False):
        self.matrix = sp.csr_matrix(matrix)
        self.symmetric = symmetric
        self.positive_definite = positive_definite
        if symmetric:
            diff = abs(self.matrix - self.matrix.T)
            scale = abs(self.matrix).max() if self.matrix.nnz else 0.0
            if diff.nnz and diff.max() > 1e-13 * scale:
                raise ValueError("operator tagged symmetric is not symmetric")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    @cached_property
    def factorization(self):
        from .linalg import factorize

        return factorize(self)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        from .linalg import solve

        return solve(self.factorization, rhs)

    def __repr__(self) -> str:
        tag = "SPD" if self.positive_definite else ("sym" if self.symmetric else "gen")
        return f"SparseOperator({self.shape[0]}x{self.shape[1]}, nnz={self.matrix.nnz}, {tag})"


def _assemble(tris: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _level(mesh: TwoLevelMesh, space: str):
    if space == "fine":
        return mesh.fine_nodes, mesh.fine_triangles
    if space == "coarse":
        return mesh.coarse_nodes, mesh.coarse_triangles
    raise ValueError(f"space must be 'fine' or 'coarse', got {space!r}")


def assemble_mass(mesh: TwoLevelMesh, space: str = "fine") -> SparseOperator:
    """Consistent P1 mass matrix over all nodes of the chosen level."""
    nodes, tris = _level(mesh, space)
    area = signed_areas(nodes, tris)
    local = area[:, None, None] * _LOCAL_MASS[None]
    return SparseOperator(_assemble(tris, local, len(nodes)), symmetric=True, positive_definite=True)


def assemble_stiffness(mesh: TwoLevelMesh, space: str = "fine") -> SparseOperator:
    """P1 stiffness matrix (unit coefficient) over all nodes of the level."""
    nodes, tris = _level(mesh, space)
    area, grads = p1_geometry(nodes, tris)
    local = area[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    return SparseOperator(_assemble(tris, local, len(nodes)), symmetric=True)


def assemble_advection(
    mesh: TwoLevelMesh, velocity: np.ndarray, quadrature: str = "midpoint"
) -> SparseOperator:
    """Matrix ``C(v)`` with ``(C(v) y)_i = int (v . grad y) phi_i``.

    ``velocity`` is a nodal P1 field of shape ``(2, n_fine)``. The default
    edge-midpoint rule integrates the quadratic integrand exactly.
    """
    velocity = np.asarray(velocity, dtype=float)
    if velocity.shape != (2, mesh.n_fine):
        raise ValueError(f"velocity must have shape (2, {mesh.n_fine}), got {velocity.shape}")
    tris = mesh.fine_triangles
    area, grads = p1_geometry(mesh.fine_nodes, tris)
    bary, weights = QUADRATURE[quadrature]()
    vt = velocity[:, tris]  # (2, nt, 3)
    vq = np.einsum("ctk,qk->tqc", vt, bary)  # velocity at quadrature points
    vdotg = np.einsum("tqc,tjc->tqj", vq, grads)  # v . grad phi_j
    local = area[:, None, None] * np.einsum("q,qi,tqj->tij", weights, bary, vdotg)
    return SparseOperator(_assemble(tris, local, mesh.n_fine))


def assemble_divergence_coupling(mesh: TwoLevelMesh) -> sp.csr_matrix:
    """``B[q, (c, k)] = -int phi_k d_c(q_H)`` for interior coarse nodes ``q``.

    Columns ``0..n_fine-1`` hold the first velocity component, the rest the
    second. ``B v`` vanishes exactly for discretely divergence-free ``v``.
    """
    c_area, c_grads = p1_geometry(mesh.coarse_nodes, mesh.coarse_triangles)
    f_area = signed_areas(mesh.fine_nodes, mesh.fine_triangles)
    parent = mesh.fine_to_coarse_triangle
    cg = c_grads[parent]  # (nt, 3 coarse vertices, 2)
    cverts = mesh.coarse_triangles[parent]  # (nt, 3)
    fverts = mesh.fine_triangles  # (nt, 3)
    nf = mesh.n_fine

    # every fine basis function integrates to area/3 over the fine triangle
    vals = -(f_area / 3.0)[:, None, None, None] * cg[:, :, None, :]  # (nt, 3c, 3f, 2)
    vals = np.broadcast_to(vals, (len(fverts), 3, 3, 2))
    rows = np.broadcast_to(cverts[:, :, None, None], vals.shape)
    cols = fverts[:, None, :, None] + nf * np.arange(2)[None, None, None, :]
    cols = np.broadcast_to(cols, vals.shape)

    interior = interior_dof_map(mesh, "coarse")
    row_map = np.full(mesh.n_coarse, -1, dtype=np.int64)
    row_map[interior] = np.arange(len(interior))
    r = row_map[rows.ravel()]
    keep = r >= 0
    B = sp.coo_matrix(
        (vals.ravel()[keep], (r[keep], cols.ravel()[keep])), shape=(len(interior), 2 * nf)
    ).tocsr()
    return B


def assemble_coarse_laplacian(mesh: TwoLevelMesh) -> SparseOperator:
    """Coarse stiffness matrix restricted to interior nodes (SPD)."""
    K = assemble_stiffness(mesh, "coarse").matrix
    idx = interior_dof_map(mesh, "coarse")
    return SparseOperator(K[idx][:, idx], symmetric=True, positive_definite=True)


class FineOperators:
    """Cached geometry and matrix-free kernels on the fine mesh.

    The kernels evaluate the same integrals as :func:`assemble_advection`
    in closed form, without building a matrix per velocity field.
    """

    def __init__(self, mesh: TwoLevelMesh):
        self.mesh = mesh
        self.tris = mesh.fine_triangles
        self.area, self.grads = p1_geometry(mesh.fine_nodes, mesh.fine_triangles)
        self.n = mesh.n_fine
        self.mass = assemble_mass(mesh, "fine")
        self.stiffness = assemble_stiffness(mesh, "fine")
        self.interior = interior_dof_map(mesh, "fine")
        self.boundary = np.flatnonzero(mesh.fine_boundary_mask)
        self._flat_tris = self.tris.ravel()

    def _scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self._flat_tris, weights=local.ravel(), minlength=self.n)

    @cached_property
    def const_advection(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``C(e1)`` and ``C(e2)`` for spatially constant velocities."""
        ones = np.ones(self.n)
        zeros = np.zeros(self.n)
        c1 = assemble_advection(self.mesh, np.vstack([ones, zeros])).matrix
        c2 = assemble_advection(self.mesh, np.vstack([zeros, ones])).matrix
        return c1, c2

    def gradient(self, y: np.ndarray) -> np.ndarray:
        """Per-triangle constant gradient of a P1 field, ``(nt, 2)``."""
        return np.einsum("tk,tkd->td", y[self.tris], self.grads)

    def local_mass_apply(self, p: np.ndarray) -> np.ndarray:
        """``(M_T p_T)_k`` for every triangle, shape ``(nt, 3)``."""
        pt = p[self.tris]
        return (self.area / 12.0)[:, None] * (pt + pt.sum(axis=1, keepdims=True))

    def advect(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``C(v) y``; ``v`` is ``(2, n)`` nodal or a constant 2-vector."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            c1, c2 = self.const_advection
            return v[0] * (c1 @ y) + v[1] * (c2 @ y)
        gy = self.gradient(y)
        s = np.einsum("ctk,tc->tk", v[:, self.tris], gy)  # v_k . grad y
        local = (self.area / 12.0)[:, None] * (s + s.sum(axis=1, keepdims=True))
        return self._scatter(local)

    def advect_transpose(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``C(v)^T p``."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            c1, c2 = self.const_advection
            return v[0] * (c1.T @ p) + v[1] * (c2.T @ p)
        mp = self.local_mass_apply(p)
        q = np.einsum("ctk,tk->tc", v[:, self.tris], mp)  # int_T v p
        local = np.einsum("tjc,tc->tj", self.grads, q)
        return self._scatter(local)

    def p_grad_y_load(self, p: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Load vector ``int p d_c(y) phi_k``, shape ``(2, n)``."""
        gy = self.gradient(y)
        mp = self.local_mass_apply(p)
        out = np.empty((2, self.n))
        for c in range(2):
            out[c] = self._scatter(gy[:, c, None] * mp)
        return out

    def p_grad_y_integral(self, p: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``int p grad(y) dx`` as a 2-vector."""
        gy = self.gradient(y)
        pint = self.area / 3.0 * p[self.tris].sum(axis=1)
        return pint @ gy

    def y_grad_p_integral(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        """``int y grad(p) dx`` as a 2-vector."""
        return self.p_grad_y_integral(y, p)

    def mass_norm2(self, y: np.ndarray) -> float:
        return float(y @ (self.mass.matrix @ y))
