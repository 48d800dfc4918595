"""Nested uniform triangulations of the unit square.

The fine mesh has spacing ``h = 1/2**level`` and the coarse mesh ``H = 2h``.
Every grid square is split along the diagonal from its lower-left to its
upper-right corner, on both levels, so each coarse triangle is exactly the
union of the four fine triangles obtained by joining its edge midpoints.

Nodes are numbered lexicographically by ``(y, x)``: node ``(i, j)`` (column
``i``, row ``j``) has id ``j * (n + 1) + i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinates and CCW triangles of an ``n x n`` split-square grid."""
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    # interleave so triangles of one square are adjacent in memory
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    return nodes, tris


def _boundary_mask(nodes: np.ndarray) -> np.ndarray:
    x, y = nodes[:, 0], nodes[:, 1]
    return (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)


@dataclass(frozen=True)
class TwoLevelMesh:
    """Fine (velocity/state) and coarse (multiplier) triangulations."""

    level: int
    fine_nodes: np.ndarray
    fine_triangles: np.ndarray
    coarse_nodes: np.ndarray
    coarse_triangles: np.ndarray
    fine_boundary_mask: np.ndarray
    coarse_boundary_mask: np.ndarray
    coarse_to_fine: np.ndarray
    fine_to_coarse_triangle: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / 2**self.level

    @property
    def n_fine(self) -> int:
        return len(self.fine_nodes)

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_nodes)

    @property
    def cells(self) -> int:
        """Number of fine grid intervals per side."""
        return 2**self.level

    def fine_areas(self) -> np.ndarray:
        return signed_areas(self.fine_nodes, self.fine_triangles)

    def coarse_areas(self) -> np.ndarray:
        return signed_areas(self.coarse_nodes, self.coarse_triangles)

    def interior_dofs(self, which: str = "fine") -> np.ndarray:
        return interior_dof_map(self, which)

    def node_index(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Fine node ids of grid points given by coordinates."""
        n = self.cells
        i = np.rint(np.asarray(x) * n).astype(np.int64)
        j = np.rint(np.asarray(y) * n).astype(np.int64)
        return j * (n + 1) + i

    def dump(self, path: str | Path) -> None:
        """Write plain-text node and triangle lists of both levels."""
        path = Path(path)
        with path.open("w") as fh:
            for name, nodes, tris, bnd in (
                ("fine", self.fine_nodes, self.fine_triangles, self.fine_boundary_mask),
                ("coarse", self.coarse_nodes, self.coarse_triangles, self.coarse_boundary_mask),
            ):
                fh.write(f"# {name} nodes {len(nodes)}\n")
                for k, (x, y) in enumerate(nodes):
                    fh.write(f"{k} {x:.17g} {y:.17g} {int(bnd[k])}\n")
                fh.write(f"# {name} triangles {len(tris)}\n")
                for k, (a, b, c) in enumerate(tris):
                    fh.write(f"{k} {a} {b} {c}\n")


def signed_areas(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_unit_square_mesh(level: int) -> TwoLevelMesh:
    """Build the nested pair of meshes with ``h = 1/2**level``.

    Raises
    ------
    ValueError
        If ``level < 2``; the coarse mesh would have no interior node.
    """
    if int(level) != level or level < 2:
        raise ValueError(f"level must be an integer >= 2, got {level!r}")
    level = int(level)
    n = 2**level
    m = n // 2
    fine_nodes, fine_tris = _grid(n)
    coarse_nodes, coarse_tris = _grid(m)

    ci, cj = np.meshgrid(np.arange(m + 1), np.arange(m + 1))
    coarse_to_fine = (2 * cj.ravel()) * (n + 1) + 2 * ci.ravel()

    # parent coarse triangle of every fine triangle, located by centroid
    cen = fine_nodes[fine_tris].mean(axis=1) * m
    sq_i = np.floor(cen[:, 0]).astype(np.int64)
    sq_j = np.floor(cen[:, 1]).astype(np.int64)
    upper = (cen[:, 1] - sq_j) > (cen[:, 0] - sq_i)
    parent = 2 * (sq_j * m + sq_i) + upper.astype(np.int64)

    for arr in (fine_nodes, fine_tris, coarse_nodes, coarse_tris, coarse_to_fine, parent):
        arr.setflags(write=False)
    fb = _boundary_mask(fine_nodes)
    cb = _boundary_mask(coarse_nodes)
    fb.setflags(write=False)
    cb.setflags(write=False)
    return TwoLevelMesh(
        level=level,
        fine_nodes=fine_nodes,
        fine_triangles=fine_tris,
        coarse_nodes=coarse_nodes,
        coarse_triangles=coarse_tris,
        fine_boundary_mask=fb,
        coarse_boundary_mask=cb,
        coarse_to_fine=coarse_to_fine,
        fine_to_coarse_triangle=parent,
    )


def interior_dof_map(mesh: TwoLevelMesh, which: str = "fine") -> np.ndarray:
    """Node ids of interior nodes, in increasing order.

    Position ``k`` of the returned array is the equation index of node
    ``ids[k]``; boundary nodes get no equation.
    """
    if which == "fine":
        mask = mesh.fine_boundary_mask
    elif which == "coarse":
        mask = mesh.coarse_boundary_mask
    else:
        raise ValueError(f"which must be 'fine' or 'coarse', got {which!r}")
    return np.flatnonzero(~mask)


def edge_count(tris: np.ndarray) -> int:
    edges = np.sort(np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    return len(np.unique(edges, axis=0))
