"""Sparse direct factorizations reused across time steps."""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla


class FactorizationError(RuntimeError):
    """Raised when a matrix is numerically singular."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


def _first_null_pivot(A: sp.csc_matrix) -> int | None:
    diag = A.diagonal()
    zero_rows = np.flatnonzero(np.diff(A.tocsr().indptr) == 0)
    zero_cols = np.flatnonzero(np.diff(A.indptr) == 0)
    candidates = [int(a[0]) for a in (zero_rows, zero_cols) if len(a)]
    if candidates:
        return min(candidates)
    zero_diag = np.flatnonzero(diag == 0)
    return int(zero_diag[0]) if len(zero_diag) else None


class Factorization:
    """LU (or symmetric-mode LU for SPD input) factors of a square matrix.

    Solves may be issued from several threads; SuperLU handles are not
    reentrant, so calls are serialized per factorization.
    """

    def __init__(self, matrix: sp.spmatrix, spd: bool = False):
        A = sp.csc_matrix(matrix, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self.spd = spd
        self._lock = threading.Lock()
        if A.shape[0] == 0:
            self._lu = None
            return
        kwargs = {}
        if spd:
            kwargs = dict(
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        try:
            self._lu = sla.splu(A, **kwargs)
        except RuntimeError as exc:
            raise FactorizationError(f"factorization failed: {exc}", _first_null_pivot(A)) from exc
        udiag = self._lu.U.diagonal()
        tiny = np.abs(udiag) <= np.finfo(float).eps * max(abs(A).max(), 1e-300) * A.shape[0]
        if tiny.any():
            k = int(np.flatnonzero(tiny)[0])
            raise FactorizationError("matrix is numerically singular", int(self._lu.perm_c[k]))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, operator has {self.shape[0]}")
        if self._lu is None:
            return rhs.copy()
        with self._lock:
            return self._lu.solve(rhs)


def factorize(op) -> Factorization:
    """Factorize a :class:`~bilinear_cg.fem.SparseOperator` or a sparse matrix."""
    matrix = getattr(op, "matrix", op)
    spd = bool(getattr(op, "positive_definite", False))
    return Factorization(matrix, spd=spd)


def solve(f: Factorization, rhs: np.ndarray) -> np.ndarray:
    return f.solve(rhs)
