"""Complex sparse LU for the local subdomain matrices.

Backed by SuperLU with a minimum-degree ordering on the structure of A + A^T
and threshold partial pivoting.
"""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PIVOT_THRESHOLD = 0.1
ORDERING = "MMD_AT_PLUS_A"


class SingularMatrixError(ValueError):
    """Raised when no usable pivot exists; ``index`` is the offending row if known."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Factorization:
    """Immutable LU factors, ``Pr A Pc = L U``."""

    lu: spla.SuperLU
    n: int

    @property
    def L(self) -> sp.csc_matrix:
        return self.lu.L

    @property
    def U(self) -> sp.csc_matrix:
        return self.lu.U

    @property
    def perm_r(self) -> np.ndarray:
        return self.lu.perm_r

    @property
    def perm_c(self) -> np.ndarray:
        return self.lu.perm_c

    @property
    def nnz(self) -> int:
        return self.lu.L.nnz + self.lu.U.nnz


def factorize(A, ordering: str = ORDERING) -> Factorization:
    """LU of a square sparse matrix.

    Minimum degree suits the small local blocks; large global matrices fill
    far less under ``"COLAMD"``.
    """
    A = sp.csc_matrix(A, dtype=np.complex128)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {A.shape}")
    _check_structure(A)
    try:
        lu = spla.splu(
            A,
            permc_spec=ordering,
            diag_pivot_thresh=PIVOT_THRESHOLD,
            options={"SymmetricMode": False},
        )
    except RuntimeError as exc:
        raise SingularMatrixError(
            f"matrix is exactly singular ({exc})", _locate_zero_pivot(A)
        ) from exc
    return Factorization(lu, n)


def solve(F: Factorization, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    if b.shape[0] != F.n:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {F.n}")
    return F.lu.solve(np.ascontiguousarray(b, dtype=np.complex128))


def _check_structure(A: sp.csc_matrix) -> None:
    col_nnz = np.diff(A.indptr)
    empty = np.flatnonzero(col_nnz == 0)
    if empty.size:
        raise SingularMatrixError(f"column {empty[0]} is structurally empty", int(empty[0]))
    row_nnz = np.bincount(A.indices, minlength=A.shape[0])
    empty = np.flatnonzero(row_nnz == 0)
    if empty.size:
        raise SingularMatrixError(f"row {empty[0]} is structurally empty", int(empty[0]))


def _locate_zero_pivot(A: sp.csc_matrix, dense_limit: int = 4000) -> int | None:
    if A.shape[0] > dense_limit:
        return None
    _, _, U = sla.lu(A.toarray())
    d = np.abs(np.diag(U))
    tol = d.max() * np.finfo(float).eps * A.shape[0] if d.size else 0.0
    bad = np.flatnonzero(d <= tol)
    return int(bad[0]) if bad.size else None


def matrix_key(A: sp.spmatrix) -> str:
    """Content hash of a sparse matrix (structure and values)."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    digest = hashlib.sha1()
    digest.update(np.asarray(A.shape, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(A.indptr, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(A.indices, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(A.data, dtype=np.complex128).tobytes())
    return digest.hexdigest()


class FactorizationCache:
    """Shares one factorization among bitwise-identical matrices.

    Constant-medium decompositions produce many identical local problems, so
    this keeps memory bounded at large subdomain counts.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._store: dict[str, tuple[sp.csr_matrix, Factorization]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)

    def get(self, A) -> Factorization:
        return self.shared(A)[1]

    def shared(self, A) -> tuple[sp.csr_matrix, Factorization]:
        """The first-seen copy of ``A`` and its factorization."""
        if not self.enabled:
            self.misses += 1
            return A, factorize(A)
        key = matrix_key(A)
        with self._lock:
            hit = self._store.get(key)
            if hit is not None:
                self.hits += 1
                return hit
        pair = (A, factorize(A))
        with self._lock:
            pair = self._store.setdefault(key, pair)
            self.misses += 1
        return pair
