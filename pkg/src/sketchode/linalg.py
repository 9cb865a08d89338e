"""Linear-algebra kernels shared by the Krylov solvers.

Sparse operators with operation counting, an incrementally extended thin QR
factorization (modified Gram-Schmidt, always reorthogonalized), the dense
matrix exponential used on compressed matrices, and the scalar phi functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

EPS = np.finfo(float).eps


class BreakdownError(ArithmeticError):
    """A Krylov or QR step could not produce a new independent direction."""


class RankDeficiencyError(BreakdownError):
    """Appended columns are (numerically) in the span of the existing ones."""


@dataclass
class Counters:
    """Operation counts in the layout of the benchmark tables.

    ``nprods``/``sprods`` count Gram-Schmidt projections of length-n and
    length-s vectors, ``nops`` every other length-n vector operation
    (axpy, scaling, norm), ``mfunsize`` the largest matrix handed to
    :func:`dense_expm`.
    """

    mvecs: int = 0
    sprods: int = 0
    nprods: int = 0
    mfuns: int = 0
    mfunsize: int = 0
    nops: int = 0

    def record_mfun(self, size: int) -> None:
        self.mfuns += 1
        self.mfunsize = max(self.mfunsize, int(size))

    def add(self, other: "Counters") -> None:
        for f in fields(self):
            if f.name == "mfunsize":
                self.mfunsize = max(self.mfunsize, other.mfunsize)
            else:
                setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class SparseOperator:
    """The matrix ``A``: compressed sparse rows or a matrix-free closure.

    Parameters
    ----------
    matrix : scipy sparse matrix, optional
        Converted to CSR with sorted column indices.
    apply : callable, optional
        ``apply(V)`` returning ``A @ V`` for a vector or an n x l block. Used
        when the matrix is only available implicitly.
    n : int, optional
        Dimension, required together with ``apply``.
    norm1 : float, optional
        Known (or estimated) 1-norm; computed exactly for CSR storage.
    """

    def __init__(self, matrix=None, *, apply: Callable | None = None, n: int | None = None,
                 norm1: float | None = None):
        if (matrix is None) == (apply is None):
            raise ValueError("give exactly one of matrix or apply")
        if matrix is not None:
            csr = sp.csr_matrix(matrix, dtype=float)
            if csr.shape[0] != csr.shape[1]:
                raise ValueError(f"operator must be square, got {csr.shape}")
            csr.sum_duplicates()
            csr.sort_indices()
            if csr.nnz and (csr.indices.min() < 0 or csr.indices.max() >= csr.shape[0]):
                raise ValueError("column index out of range")
            self.csr = csr
            self._apply = None
            self.n = csr.shape[0]
            self.nnz = csr.nnz
            self.norm1 = float(abs(csr).sum(axis=0).max()) if csr.nnz else 0.0
        else:
            if n is None:
                raise ValueError("matrix-free operators need n")
            self.csr = None
            self._apply = apply
            self.n = int(n)
            self.nnz = None
            self.norm1 = norm1

    @classmethod
    def from_csr(cls, indptr, indices, data, n: int) -> "SparseOperator":
        return cls(sp.csr_matrix((data, indices, indptr), shape=(n, n)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def is_matrix_free(self) -> bool:
        return self.csr is None

    def apply(self, v: np.ndarray, counters: Counters | None = None) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: operator is {self.n}, vector is {v.shape[0]}")
        out = self.csr @ v if self._apply is None else np.asarray(self._apply(v), dtype=float)
        if out.shape != v.shape:
            raise ValueError(f"apply returned shape {out.shape}, expected {v.shape}")
        if counters is not None:
            counters.mvecs += 1 if v.ndim == 1 else v.shape[1]
        return out

    __matmul__ = apply

    def todense(self) -> np.ndarray:
        if self.csr is not None:
            return self.csr.toarray()
        return self.apply(np.eye(self.n))

    def __repr__(self) -> str:
        kind = "matrix-free" if self.is_matrix_free else f"csr, nnz={self.nnz}"
        return f"SparseOperator(n={self.n}, {kind})"


def as_operator(A) -> SparseOperator:
    """Wrap a scipy sparse matrix, dense array or existing operator."""
    if isinstance(A, SparseOperator):
        return A
    if sp.issparse(A) or isinstance(A, np.ndarray):
        return SparseOperator(A)
    raise TypeError(f"cannot interpret {type(A).__name__} as an operator")


def spmv(A: SparseOperator, v: np.ndarray, counters: Counters | None = None) -> np.ndarray:
    """Return ``A @ v``, counting one matvec per column of ``v``."""
    return A.apply(v, counters)


@dataclass
class ThinQr:
    """Thin QR factorization ``M = Q R`` grown column by column.

    Storage is preallocated for ``capacity`` columns and doubled on demand;
    :attr:`Q` and :attr:`R` are views of the active part.
    """

    s: int
    capacity: int = 16
    d: int = 0
    _Q: np.ndarray = field(init=False, repr=False)
    _R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.capacity = max(1, min(self.capacity, self.s))
        self._Q = np.zeros((self.s, self.capacity))
        self._R = np.zeros((self.capacity, self.capacity))

    @property
    def Q(self) -> np.ndarray:
        return self._Q[:, : self.d]

    @property
    def R(self) -> np.ndarray:
        return self._R[: self.d, : self.d]

    def _grow(self, needed: int) -> None:
        if needed <= self.capacity:
            return
        cap = min(self.s, max(needed, 2 * self.capacity))
        Q = np.zeros((self.s, cap))
        R = np.zeros((cap, cap))
        Q[:, : self.d] = self.Q
        R[: self.d, : self.d] = self.R
        self._Q, self._R, self.capacity = Q, R, cap


def qr_append(qr: ThinQr, newcols: np.ndarray, counters: Counters | None = None) -> ThinQr:
    """Extend ``qr`` by the columns of ``newcols`` (in place; returns ``qr``).

    Each column is orthogonalized by two modified Gram-Schmidt sweeps. The new
    diagonal entries are the remaining norms and therefore nonnegative. If a
    column is numerically dependent (remaining norm below
    ``s * eps * ||column||``) :class:`RankDeficiencyError` is raised and ``qr``
    is left unchanged.
    """
    cols = np.asarray(newcols, dtype=float)
    if cols.ndim == 1:
        cols = cols[:, None]
    if cols.shape[0] != qr.s:
        raise ValueError(f"expected {qr.s} rows, got {cols.shape[0]}")
    ell = cols.shape[1]
    d0 = qr.d
    if d0 + ell > qr.s:
        raise RankDeficiencyError(f"cannot hold {d0 + ell} independent columns in dimension {qr.s}")
    qr._grow(d0 + ell)
    Q, R = qr._Q, qr._R
    nproj = 0
    for j in range(ell):
        c = cols[:, j].copy()
        scale = np.linalg.norm(c)
        d = d0 + j
        r = np.zeros(d)
        for _sweep in range(2):
            for i in range(d):
                coef = Q[:, i] @ c
                c -= coef * Q[:, i]
                r[i] += coef
            nproj += d
        rdd = np.linalg.norm(c)
        if not np.isfinite(rdd) or rdd <= qr.s * EPS * scale or scale == 0.0:
            Q[:, d0:d + 1] = 0.0
            R[: d + 1, d0:d + 1] = 0.0
            raise RankDeficiencyError(f"column {d} is numerically dependent (residual {rdd:.3e})")
        Q[:, d] = c / rdd
        R[:d, d] = r
        R[d, d] = rdd
    qr.d = d0 + ell
    if counters is not None:
        counters.sprods += nproj
    return qr


def orthonormalize_block(B: np.ndarray, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis ``V`` (n x r) and coefficients ``C`` (r x c) with ``B = V C``.

    Columns dependent on earlier ones (or zero) contribute no basis vector,
    so ``r`` is the numerical rank. Two Gram-Schmidt sweeps per column.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float).T).T
    n, c = B.shape
    scale = max(np.linalg.norm(B, axis=0).max(initial=0.0), np.finfo(float).tiny)
    tol = n * EPS * scale if tol is None else tol
    V = np.zeros((n, 0))
    C = np.zeros((0, c))
    for j in range(c):
        v = B[:, j].copy()
        coef = np.zeros(V.shape[1])
        for _sweep in range(2):
            proj = V.T @ v
            v -= V @ proj
            coef += proj
        C[:, j] = coef
        nrm = np.linalg.norm(v)
        if nrm > tol:
            V = np.column_stack([V, v / nrm])
            row = np.zeros((1, c))
            row[0, j] = nrm
            C = np.vstack([C, row])
    return V, C


def dense_expm(M: np.ndarray) -> np.ndarray:
    """Matrix exponential of a small dense matrix.

    Scaling and squaring with the degree-13 diagonal Pade approximant
    (``scipy.linalg.expm``).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise FloatingPointError("non-finite entries in matrix exponential argument")
    if M.size == 0:
        return M.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(M)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("matrix exponential overflowed")
    return E


_PHI_TERMS = 20


def _phi_series(z, k: int, terms: int):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for j in range(terms - 1, -1, -1):
        out = out * z + 1.0 / math.factorial(j + k)
    return out


SERIES_SWITCH = 1e-4


def phi1(z):
    """``(e^z - 1) / z`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_SWITCH
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.expm1(z) / z
    out = np.where(small, _phi_series(z, 1, 8), direct)
    return out[()] if out.ndim == 0 else out


def phi2(z):
    """``(e^z - 1 - z) / z^2`` with the removable singularity at 0.

    The closed form cancels badly for |z| < 1, so a longer Taylor expansion
    is used there; the 8-term series covers |z| < 1e-4.
    """
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        direct = (np.expm1(z) - z) / (z * z)
    out = np.where(az < SERIES_SWITCH, _phi_series(z, 2, 8),
                   np.where(az < 1.0, _phi_series(z, 2, _PHI_TERMS), direct))
    return out[()] if out.ndim == 0 else out


def companion_operator(A: SparseOperator) -> SparseOperator:
    """First-order companion form ``[[0, -I], [A, 0]]`` of ``y'' = -A y``.

    Applied matrix-free as ``[v1; v2] -> [-v2; A v1]``, i.e. at the cost of a
    single product with ``A``.
    """
    n = A.n

    def apply(v):
        out = np.empty_like(v)
        out[:n] = -v[n:]
        out[n:] = A.apply(v[:n])
        return out

    norm1 = None if A.norm1 is None else max(1.0, A.norm1)
    return SparseOperator(apply=apply, n=2 * n, norm1=norm1)
