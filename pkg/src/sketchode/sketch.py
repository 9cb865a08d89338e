"""Sparse sign subspace embeddings and sketched basis whitening.

The whitened basis ``U = V R^{-1}`` (``S V = Q R``) is never formed; every
consumer goes through triangular solves with ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .krylov import KrylovState
from .linalg import Counters, ThinQr, qr_append


@dataclass(frozen=True, eq=False)
class SparseSignEmbedding:
    """``S`` in R^{s x n} with exactly ``zeta`` nonzeros ``+-scale`` per column.

    ``scale`` is ``1/sqrt(zeta)`` (``E |Sv|^2 = |v|^2``) or, with
    ``scaling="nominal"``, ``sqrt(n/s)/sqrt(zeta)``. Built by
    :func:`new_embedding`; immutable and safe to share between solves.
    """

    n: int
    s: int
    zeta: int
    seed: int
    rows: np.ndarray   # n x zeta row positions
    signs: np.ndarray  # n x zeta, entries +-1
    matrix: sp.csr_matrix
    scaling: str = "unit"

    @property
    def scale(self) -> float:
        return _entry_scale(self.n, self.s, self.zeta, self.scaling)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: embedding acts on {self.n}, got {v.shape[0]}")
        return self.matrix @ v

    __matmul__ = apply

    def todense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class IdentityEmbedding:
    """``S = I``: reduces every sketched quantity to its classical counterpart."""

    n: int

    @property
    def s(self) -> int:
        return self.n

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: embedding acts on {self.n}, got {v.shape[0]}")
        return v.copy()

    __matmul__ = apply

    def todense(self) -> np.ndarray:
        return np.eye(self.n)


SCALINGS = ("unit", "nominal")


def _entry_scale(n: int, s: int, zeta: int, scaling: str) -> float:
    if scaling == "unit":
        return float(1.0 / np.sqrt(zeta))
    if scaling == "nominal":
        return float(np.sqrt(n / s) / np.sqrt(zeta))
    raise ValueError(f"unknown scaling '{scaling}' (choose from {', '.join(SCALINGS)})")


def new_embedding(n: int, s: int, zeta: int = 1, seed: int = 0, scaling: str = "unit") -> SparseSignEmbedding:
    """Draw a sparse sign embedding.

    ``scaling="unit"`` gives entries ``+-1/sqrt(zeta)`` so that
    ``E |Sv|^2 = |v|^2``; ``"nominal"`` multiplies by ``sqrt(n/s)``, which
    leaves every sketched-Arnoldi iterate unchanged but inflates sketched
    norms by that factor. Row positions are sampled uniformly without replacement per column and
    signs are Rademacher, both from a ``Philox`` counter-based generator so
    the result depends on ``seed`` only.
    """
    n, s, zeta = int(n), int(s), int(zeta)
    if s > n:
        raise ValueError(f"sketch dimension s={s} exceeds ambient dimension n={n}")
    if not 1 <= zeta <= s:
        raise ValueError(f"need 1 <= zeta <= s, got zeta={zeta}, s={s}")
    rng = np.random.Generator(np.random.Philox(seed))
    rows = np.empty((n, zeta), dtype=np.int64)
    for j in range(zeta):
        # j-th smallest unused index drawn from the remaining s - j
        r = rng.integers(0, s - j, size=n)
        taken = np.sort(rows[:, :j], axis=1)
        for i in range(j):
            r = r + (r >= taken[:, i])
        rows[:, j] = r
    signs = rng.integers(0, 2, size=(n, zeta)) * 2 - 1
    value = _entry_scale(n, s, zeta, scaling)
    cols = np.repeat(np.arange(n), zeta)
    matrix = sp.csr_matrix((value * signs.ravel().astype(float), (rows.ravel(), cols)), shape=(s, n))
    matrix.sort_indices()
    return SparseSignEmbedding(n=n, s=s, zeta=zeta, seed=seed, rows=rows, signs=signs, matrix=matrix,
                              scaling=scaling)


def sketch_apply(S, v: np.ndarray) -> np.ndarray:
    return S.apply(v)


def basis_distortion(S, V: np.ndarray) -> float:
    """Smallest ``eps`` with ``(1-eps)|v|^2 <= |Sv|^2 <= (1+eps)|v|^2`` on ``span(V)``."""
    Qv, _ = np.linalg.qr(np.asarray(V, dtype=float))
    sv = np.linalg.svd(S.apply(Qv), compute_uv=False)
    return float(max(sv[0] ** 2 - 1.0, 1.0 - sv[-1] ** 2))


def vector_distortion(S, V: np.ndarray) -> float:
    """Largest ``| |Sv|^2/|v|^2 - 1 |`` over the individual columns of ``V``."""
    V = np.asarray(V, dtype=float)
    ratio = np.linalg.norm(S.apply(V), axis=0) ** 2 / np.linalg.norm(V, axis=0) ** 2
    return float(np.abs(ratio - 1.0).max())


class SketchState:
    """Incremental QR of ``S V`` and the compressed matrix ``R H R^{-1}``.

    ``hhat`` holds ``R_m H_m R_m^{-1}`` for the ``m`` blocks of the last
    update. The compressed matrix the projected problem needs after ``m``
    steps additionally carries the rank-l correction ``C_m E_m^T`` (see
    :meth:`compressed`), which requires the QR of ``m + 1`` blocks.
    """

    def __init__(self, embedding, block_size: int, capacity: int = 32):
        self.embedding = embedding
        self.block_size = block_size
        self.qr = ThinQr(embedding.s, capacity=capacity * block_size)
        self.m = 0
        self._hhat = np.zeros((0, 0))

    @property
    def nblocks(self) -> int:
        return self.qr.d // self.block_size

    @property
    def R(self) -> np.ndarray:
        return self.qr.R

    @property
    def hhat(self) -> np.ndarray:
        return self._hhat

    def pblock(self, j: int) -> np.ndarray:
        """Diagonal block ``p_{j+1}`` of ``R`` (0-based block index ``j``)."""
        ell = self.block_size
        return self.qr.R[j * ell:(j + 1) * ell, j * ell:(j + 1) * ell]

    def append(self, Vblock: np.ndarray, counters: Counters | None = None) -> None:
        """Sketch a new basis block and extend the QR factorization."""
        qr_append(self.qr, self.embedding.apply(Vblock), counters)

    def start(self, krylov: KrylovState) -> None:
        """QR of the first sketched block and ``hhat = p_1 H_11 p_1^{-1}``."""
        p1 = self.pblock(0)
        h11 = krylov.hblock(0, 0)
        self._hhat = _right_solve(p1, p1 @ h11)
        self.m = 1

    def coupling(self, krylov: KrylovState, m: int) -> np.ndarray:
        """``p_{m+1} h_{m+1,m} p_m^{-1}`` (zero after a happy breakdown at step m)."""
        ell = self.block_size
        h = krylov.hblock(m, m - 1)
        if not np.any(h):
            return np.zeros((ell, ell))
        return _right_solve(self.pblock(m - 1), self.pblock(m) @ h)

    def compressed(self, krylov: KrylovState, m: int) -> np.ndarray:
        """``hhat_m + C_m E_m^T`` with ``C_m = R_m' h_{m+1,m} p_m^{-1}``.

        For ``m`` below the last update this is the leading ``ml`` block of
        :attr:`hhat` (the compressed matrices are nested).
        """
        ell = self.block_size
        d = m * ell
        if m < self.m:
            return self._hhat[:d, :d].copy()
        if m != self.m:
            raise ValueError(f"compressed matrix for m={m} requested, state is at m={self.m}")
        Hc = self._hhat.copy()
        h = krylov.hblock(m, m - 1)
        if np.any(h):
            Rcol = self.qr.R[:d, d:d + ell]
            Hc[:, d - ell:] += _right_solve(self.pblock(m - 1), Rcol @ h)
        return Hc

    def hhat_update(self, krylov: KrylovState) -> np.ndarray:
        """Advance ``hhat`` from ``m`` to ``m + 1`` blocks by the block update formulas.

        Needs the QR of ``m + 1`` sketched blocks and the Hessenberg column
        block ``m + 1``. Work is O(m^2 l^3): two block products, two block
        scalings and one rank-l update, never a product with ``V``.
        """
        ell = self.block_size
        m = self.m
        d = m * ell
        R = self.qr.R
        Rm = R[:d, :d]
        Rcol = R[:d, d:d + ell]                    # R_m' (above-diagonal block of R_{m+1})
        p_new = R[d:d + ell, d:d + ell]            # p_{m+1}
        p_old = R[d - ell:d, d - ell:d]            # p_m
        Hcol = krylov._H[:d, d:d + ell]            # block column m+1 of H above the diagonal
        h_sub = krylov.hblock(m, m - 1)            # h_{m+1,m}
        h_diag = krylov.hblock(m, m)               # h_{m+1,m+1}

        h_sub_pinv = _right_solve(p_old, h_sub)    # h_{m+1,m} p_m^{-1}
        Hc = self._hhat.copy()
        Hc[:, d - ell:] += Rcol @ h_sub_pinv       # hhat_m + C_m E_m^T
        top_right = _right_solve(p_new, -Hc @ Rcol + Rm @ Hcol + Rcol @ h_diag)
        bottom_left = p_new @ h_sub_pinv
        bottom_right = _right_solve(p_new, p_new @ (h_diag - h_sub_pinv @ Rcol[d - ell:, :]))

        new = np.empty((d + ell, d + ell))
        new[:d, :d] = Hc
        new[:d, d:] = top_right
        new[d:, :d] = 0.0
        new[d:, d - ell:d] = bottom_left
        new[d:, d:] = bottom_right
        self._hhat = new
        self.m = m + 1
        return new

    def solve_R(self, x: np.ndarray, m: int) -> np.ndarray:
        """``R_m^{-1} x`` by back substitution."""
        d = m * self.block_size
        return scipy.linalg.solve_triangular(self.qr.R[:d, :d], x, lower=False)


def _right_solve(p: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``X p^{-1}`` for upper triangular ``p``."""
    if p.shape == (1, 1):
        return X / p[0, 0]
    return scipy.linalg.solve_triangular(p, X.T, trans="T", lower=False).T
