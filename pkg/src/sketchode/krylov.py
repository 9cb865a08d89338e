"""Nested (block) Krylov bases by full or k-truncated Arnoldi."""
from __future__ import annotations

import numpy as np

from .linalg import EPS, BreakdownError, Counters, SparseOperator


class KrylovState:
    """Basis ``V`` and block Hessenberg ``H`` of a (block) Arnoldi process.

    After ``m`` steps the basis holds ``m + 1`` blocks of ``block_size``
    columns and ``H`` is the ``(m+1)l x ml`` block upper Hessenberg matrix
    with ``A V_m = V_{m+1} H_m`` (exactly, up to rounding, in both modes).
    ``trunc=None`` orthogonalizes against every previous block (full mode);
    an integer ``k`` only against the ``k`` most recent ones.

    A happy breakdown (the new block vanishes) sets :attr:`breakdown`; the
    last block of ``V`` is then unused and the subdiagonal block is zero.
    """

    def __init__(self, V1: np.ndarray, trunc: int | None = None, capacity: int = 32,
                 reorth: bool = False):
        V1 = np.asarray(V1, dtype=float)
        if V1.ndim == 1:
            V1 = V1[:, None]
        if trunc is not None and trunc < 1:
            raise ValueError("truncation depth must be >= 1 (None for full orthogonalization)")
        self.n, self.block_size = V1.shape
        self.trunc = trunc
        self.reorth = reorth
        self.m = 0
        self.breakdown = False
        self._cap = max(2, capacity)
        ell = self.block_size
        self._V = np.zeros((self.n, self._cap * ell))
        self._H = np.zeros((self._cap * ell, self._cap * ell))
        self._V[:, :ell] = V1
        self._anorm = 0.0

    @property
    def V(self) -> np.ndarray:
        """All ``m + 1`` blocks (a view)."""
        return self._V[:, : (self.m + 1) * self.block_size]

    @property
    def H(self) -> np.ndarray:
        """The ``(m+1)l x ml`` block Hessenberg matrix (a view)."""
        ell = self.block_size
        return self._H[: (self.m + 1) * ell, : self.m * ell]

    def block(self, j: int) -> np.ndarray:
        ell = self.block_size
        return self._V[:, j * ell:(j + 1) * ell]

    def hblock(self, i: int, j: int) -> np.ndarray:
        ell = self.block_size
        return self._H[i * ell:(i + 1) * ell, j * ell:(j + 1) * ell]

    def _grow(self) -> None:
        ell = self.block_size
        cap = 2 * self._cap
        V = np.zeros((self.n, cap * ell))
        H = np.zeros((cap * ell, cap * ell))
        V[:, : self._cap * ell] = self._V
        H[: self._cap * ell, : self._cap * ell] = self._H
        self._V, self._H, self._cap = V, H, cap


def _breakdown_tol(state: KrylovState, A: SparseOperator, z_norm: float) -> float:
    state._anorm = max(state._anorm, z_norm)
    scale = A.norm1 if A.norm1 is not None else state._anorm
    return state.n * EPS * scale


def arnoldi_step(state: KrylovState, A: SparseOperator, counters: Counters | None = None) -> KrylovState:
    """Expand the basis by one block (in place; returns ``state``).

    The new block ``A V_j`` is orthogonalized by modified Gram-Schmidt against
    all previous blocks (full mode) or the ``trunc`` most recent ones, then
    orthonormalized internally by a thin QR with nonnegative diagonal.
    """
    if state.breakdown:
        raise BreakdownError("Krylov space is already invariant")
    counters = counters if counters is not None else Counters()
    ell = state.block_size
    j = state.m
    if j + 2 > state._cap:
        state._grow()
    W = A.apply(state.block(j) if ell > 1 else state.block(j)[:, 0], counters)
    W = W.reshape(state.n, ell)
    tol = _breakdown_tol(state, A, float(np.linalg.norm(W, axis=0).max()))
    lo = 0 if state.trunc is None else max(0, j - state.trunc + 1)
    sweeps = 2 if state.reorth else 1
    for _sweep in range(sweeps):
        for i in range(lo, j + 1):
            Vi = state.block(i)
            h = Vi.T @ W
            W -= Vi @ h
            state.hblock(i, j)[...] += h
            counters.nprods += ell * ell
            counters.nops += ell * ell
    # within-block QR, two sweeps for the block case
    sub = np.zeros((ell, ell))
    newV = np.zeros((state.n, ell))
    for c in range(ell):
        w = W[:, c]
        for _sweep in range(2 if ell > 1 else 0):
            proj = newV[:, :c].T @ w
            w = w - newV[:, :c] @ proj
            sub[:c, c] += proj
        nrm = float(np.linalg.norm(w))
        counters.nops += 1
        if nrm <= tol:
            if c == 0 and np.linalg.norm(W) <= tol * np.sqrt(ell):
                state.breakdown = True
                state.m = j + 1
                state.hblock(j + 1, j)[...] = 0.0
                return state
            raise BreakdownError(f"rank-deficient Krylov block at step {j + 1}")
        sub[c, c] = nrm
        newV[:, c] = w / nrm
        counters.nops += 1
    state.hblock(j + 1, j)[...] = sub
    state.block(j + 1)[...] = newV
    state.m = j + 1
    return state


def arnoldi_step_full(state: KrylovState, A: SparseOperator, counters: Counters | None = None) -> KrylovState:
    if state.trunc is not None:
        raise ValueError("state was created for truncated orthogonalization")
    return arnoldi_step(state, A, counters)


def arnoldi_step_truncated(state: KrylovState, A: SparseOperator, counters: Counters | None = None) -> KrylovState:
    if state.trunc is None:
        raise ValueError("state was created for full orthogonalization")
    return arnoldi_step(state, A, counters)
