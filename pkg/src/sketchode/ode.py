"""Krylov solvers for ``D y = -A y + w`` with ``D`` the first or second time derivative.

:func:`fom_solve` is the classical Arnoldi (FOM) approximation with the
exact residual norm ``|h_{m+1,m} [x_m]_m|``; :func:`sfom_solve` the sketched
Arnoldi approximation with the sketched residual norm as stopping criterion.
Both evaluate the residual on ``n_t`` equidistant points of ``(0, T]`` every
``update`` iterations and stop once its maximum drops below ``tol``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .krylov import KrylovState, arnoldi_step
from .linalg import (
    BreakdownError,
    Counters,
    RankDeficiencyError,
    SparseOperator,
    as_operator,
    companion_operator,
    dense_expm,
    orthonormalize_block,
    phi1,
    phi2,
)
from .sketch import IdentityEmbedding, SketchState, new_embedding


@dataclass
class OdeProblem:
    """``y' = -A y + w`` (order 1) or ``y'' = -A y + w`` (order 2) on ``(0, T]``."""

    A: SparseOperator
    y0: np.ndarray
    T: float
    order: int = 1
    y1: np.ndarray | None = None
    w: np.ndarray | None = None

    def __post_init__(self):
        self.A = as_operator(self.A)
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if not self.T >= 0:
            raise ValueError(f"horizon must be nonnegative, got {self.T}")
        n = self.A.n
        self.y0 = _vector(self.y0, n, "y0")
        if self.order == 2:
            self.y1 = np.zeros(n) if self.y1 is None else _vector(self.y1, n, "y1")
        elif self.y1 is not None:
            raise ValueError("y1 is only meaningful for second-order problems")
        if self.w is not None:
            self.w = _vector(self.w, n, "w")

    @property
    def n(self) -> int:
        return self.A.n


def _vector(v, n: int, name: str) -> np.ndarray:
    v = np.array(v, dtype=float).ravel()
    if v.shape != (n,):
        raise ValueError(f"{name} has length {v.shape[0]}, operator dimension is {n}")
    return v


def companion_problem(p: OdeProblem) -> OdeProblem:
    """Rewrite a second-order problem as the doubled first-order one."""
    if p.order != 2:
        raise ValueError("companion form applies to second-order problems")
    w = None if p.w is None else np.concatenate([np.zeros(p.n), p.w])
    return OdeProblem(companion_operator(p.A), np.concatenate([p.y0, p.y1]), p.T, order=1, w=w)


@dataclass
class ProjectedSolution:
    thetas: np.ndarray
    X: np.ndarray   # d x n_t coefficient vectors
    dX: np.ndarray  # their time derivatives


def projected_ivp_solve(Hc: np.ndarray, x0: np.ndarray, w_proj: np.ndarray | None = None, *,
                        t: float, n_t: int, order: int = 1, x1: np.ndarray | None = None,
                        counters: Counters | None = None) -> ProjectedSolution:
    """Solve the projected problem on ``theta_i = i t / n_t``, ``i = 1..n_t``.

    One matrix exponential of the step generator (augmented by one row and
    column for a forcing term, doubled to companion form for order 2) is
    applied repeatedly to march over the grid.
    """
    Hc = np.atleast_2d(np.asarray(Hc, dtype=float))
    d = Hc.shape[0]
    x0 = np.asarray(x0, dtype=float).reshape(d)
    forced = w_proj is not None and np.any(w_proj)
    if order == 1:
        G = -Hc
        z0 = x0
    elif order == 2:
        G = np.block([[np.zeros((d, d)), np.eye(d)], [-Hc, np.zeros((d, d))]])
        z0 = np.concatenate([x0, np.zeros(d) if x1 is None else np.asarray(x1, dtype=float).reshape(d)])
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    k = G.shape[0]
    if forced:
        Ga = np.zeros((k + 1, k + 1))
        Ga[:k, :k] = G
        Ga[k - d:k, k] = w_proj
        G = Ga
        z0 = np.concatenate([z0, [1.0]])
    h = t / n_t
    E = dense_expm(h * G)
    if counters is not None:
        counters.record_mfun(G.shape[0])
    Z = np.empty((G.shape[0], n_t))
    z = z0
    for i in range(n_t):
        z = E @ z
        Z[:, i] = z
    if not np.all(np.isfinite(Z)):
        raise FloatingPointError("projected solution is not finite")
    X = Z[:d]
    if order == 1:
        dX = -Hc @ X
        if forced:
            dX += np.asarray(w_proj, dtype=float)[:, None]
    else:
        dX = Z[d:2 * d]
    return ProjectedSolution(h * np.arange(1, n_t + 1), X, dX)


@dataclass
class ResidualEstimate:
    """Residual norms on an equidistant grid; ``delta`` is their maximum."""

    thetas: np.ndarray
    beta_norms: np.ndarray
    delta: float


def fom_residual_norm(g_sub, x_last) -> float | np.ndarray:
    """``|g_{m+1,m} [x_m(theta)]_m|``; a block coupling gives the 2-norm per column."""
    g = np.atleast_2d(np.asarray(g_sub, dtype=float))
    x = np.asarray(x_last, dtype=float)
    if x.ndim == 1 and g.shape == (1, 1):
        return np.abs(g[0, 0] * x) if x.size > 1 else float(abs(g[0, 0] * x[0]))
    x = x.reshape(g.shape[1], -1)
    return np.linalg.norm(g @ x, axis=0)


def sketched_residual(coupling: np.ndarray, sol: ProjectedSolution) -> ResidualEstimate:
    """``beta_m(theta) = -p_{m+1} h_{m+1,m} p_m^{-1} [x_m(theta)]_{last block}`` on the grid."""
    ell = coupling.shape[0]
    beta = -coupling @ sol.X[-ell:, :]
    norms = np.linalg.norm(beta, axis=0)
    return ResidualEstimate(sol.thetas, norms, float(norms.max()))


def assemble_solution(V: np.ndarray, R: np.ndarray | None, x: np.ndarray,
                      counters: Counters | None = None) -> np.ndarray:
    """``V (R^{-1} x)``: back substitution, then one product with the basis."""
    c = np.asarray(x, dtype=float)
    if R is not None:
        diag = np.abs(np.diag(R))
        if diag.size and diag.min() == 0.0:
            raise BreakdownError("singular triangular factor")
        c = scipy.linalg.solve_triangular(R, c, lower=False)
    if counters is not None:
        counters.nops += V.shape[1] * (1 if c.ndim == 1 else c.shape[1])
    return V @ c


@dataclass
class Iterate:
    """Everything needed to evaluate the Krylov approximation after ``m`` steps.

    ``R`` is the triangular factor of the sketched basis (``None`` when the
    basis ``V`` is orthonormal); ``offset`` is added to lifted positions when
    a nonzero initial state was absorbed into the forcing term.
    """

    m: int
    order: int
    Hc: np.ndarray
    coupling: np.ndarray
    x0: np.ndarray
    V: np.ndarray
    R: np.ndarray | None = None
    x1: np.ndarray | None = None
    w_proj: np.ndarray | None = None
    offset: np.ndarray | None = None

    def solve(self, t: float, n_t: int, counters: Counters | None = None) -> ProjectedSolution:
        return projected_ivp_solve(self.Hc, self.x0, self.w_proj, t=t, n_t=n_t, order=self.order,
                                   x1=self.x1, counters=counters)

    def residual(self, t: float, n_t: int, counters: Counters | None = None):
        sol = self.solve(t, n_t, counters)
        return sketched_residual(self.coupling, sol), sol

    def lift(self, x: np.ndarray, counters: Counters | None = None, *, derivative: bool = False) -> np.ndarray:
        y = assemble_solution(self.V, self.R, x, counters)
        if self.offset is not None and not derivative:
            y = y + (self.offset if y.ndim == 1 else self.offset[:, None])
        return y


@dataclass
class RestartEvent:
    cycle: int
    m: int
    tau: float
    reason: str


@dataclass
class SolveReport:
    """Outcome of a solve: solution at ``T``, residual history and counters.

    ``history`` holds ``(iteration, delta, wallclock_ms)`` per residual check.
    """

    method: str
    converged: bool
    m: int
    delta: float
    history: list[tuple[int, float, float]]
    counters: Counters
    y: np.ndarray
    dy: np.ndarray | None = None
    x: np.ndarray | None = None
    iterate: Iterate | None = None
    unstable: bool = False
    reason: str = ""
    block_size: int = 1
    time_s: float = 0.0
    restarts: list[RestartEvent] = field(default_factory=list)
    cycles: list["SolveReport"] = field(default_factory=list)
    iterate_at: Callable[[int], Iterate] | None = field(default=None, repr=False)
    taus: list[float] = field(default_factory=list)  # committed restart steps
    t_final: float | None = None                      # length of the last interval

    @property
    def deltas(self) -> list[float]:
        return [d for _, d, _ in self.history]


def error_bound(delta: float, t: float, C1: float = 1.0, omega1: float = 0.0, eps: float = 0.0,
                order: int = 1) -> float:
    """A-posteriori error bound from a uniform (sketched) residual bound ``delta``.

    Order 1, with ``|exp(-tA)| <= C1 exp(-t omega1)``:
    ``C1 / sqrt(1-eps) * t * phi1(-t omega1) * delta``. Order 2, with a cosine
    family bounded by ``C1 exp(t omega1)``: ``C1 / sqrt(1-eps) * t^2 * phi2(t omega1) * delta``.
    ``eps = 0`` is the unsketched bound.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"distortion must satisfy 0 <= eps < 1, got {eps}")
    if C1 <= 0:
        raise ValueError("C1 must be positive")
    scale = C1 / np.sqrt(1.0 - eps)
    if order == 1:
        return float(scale * t * phi1(-t * omega1) * delta)
    if order == 2:
        return float(scale * t * t * phi2(t * omega1) * delta)
    raise ValueError(f"order must be 1 or 2, got {order}")


# ---------------------------------------------------------------------------
# drivers


@dataclass
class _Start:
    V1: np.ndarray
    coeffs: dict[str, np.ndarray]  # role -> coefficient in the first block
    offset: np.ndarray | None


def _start_block(p: OdeProblem, counters: Counters) -> _Start:
    y0, w = p.y0, p.w
    offset = None
    if w is not None and np.any(w) and np.any(y0):
        # shift to a zero initial state so that w lies in the first block
        w = w - p.A.apply(y0, counters)
        offset, y0 = y0, np.zeros_like(y0)
        counters.nops += 1
    roles = {"x0": y0}
    if p.order == 2:
        roles["x1"] = p.y1
    if w is not None:
        roles["w"] = w
    names = list(roles)
    V1, C = orthonormalize_block(np.column_stack([roles[k] for k in names]))
    counters.nops += 2 * len(names)
    return _Start(V1, {k: C[:, i] for i, k in enumerate(names)}, offset)


def _initial_coeffs(start: _Start, p1: np.ndarray, d: int) -> dict[str, np.ndarray | None]:
    out = {}
    for role in ("x0", "x1", "w"):
        c = start.coeffs.get(role)
        if c is None or not np.any(c):
            out[role] = None
            continue
        v = np.zeros(d)
        v[: p1.shape[0]] = p1 @ c
        out[role] = v
    if out["x0"] is None:
        out["x0"] = np.zeros(d)
    return out


def _trivial_report(method: str, p: OdeProblem, start: _Start, counters: Counters, t0: float) -> SolveReport:
    y = np.zeros(p.n) if start.offset is None else start.offset.copy()
    dy = np.zeros(p.n) if p.order == 2 else None
    return SolveReport(method, True, 0, 0.0, [], counters, y, dy, np.zeros(0), None,
                       time_s=time.perf_counter() - t0, block_size=0)


def _finish(method, p, it: Iterate | None, sol, est, history, counters, converged, unstable, reason,
            t0, ell, iterate_at) -> SolveReport:
    if it is None:
        raise BreakdownError("no iterate could be formed")
    x = sol.X[:, -1]
    y = it.lift(x, counters)
    dy = it.lift(sol.dX[:, -1], counters, derivative=True) if p.order == 2 else None
    return SolveReport(method, converged, it.m, est.delta, history, counters, y, dy, x, it,
                       unstable=unstable, reason=reason, block_size=ell,
                       time_s=time.perf_counter() - t0, iterate_at=iterate_at)


def fom_solve(p: OdeProblem, tol: float = 1e-8, m_max: int = 100, n_t: int = 5, update: int = 10,
              *, reorth: bool = False, monitor: Callable | None = None) -> SolveReport:
    """Arnoldi (FOM) approximation with the exact residual norm as stopping criterion.

    The basis is built by full modified Gram-Schmidt Arnoldi. Second-order
    problems use the block Krylov space of ``[y0, y1]``; pass
    :func:`companion_problem` output to work in the doubled first-order space
    instead.
    """
    t0 = time.perf_counter()
    counters = Counters()
    start = _start_block(p, counters)
    ell = start.V1.shape[1]
    if ell == 0:
        return _trivial_report("fom", p, start, counters, t0)
    m_max = int(m_max)
    kr = KrylovState(start.V1, trunc=None, capacity=m_max + 2, reorth=reorth)
    coeffs = _initial_coeffs(start, np.eye(ell), m_max * ell)

    def iterate_at(m: int) -> Iterate:
        d = m * ell
        return Iterate(m, p.order, kr._H[:d, :d].copy(), kr.hblock(m, m - 1).copy(),
                       coeffs["x0"][:d], kr._V[:, :d], None,
                       None if coeffs["x1"] is None else coeffs["x1"][:d],
                       None if coeffs["w"] is None else coeffs["w"][:d], start.offset)

    return _drive("fom", p, tol, m_max, n_t, update, monitor, counters, t0, ell, iterate_at,
                  step=lambda: arnoldi_step(kr, p.A, counters), after_step=None,
                  happy=lambda: kr.breakdown)


def sfom_solve(p: OdeProblem, tol: float = 1e-8, m_restart: int = 100, s: int | None = None,
               zeta: int = 1, k: int | None = 2, n_t: int = 5, update: int = 10, seed: int = 0,
               *, embedding=None, monitor: Callable | None = None) -> SolveReport:
    """Residual-based sketched Arnoldi approximation (at most ``m_restart`` iterations).

    The basis comes from ``k``-truncated Arnoldi (``k=None``: full
    orthogonalization). Each new block is sketched and appended to the QR
    factorization of ``S V``; the compressed matrix is advanced by the block
    update formulas and the sketched residual norm is checked every
    ``update`` iterations. The solution is returned as ``V (R^{-1} x)``.

    ``embedding`` overrides ``s``/``zeta``/``seed``; see
    :func:`default_embedding` for the default. ``monitor(history)`` is called
    after every unconverged residual check and stops the iteration (flagged
    as unstable) when it returns True.
    """
    t0 = time.perf_counter()
    counters = Counters()
    start = _start_block(p, counters)
    ell = start.V1.shape[1]
    if ell == 0:
        return _trivial_report("sfom", p, start, counters, t0)
    m_max = int(m_restart)
    if embedding is None:
        embedding = default_embedding(p.n, m_max, ell, s, zeta, seed)
    elif embedding.n != p.n:
        raise ValueError(f"embedding acts on dimension {embedding.n}, problem has {p.n}")
    need = min((m_max + 1) * ell, p.n)
    if embedding.s < need:
        raise ValueError(f"sketch dimension {embedding.s} is smaller than the basis dimension {need}")

    kr = KrylovState(start.V1, trunc=k, capacity=m_max + 2)
    sk = SketchState(embedding, ell, capacity=m_max + 1)
    coeffs: dict = {}

    def iterate_at(m: int) -> Iterate:
        d = m * ell
        return Iterate(m, p.order, sk.compressed(kr, m), sk.coupling(kr, m),
                       coeffs["x0"][:d], kr._V[:, :d], sk.R[:d, :d].copy(),
                       None if coeffs["x1"] is None else coeffs["x1"][:d],
                       None if coeffs["w"] is None else coeffs["w"][:d], start.offset)

    arnoldi_step(kr, p.A, counters)
    sk.append(start.V1, counters)
    sk.start(kr)
    coeffs.update(_initial_coeffs(start, sk.pblock(0), (m_max + 1) * ell))

    def step():
        arnoldi_step(kr, p.A, counters)

    def after_step():
        sk.hhat_update(kr)

    def before_check(m: int):
        if not kr.breakdown:
            sk.append(kr.block(m), counters)

    return _drive("sfom", p, tol, m_max, n_t, update, monitor, counters, t0, ell, iterate_at,
                  step=step, after_step=after_step, happy=lambda: kr.breakdown,
                  first_step_done=True, before_check=before_check)


def default_embedding(n: int, m_max: int, ell: int, s: int | None = None, zeta: int = 1,
                      seed: int = 0, scaling: str = "unit"):
    """Sparse sign embedding with ``s = 2 m_max l`` rows, or ``S = I`` if that is not below ``n``.

    A sign matrix with as many rows as columns is singular with high
    probability (hash collisions) and saves nothing over the identity.
    """
    if s is None:
        s = 2 * m_max * ell
        if s >= n:
            return IdentityEmbedding(n)
    return new_embedding(n, int(s), zeta, seed, scaling)


def _drive(method, p, tol, m_max, n_t, update, monitor, counters, t0, ell, iterate_at, *, step,
           after_step, happy, first_step_done=False, before_check=None) -> SolveReport:
    """Common iteration skeleton: step, (sketch), periodic residual check."""
    history: list[tuple[int, float, float]] = []
    last = None  # (iterate, solution, estimate)
    converged = unstable = False
    reason = "m_max"
    m = 0
    for m in range(1, m_max + 1):
        if not (first_step_done and m == 1):
            try:
                step()
                if after_step is not None:
                    after_step()
            except BreakdownError as exc:
                unstable, reason = True, f"breakdown: {exc}"
                m -= 1
                break
        if before_check is not None:
            try:
                before_check(m)
            except RankDeficiencyError as exc:
                unstable, reason = True, f"sketch rank deficiency: {exc}"
                m -= 1
                break
        done = happy()
        if done or m % update == 0 or m == m_max:
            it = iterate_at(m)
            try:
                est, sol = it.residual(p.T, n_t, counters)
            except FloatingPointError as exc:
                unstable, reason = True, f"non-finite projected solution: {exc}"
                m -= 1
                break
            history.append((m, est.delta, 1e3 * (time.perf_counter() - t0)))
            last = (it, sol, est)
            if est.delta < tol or done:
                converged, reason = True, ("breakdown" if done else "tol")
                break
            if monitor is not None and monitor(history):
                unstable, reason = True, "slope"
                break
        if done:
            break
    if m >= 1 and (last is None or last[0].m != m):
        # stopped between checks: evaluate the latest valid iterate
        it = iterate_at(m)
        try:
            est, sol = it.residual(p.T, n_t, counters)
            history.append((m, est.delta, 1e3 * (time.perf_counter() - t0)))
            last = (it, sol, est)
            converged = converged or est.delta < tol
        except FloatingPointError:
            pass
    if last is None:
        raise BreakdownError(f"{method}: no valid iterate ({reason})")
    it, sol, est = last
    return _finish(method, p, it, sol, est, history, counters, converged, unstable, reason, t0,
                   ell, iterate_at)


def identity_sfom_solve(p: OdeProblem, tol: float = 1e-8, m_max: int = 100, n_t: int = 5,
                        update: int = 10) -> SolveReport:
    """sFOM with ``S = I`` and full orthogonalization (the classical limit)."""
    return sfom_solve(p, tol, m_restart=m_max, k=None, n_t=n_t, update=update,
                      embedding=IdentityEmbedding(p.n))
