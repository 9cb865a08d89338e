"""Residual-time restarting for the sketched Arnoldi solver.

When a cycle of at most ``m_restart`` iterations does not reach ``tol`` (or
its residual starts growing again), the iterate is committed up to the time
``tau`` at which its residual norm first reaches ``xi``. The problem is then
restarted from ``y_m(tau)`` (and ``y_m'(tau)`` for second-order problems,
which turns the Krylov space into a block space) on the remaining interval.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import Counters
from .ode import Iterate, OdeProblem, RestartEvent, SolveReport, default_embedding, sfom_solve


class RestartStalled(RuntimeError):
    """No positive time step with residual below ``xi`` could be found."""


@dataclass
class RestartPolicy:
    m_restart: int = 100
    rtol: float = 0.0
    xi: float | None = None      # defaults to the solve tolerance
    update: int = 10
    tau_grid: int = 100
    max_cycles: int = 50
    max_halvings: int = 40

    def __post_init__(self):
        if not self.m_restart >= self.update >= 1:
            raise ValueError("need m_restart >= update >= 1")
        if self.xi is not None and not self.xi > 0:
            raise ValueError("xi must be positive")


def slope_check(history: Sequence[float], rtol: float = 0.0,
                iterations: Sequence[int] | None = None) -> str:
    """Return ``"unstable"`` or ``"continue"`` for the latest residual check.

    Slopes are ``(delta_m - delta_prev) / (m - m_prev)`` with ``delta_0 = 0``.
    Growth is tolerated until the first negative slope; afterwards a slope
    above ``rtol * delta_prev`` signals instability.
    """
    deltas = [float(d) for d in history]
    if len(deltas) < 2:
        return "continue"
    its = list(range(1, len(deltas) + 1)) if iterations is None else [int(i) for i in iterations]
    prev_d, prev_m = 0.0, 0
    seen_decrease = False
    verdict = "continue"
    for m, d in zip(its, deltas):
        sigma = (d - prev_d) / max(m - prev_m, 1)
        if seen_decrease and sigma > rtol * prev_d:
            verdict = "unstable"
        else:
            verdict = "continue"
        if sigma < 0:
            seen_decrease = True
        prev_d, prev_m = d, m
    return verdict


def find_tau(iterate: Iterate, xi: float, t_remaining: float, tau_grid: int = 100,
             counters: Counters | None = None, max_halvings: int = 40) -> float:
    """Largest grid time up to which the running maximum of the residual stays below ``xi``.

    The grid has ``tau_grid`` equidistant points on ``(0, t_remaining]``;
    if the residual already exceeds ``xi`` at the first point the interval is
    halved and the search repeated.
    """
    length = float(t_remaining)
    for _ in range(max_halvings + 1):
        est, _sol = iterate.residual(length, tau_grid, counters)
        ok = np.maximum.accumulate(est.beta_norms) < xi
        if ok[-1]:
            return length
        if ok[0]:
            return float(est.thetas[np.flatnonzero(ok)[-1]])
        length *= 0.5
    raise RestartStalled(f"restart cannot make progress: residual exceeds {xi:g} "
                         f"below t = {length:.3e}")


def rt_restart_loop(p: OdeProblem, tol: float = 1e-8, policy: RestartPolicy | None = None, *,
                    s: int | None = None, zeta: int = 1, k: int | None = 2, n_t: int = 5,
                    seed: int = 0, embedding=None) -> SolveReport:
    """Run sketched Arnoldi cycles with residual-time restarts until ``delta < tol`` on the final interval.

    One embedding is drawn for the whole run (sketch dimension
    ``2 m_restart l_max`` with ``l_max = 2`` for second-order problems, see
    :func:`default_embedding`) and every cycle starts from a fresh basis and
    QR factorization.
    """
    policy = policy or RestartPolicy()
    xi = tol if policy.xi is None else policy.xi
    t0 = time.perf_counter()
    ell_max = 2 if p.order == 2 else 1
    if embedding is None:
        embedding = default_embedding(p.n, policy.m_restart, ell_max, s, zeta, seed)

    def monitor(history):
        return slope_check([h[1] for h in history], policy.rtol, [h[0] for h in history]) == "unstable"

    total = Counters()
    cycles: list[SolveReport] = []
    events: list[RestartEvent] = []
    history: list[tuple[int, float, float]] = []
    taus: list[float] = []
    cur = p
    m_offset = 0
    final = None
    for cycle in range(policy.max_cycles):
        rep = sfom_solve(cur, tol, m_restart=policy.m_restart, k=k, n_t=n_t, update=policy.update,
                         embedding=embedding, monitor=monitor)
        cycles.append(rep)
        total.add(rep.counters)
        elapsed = 1e3 * (time.perf_counter() - t0)
        history.extend((m_offset + m, d, elapsed - rep.time_s * 1e3 + ms) for m, d, ms in rep.history)
        if rep.converged:
            final = rep
            break
        it = rep.iterate
        reason = "unstable" if rep.unstable else "m_restart"
        if rep.unstable and rep.reason == "slope" and it.m - policy.update >= 1:
            it = rep.iterate_at(it.m - policy.update)
        t_rem = p.T - math.fsum(taus)
        tau = find_tau(it, xi, t_rem, policy.tau_grid, total, policy.max_halvings)
        sol = it.solve(tau, 1, total)
        y_new = it.lift(sol.X[:, -1], total)
        events.append(RestartEvent(cycle, it.m, tau, reason))
        m_offset += rep.m
        if tau >= t_rem:
            # the whole remaining interval is already below xi
            final = SolveReport("sfom-restarted", True, it.m, float(xi), [], Counters(), y_new,
                                it.lift(sol.dX[:, -1], total, derivative=True) if p.order == 2 else None,
                                sol.X[:, -1], it, block_size=rep.block_size)
            taus.append(tau)
            break
        taus.append(tau)
        y1_new = it.lift(sol.dX[:, -1], total, derivative=True) if p.order == 2 else None
        cur = OdeProblem(p.A, y_new, p.T - math.fsum(taus), order=p.order, y1=y1_new, w=p.w)
    converged = final is not None and final.converged
    last = final if final is not None else cycles[-1]
    t_final = p.T - math.fsum(taus)
    m_total = m_offset + (last.m if last is cycles[-1] and final is not None else 0)
    report = SolveReport("sfom-restarted", converged, m_total, last.delta, history, total,
                         last.y, last.dy, last.x, last.iterate, unstable=last.unstable,
                         reason=last.reason if converged else "max_cycles",
                         block_size=max(c.block_size for c in cycles),
                         time_s=time.perf_counter() - t0, restarts=events, cycles=cycles)
    report.taus = taus
    report.t_final = t_final
    return report
