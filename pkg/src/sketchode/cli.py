"""Command line front end.

    sketchode solve   [--config FILE] [options]
    sketchode compare CONFIG CONFIG ... [options]   (or --methods fom,sfom)

Every CSV starts with a ``# key = value`` block holding the effective
configuration. Exit status: 0 converged, 2 not converged, 1 configuration
or input error.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .linalg import BreakdownError
from .mmio import read_vector
from .ode import OdeProblem, SolveReport, default_embedding, fom_solve, sfom_solve
from .problems import KINDS, ProblemSpec
from .restart import RestartPolicy, RestartStalled, rt_restart_loop
from .sketch import SCALINGS, IdentityEmbedding, new_embedding

METHODS = ("fom", "sfom", "sfom-restarted")
SKETCHES = ("sparse-sign", "identity")
CONVERGENCE_COLUMNS = ("iteration", "delta", "wallclock_ms")
COUNTER_COLUMNS = ("m", "time_s", "delta_m", "xi_rel", "mvecs", "sprods", "nprods", "mfuns",
                   "mfunsize", "nops")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "laplacian"
    N: int = 100
    nu: float | None = None
    T: float = 1.0
    matrix: str | None = None
    y0: str | None = None
    method: str = "sfom"
    tol: float = 1e-8
    m_restart: int = 100          # m_max for fom
    sketch: str = "sparse-sign"
    sketch_dim: int | None = None  # default 2 m_restart l, identity if >= n
    scaling: str = "unit"
    zeta: int = 1
    trunc_k: int = 2               # 0: full orthogonalization
    nt: int = 5
    update: int = 10
    rtol: float = 0.0
    xi: float | None = None
    seed: int = 0
    ref: str | None = None         # vector file or "fom"
    label: str | None = None
    out_dir: str = "."

    def validate(self) -> "RunConfig":
        if self.problem not in KINDS:
            raise ConfigError(f"unknown problem '{self.problem}'")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method '{self.method}'")
        if self.sketch not in SKETCHES:
            raise ConfigError(f"unknown sketch '{self.sketch}'")
        if self.scaling not in SCALINGS:
            raise ConfigError(f"unknown scaling '{self.scaling}'")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.m_restart < 1 or self.nt < 1 or self.update < 1 or self.zeta < 1 or self.trunc_k < 0:
            raise ConfigError("m_restart, nt, update and zeta must be >= 1, trunc_k >= 0")
        if self.update > self.m_restart:
            raise ConfigError("update must not exceed m_restart")
        if self.xi is not None and not self.xi > 0:
            raise ConfigError("xi must be positive")
        if self.problem == "external" and self.matrix is None:
            raise ConfigError("problem 'external' needs --matrix")
        if self.sketch == "identity" and self.method == "sfom-restarted":
            raise ConfigError("the identity sketch is only available for method sfom")
        return self

    def problem_spec(self) -> ProblemSpec:
        try:
            return ProblemSpec(self.problem, self.N, self.nu, self.T, self.matrix, self.y0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def problem_key(self) -> tuple:
        spec = self.problem_spec()
        return (spec.kind, spec.N, spec.effective_nu, spec.T, spec.matrix, spec.y0)

    def header(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"# {f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    if raw == "" or raw.lower() == "none":
        if "None" in str(ftype):
            return None
        raise ConfigError(f"{name} cannot be empty")
    try:
        if str(ftype).startswith("int"):
            return int(raw)
        if str(ftype).startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {raw!r}") from None
    return raw


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys are accepted."""
    names = {f.name for f in fields(RunConfig)}
    out = {}
    try:
        fh = open(path, "r")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (x.strip() for x in s.split("=", 1))
            key = key.replace("-", "_")
            if key == "m_max":
                key = "m_restart"
            if key not in names:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            out[key] = _coerce(key, val)
    return out


# ---------------------------------------------------------------------------
# running


def _basis_width(cfg: RunConfig, p: OdeProblem) -> int:
    ell = 1
    if p.order == 2 and (cfg.method == "sfom-restarted" or np.any(p.y1)):
        ell += 1
    if p.w is not None:
        ell += 1
    return ell


def _embedding(cfg: RunConfig, p: OdeProblem):
    if cfg.sketch == "identity":
        return IdentityEmbedding(p.n)
    ell = _basis_width(cfg, p)
    if cfg.sketch_dim is None:
        return default_embedding(p.n, cfg.m_restart, ell, None, cfg.zeta, cfg.seed, cfg.scaling)
    s = cfg.sketch_dim
    need = min((cfg.m_restart + 1) * ell, p.n)
    if s < need:
        raise ConfigError(f"sketch dimension {s} is smaller than the basis dimension {need} "
                          f"reached with m_restart={cfg.m_restart}")
    if s > p.n or cfg.zeta > s:
        raise ConfigError(f"need zeta <= sketch_dim <= n, got zeta={cfg.zeta}, "
                          f"sketch_dim={s}, n={p.n}")
    return new_embedding(p.n, s, cfg.zeta, cfg.seed, cfg.scaling)


def run(cfg: RunConfig, p: OdeProblem | None = None) -> SolveReport:
    cfg.validate()
    if p is None:
        p = cfg.problem_spec().build()
    k = None if cfg.trunc_k == 0 else cfg.trunc_k
    if cfg.method == "fom":
        return fom_solve(p, cfg.tol, m_max=cfg.m_restart, n_t=cfg.nt, update=cfg.update)
    emb = _embedding(cfg, p)
    if cfg.method == "sfom":
        return sfom_solve(p, cfg.tol, m_restart=cfg.m_restart, k=k, n_t=cfg.nt, update=cfg.update,
                          embedding=emb)
    policy = RestartPolicy(m_restart=cfg.m_restart, rtol=cfg.rtol, xi=cfg.xi, update=cfg.update)
    return rt_restart_loop(p, cfg.tol, policy, k=k, n_t=cfg.nt, embedding=emb)


def reference_solution(cfg: RunConfig, p: OdeProblem) -> np.ndarray | None:
    if cfg.ref is None:
        return None
    if cfg.ref == "fom":
        rep = fom_solve(p, min(1e-12, cfg.tol * 1e-4), m_max=max(4 * cfg.m_restart, 400),
                        n_t=cfg.nt, update=cfg.update)
        return rep.y
    y = read_vector(cfg.ref)
    if y.shape[0] != p.n:
        raise ConfigError(f"reference has length {y.shape[0]}, problem dimension is {p.n}")
    return y


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_convergence(path, cfg: RunConfig, rep: SolveReport) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(cfg.header())
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for m, d, ms in rep.history:
            w.writerow([m, _fmt(float(d)), f"{ms:.3f}"])


def write_counters(path, cfg: RunConfig, rep: SolveReport, xi_rel: float | None) -> None:
    c = rep.counters
    with open(path, "w", newline="") as fh:
        fh.write(cfg.header())
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTER_COLUMNS)
        w.writerow([rep.m, f"{rep.time_s:.6f}", _fmt(float(rep.delta)), _fmt(xi_rel), c.mvecs,
                    c.sprods, c.nprods, c.mfuns, c.mfunsize, c.nops])


def cmd_solve(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    cfg.validate()
    p = cfg.problem_spec().build()
    rep = run(cfg, p)
    y_ref = reference_solution(cfg, p)
    xi_rel = None
    if y_ref is not None:
        xi_rel = float(np.linalg.norm(rep.y - y_ref) / np.linalg.norm(y_ref))
    os.makedirs(cfg.out_dir, exist_ok=True)
    full = effective_config(cfg, p)
    write_convergence(os.path.join(cfg.out_dir, "convergence.csv"), full, rep)
    write_counters(os.path.join(cfg.out_dir, "counters.csv"), full, rep, xi_rel)
    status = "converged" if rep.converged else f"not converged ({rep.reason})"
    msg = f"{cfg.method}: {status}, m = {rep.m}, delta = {rep.delta:.3e}"
    if xi_rel is not None:
        msg += f", rel. error = {xi_rel:.3e}"
    print(msg, file=out)
    return 0 if rep.converged else 2


def effective_config(cfg: RunConfig, p: OdeProblem) -> RunConfig:
    """Copy of ``cfg`` with the defaults that depend on the problem filled in."""
    upd = {}
    if cfg.problem != "external":
        upd["nu"] = cfg.problem_spec().effective_nu
    if cfg.method != "fom":
        upd["sketch_dim"] = _embedding(cfg, p).s
    if cfg.method == "sfom-restarted" and cfg.xi is None:
        upd["xi"] = cfg.tol
    return replace(cfg, **upd)


def _label(cfg: RunConfig) -> str:
    if cfg.label:
        return cfg.label
    return cfg.method + ("-identity" if cfg.sketch == "identity" and cfg.method != "fom" else "")


def cmd_compare(cfgs: list[RunConfig], out_dir: str, out=None) -> int:
    out = out or sys.stdout
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configurations")
    for c in cfgs:
        c.validate()
    keys = {c.problem_key() for c in cfgs}
    if len(keys) != 1:
        raise ConfigError("compare: configurations describe different problems")
    p = cfgs[0].problem_spec().build()
    labels = []
    for c in cfgs:
        base = _label(c)
        lab, i = base, 2
        while lab in labels:
            lab, i = f"{base}#{i}", i + 1
        labels.append(lab)
    reports = [run(c, p) for c in cfgs]
    os.makedirs(out_dir, exist_ok=True)
    header = "".join(f"# [{lab}]\n" + effective_config(c, p).header() for lab, c in zip(labels, cfgs))
    series = [{m: d for m, d, _ in r.history} for r in reports]
    iters = sorted(set().union(*series))
    with open(os.path.join(out_dir, "compare.csv"), "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *labels])
        for m in iters:
            w.writerow([m, *(_fmt(float(s[m])) if m in s else "" for s in series)])
    with open(os.path.join(out_dir, "compare_long.csv"), "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "iteration", "delta"])
        for lab, r in zip(labels, reports):
            for m, d, _ in r.history:
                w.writerow([lab, m, _fmt(float(d))])
    for lab, r in zip(labels, reports):
        print(f"{lab}: {'converged' if r.converged else 'not converged'}, m = {r.m}, "
              f"delta = {r.delta:.3e}", file=out)
    return 0 if all(r.converged for r in reports) else 2


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_FLAGS = [
    ("--problem", "problem", str, f"one of {', '.join(KINDS)}"),
    ("--N", "N", int, "grid points per dimension"),
    ("--nu", "nu", float, "diffusion / wave speed coefficient"),
    ("--T", "T", float, "time horizon"),
    ("--matrix", "matrix", str, "Matrix Market file (problem 'external')"),
    ("--y0", "y0", str, "initial vector file, one value per line"),
    ("--method", "method", str, f"one of {', '.join(METHODS)}"),
    ("--tol", "tol", float, "residual tolerance"),
    ("--m-restart", "m_restart", int, "iterations per cycle (m_max for fom)"),
    ("--sketch", "sketch", str, f"one of {', '.join(SKETCHES)}"),
    ("--sketch-dim", "sketch_dim", int, "sketch dimension s"),
    ("--scaling", "scaling", str, "embedding entry scaling: unit or nominal"),
    ("--zeta", "zeta", int, "nonzeros per embedding column"),
    ("--trunc-k", "trunc_k", int, "truncation depth, 0 for full orthogonalization"),
    ("--nt", "nt", int, "residual evaluation points"),
    ("--update", "update", int, "iterations between residual checks"),
    ("--rtol", "rtol", float, "slope threshold for restart"),
    ("--xi", "xi", float, "restart tolerance (default tol)"),
    ("--seed", "seed", int, "embedding seed"),
    ("--ref", "ref", str, "reference solution file, or 'fom'"),
    ("--label", "label", str, "column label in compare output"),
    ("--out-dir", "out_dir", str, "output directory"),
]


def _add_flags(sp):
    for flag, dest, typ, help_ in _FLAGS:
        sp.add_argument(flag, dest=dest, type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sketchode", description="Sketched Arnoldi solvers for linear ODEs.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", help="run one solver and write convergence/counter CSVs")
    s.add_argument("--config", help="flat key = value file; flags override it")
    _add_flags(s)
    c = sub.add_parser("compare", help="run several configurations on one problem")
    c.add_argument("configs", nargs="*", help="config files, one per method")
    c.add_argument("--methods", help="comma-separated methods, alternative to config files")
    _add_flags(c)
    return ap


def _overrides(ns) -> dict:
    return {dest: getattr(ns, dest) for _, dest, _, _ in _FLAGS if getattr(ns, dest) is not None}


def make_config(base: dict, overrides: dict) -> RunConfig:
    try:
        return RunConfig(**{**base, **overrides}).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return exc.code if isinstance(exc.code, int) else 1
    flags = _overrides(ns)
    try:
        if ns.command == "solve":
            base = read_config(ns.config) if ns.config else {}
            return cmd_solve(make_config(base, flags))
        cfgs = [make_config(read_config(path), flags) for path in ns.configs]
        if ns.methods:
            cfgs += [make_config({}, {**flags, "method": m.strip()}) for m in ns.methods.split(",")]
        out_dir = flags.get("out_dir", cfgs[0].out_dir if cfgs else ".")
        return cmd_compare(cfgs, out_dir)
    except (ValueError, BreakdownError, RestartStalled, MemoryError, OSError) as exc:
        # ConfigError and MatrixMarketError are ValueErrors
        print(f"sketchode: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
