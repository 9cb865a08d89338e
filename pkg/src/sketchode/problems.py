"""Test problems: 3D convection-diffusion, 1D/2D wave equation, 1D Laplacian.

All operators are emitted for ``y' = -A y`` (``y'' = -A y``), so that
``exp(-tA)`` is the physical propagator. Grids are uniform with the
boundary points removed (homogeneous Dirichlet conditions) and unknowns are
ordered with the x index running fastest.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.special

from .linalg import SparseOperator
from .mmio import read_matrix_market, read_vector
from .ode import OdeProblem, companion_problem

MAX_UNKNOWNS = 2_000_000

KINDS = ("convdiff3d", "wave1d", "wave2d", "laplacian", "external")


def _second_difference(N: int) -> sp.csr_matrix:
    """``tridiag(-1, 2, -1)`` (no grid scaling)."""
    e = np.ones(N)
    return sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1], format="csr")


def _first_difference(N: int) -> sp.csr_matrix:
    """Centered ``(u_{i+1} - u_{i-1}) / 2`` (no grid scaling)."""
    e = 0.5 * np.ones(N - 1)
    return sp.diags([-e, e], [-1, 1], format="csr")


def _check_size(n: int, cap: int) -> None:
    if n > cap:
        raise MemoryError(f"{n} unknowns exceed the configured cap of {cap}")


def convdiff_operator(N: int, nu: float = 5e-3, convection: bool = True,
                      max_unknowns: int = MAX_UNKNOWNS) -> sp.csr_matrix:
    """``A = -(nu Lap_h + w . grad_h)`` on the unit cube, ``w = (x sin x, y cos y, exp(z^2 - 1))``.

    Second-order centered differences with ``h = 1/(N+1)``; ``n = N^3``.
    """
    if N < 3:
        raise ValueError(f"need N >= 3, got {N}")
    if not nu > 0:
        raise ValueError(f"need nu > 0, got {nu}")
    _check_size(N ** 3, max_unknowns)
    h = 1.0 / (N + 1)
    I = sp.identity(N, format="csr")
    D2 = _second_difference(N) / h ** 2
    lap = -(sp.kron(I, sp.kron(I, D2)) + sp.kron(I, sp.kron(D2, I)) + sp.kron(D2, sp.kron(I, I)))
    A = -nu * lap
    if convection:
        D1 = _first_difference(N) / h
        x = h * np.arange(1, N + 1)
        # grid coordinates in x-fastest order
        Z, Y, X = np.meshgrid(x, x, x, indexing="ij")
        wx = (X * np.sin(X)).ravel()
        wy = (Y * np.cos(Y)).ravel()
        wz = np.exp(Z ** 2 - 1).ravel()
        grad_x = sp.kron(I, sp.kron(I, D1))
        grad_y = sp.kron(I, sp.kron(D1, I))
        grad_z = sp.kron(D1, sp.kron(I, I))
        A = A - (sp.diags(wx) @ grad_x + sp.diags(wy) @ grad_y + sp.diags(wz) @ grad_z)
    A = sp.csr_matrix(A)
    A.sort_indices()
    return A


def gen_convdiff3d(N: int, nu: float = 5e-3, T: float = 1.0, convection: bool = True,
                   max_unknowns: int = MAX_UNKNOWNS) -> OdeProblem:
    """Convection-diffusion benchmark with the normalized all-ones initial vector."""
    A = convdiff_operator(N, nu, convection, max_unknowns)
    n = A.shape[0]
    return OdeProblem(SparseOperator(A), np.full(n, 1.0 / np.sqrt(n)), T)


def laplacian_operator(N: int, nu: float = 1.0, dim: int = 1, spacing: float | None = None) -> sp.csr_matrix:
    """``nu * (-Lap)`` by the 5/3-point stencil; unscaled (``h = 1``) unless ``spacing`` is given."""
    D2 = _second_difference(N)
    if spacing is not None:
        D2 = D2 / spacing ** 2
    if dim == 1:
        L = D2
    elif dim == 2:
        I = sp.identity(N, format="csr")
        L = sp.kron(I, D2) + sp.kron(D2, I)
    else:
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    L = sp.csr_matrix(nu * L)
    L.sort_indices()
    return L


def gen_laplacian(N: int, nu: float = 1.0, T: float = 1.0, y0=None) -> OdeProblem:
    """Heat equation with the unscaled 1D Laplacian ``nu * tridiag(-1, 2, -1)``.

    Default initial vector is a normalized Gaussian bump centered at
    ``x = 0.4`` on the grid ``x_i = i/(N+1)``. (Powers of the Laplacian
    applied to the all-ones vector are supported next to the boundary only,
    and sparse embeddings with few nonzeros per column cannot preserve such
    vectors.)
    """
    if N < 3:
        raise ValueError(f"need N >= 3, got {N}")
    if not nu > 0:
        raise ValueError(f"need nu > 0, got {nu}")
    if y0 is None:
        x = np.arange(1, N + 1) / (N + 1)
        y0 = np.exp(-100.0 * (x - 0.4) ** 2)
        y0 /= np.linalg.norm(y0)
    return OdeProblem(SparseOperator(laplacian_operator(N, nu)), y0, T)


def radial_bump(r: np.ndarray) -> np.ndarray:
    """``J_4(eta_4 r)`` inside the unit disk, 0 outside; ``eta_4`` is the first positive root of ``J_4``."""
    eta4 = scipy.special.jn_zeros(4, 1)[0]
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, scipy.special.jv(4, eta4 * r), 0.0)


def gen_wave(dim: int, N: int, nu: float = 1.0, T: float = 1.0,
             max_unknowns: int = MAX_UNKNOWNS) -> OdeProblem:
    """``y'' = -nu^2 L y`` on ``[-1, 1]^dim`` with ``y(0)`` a radial bump and ``y'(0) = 0``.

    ``L`` is the finite-difference ``-Lap`` with ``h = 2/(N+1)``. Use
    :func:`companion_problem` for the equivalent first-order system.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if N < 3:
        raise ValueError(f"need N >= 3, got {N}")
    if not nu > 0:
        raise ValueError(f"need nu > 0, got {nu}")
    _check_size(N ** dim, max_unknowns)
    h = 2.0 / (N + 1)
    x = -1.0 + h * np.arange(1, N + 1)
    if dim == 1:
        r = np.abs(x)
    else:
        Y, X = np.meshgrid(x, x, indexing="ij")
        r = np.hypot(X, Y).ravel()
    A = laplacian_operator(N, nu * nu, dim, spacing=h)
    return OdeProblem(SparseOperator(A), radial_bump(r), T, order=2, y1=np.zeros(N ** dim))


def load_external(matrix_path, y0_path=None, T: float = 1.0) -> OdeProblem:
    """Problem ``y' = -A y`` with ``A`` from a Matrix Market file.

    Without ``y0_path`` the normalized all-ones vector is used.
    """
    A = read_matrix_market(matrix_path)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{matrix_path}: matrix is {A.shape[0]} x {A.shape[1]}, expected square")
    n = A.shape[0]
    if y0_path is None:
        y0 = np.full(n, 1.0 / np.sqrt(n))
    else:
        y0 = read_vector(y0_path)
        if y0.shape[0] != n:
            raise ValueError(f"{y0_path}: vector has length {y0.shape[0]}, matrix dimension is {n}")
    return OdeProblem(SparseOperator(A), y0, T)


@dataclass
class ProblemSpec:
    """Declarative description of a problem, as used by the command line."""

    kind: str = "laplacian"
    N: int = 100
    nu: float | None = None   # per-kind default: 5e-3 convdiff, 1 otherwise
    T: float = 1.0
    matrix: str | None = None
    y0: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind '{self.kind}' (choose from {', '.join(KINDS)})")
        if self.kind != "external" and self.N < 3:
            raise ValueError(f"need N >= 3, got {self.N}")
        if self.nu is not None and not self.nu > 0:
            raise ValueError(f"need nu > 0, got {self.nu}")
        if self.kind == "external" and self.matrix is None:
            raise ValueError("external problems need a matrix path")

    @property
    def effective_nu(self) -> float:
        if self.nu is not None:
            return self.nu
        return 5e-3 if self.kind == "convdiff3d" else 1.0

    def build(self, companion: bool = False) -> OdeProblem:
        nu = self.effective_nu
        if self.kind == "convdiff3d":
            p = gen_convdiff3d(self.N, nu, self.T)
        elif self.kind == "wave1d":
            p = gen_wave(1, self.N, nu, self.T)
        elif self.kind == "wave2d":
            p = gen_wave(2, self.N, nu, self.T)
        elif self.kind == "laplacian":
            p = gen_laplacian(self.N, nu, self.T)
        else:
            p = load_external(self.matrix, self.y0, self.T)
        if companion and p.order == 2:
            p = companion_problem(p)
        return p
