"""Minimal Matrix Market (coordinate, real/integer) and plain vector I/O.

Parse errors carry the offending line number, which is the reason this is
not delegated to ``scipy.io.mmread``.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp


class MatrixMarketError(ValueError):
    def __init__(self, path, lineno: int | None, msg: str):
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.lineno = lineno


_FIELDS = ("real", "integer", "double")
_SYMMETRY = ("general", "symmetric", "skew-symmetric")


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a coordinate-format Matrix Market file into CSR.

    Symmetric and skew-symmetric storage is expanded (mirrored entries are
    added for every off-diagonal element). Duplicate entries are summed.
    """
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError(path, 1, "empty file")
    header = lines[0].strip().lower().split()
    if len(header) != 5 or header[0] != "%%matrixmarket" or header[1] != "matrix":
        raise MatrixMarketError(path, 1, "missing '%%MatrixMarket matrix' banner")
    fmt, field, symmetry = header[2:]
    if fmt != "coordinate":
        raise MatrixMarketError(path, 1, f"only coordinate format is supported, got '{fmt}'")
    if field not in _FIELDS:
        raise MatrixMarketError(path, 1, f"unsupported field '{field}'")
    if symmetry not in _SYMMETRY:
        raise MatrixMarketError(path, 1, f"unsupported symmetry '{symmetry}'")

    lineno = 1
    it = iter(enumerate(lines[1:], start=2))
    size = None
    for lineno, line in it:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        try:
            size = tuple(int(x) for x in parts)
        except ValueError:
            raise MatrixMarketError(path, lineno, f"bad size line '{s}'") from None
        if len(size) != 3 or min(size) < 0:
            raise MatrixMarketError(path, lineno, f"bad size line '{s}'")
        break
    if size is None:
        raise MatrixMarketError(path, lineno, "missing size line")
    nrows, ncols, nnz = size

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    k = 0
    for lineno, line in it:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        if k == nnz:
            raise MatrixMarketError(path, lineno, f"more than the declared {nnz} entries")
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketError(path, lineno, f"expected 'row col value', got '{s}'")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(path, lineno, f"cannot parse entry '{s}'") from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(path, lineno, f"index ({i}, {j}) outside {nrows} x {ncols}")
        if not np.isfinite(v):
            raise MatrixMarketError(path, lineno, "non-finite value")
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
        k += 1
    if k != nnz:
        raise MatrixMarketError(path, lineno, f"declared {nnz} entries, found {k}")

    if symmetry != "general":
        off = rows != cols
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        rows, cols, vals = (np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, sign * vals[off]]))
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    A.sum_duplicates()
    A.sort_indices()
    return A


def write_matrix_market(path, A, symmetric: bool = False, comment: str | None = None) -> None:
    """Write ``A`` in coordinate real format (lower triangle only if ``symmetric``)."""
    A = sp.coo_matrix(A)
    A.sum_duplicates()
    if symmetric:
        if A.shape[0] != A.shape[1] or (A != A.T).nnz != 0:
            raise ValueError("matrix is not exactly symmetric")
        keep = A.row >= A.col
        A = sp.coo_matrix((A.data[keep], (A.row[keep], A.col[keep])), shape=A.shape)
    order = np.lexsort((A.row, A.col))
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {'symmetric' if symmetric else 'general'}\n")
        if comment:
            for c in comment.splitlines():
                fh.write(f"% {c}\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_vector(path) -> np.ndarray:
    """One value per line; blank lines and ``#``/``%`` comments are skipped."""
    out = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s[0] in "#%":
                continue
            try:
                out.append(float(s))
            except ValueError:
                raise MatrixMarketError(path, lineno, f"cannot parse value '{s}'") from None
    return np.array(out)


def write_vector(path, v) -> None:
    np.savetxt(os.fspath(path), np.asarray(v, dtype=float).ravel(), fmt="%.17g")
