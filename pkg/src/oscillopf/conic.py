"""Small modeling layer for linear cone programs over named matrix blocks.

Decision variables live in one flat vector. Each named block maps to a
contiguous coordinate range:

* ``herm`` n x n Hermitian: real parts of the upper triangle (with the
  diagonal), then imaginary parts of the strict upper triangle; n*n reals.
* ``sym`` n x n real symmetric: upper triangle, n(n+1)/2 reals.
* ``vec`` length-n real vector.

Symmetric matrix cones use the scaled "svec" layout: upper triangle,
column-major, off-diagonal entries multiplied by sqrt(2), so that
<svec(A), svec(B)> = trace(AB).
"""

from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)


def triu_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/col indices of the upper triangle in column-major order."""
    cols = np.concatenate([np.full(j + 1, j) for j in range(n)]) if n else np.zeros(0, int)
    rows = np.concatenate([np.arange(j + 1) for j in range(n)]) if n else np.zeros(0, int)
    return rows.astype(int), cols.astype(int)


def svec_index(n: int) -> np.ndarray:
    """n x n table giving the svec position of entry (i, j) (symmetric)."""
    table = np.empty((n, n), dtype=int)
    r, c = triu_pairs(n)
    table[r, c] = np.arange(len(r))
    table[c, r] = np.arange(len(r))
    return table


def svec(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    r, c = triu_pairs(A.shape[0])
    return np.where(r == c, 1.0, SQRT2) * A[r, c]


def smat(v: np.ndarray, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((np.sqrt(8 * len(v) + 1) - 1) / 2))
    if n * (n + 1) // 2 != len(v):
        raise ValueError("vector length is not triangular")
    r, c = triu_pairs(n)
    vals = v / np.where(r == c, 1.0, SQRT2)
    A = np.zeros((n, n))
    A[r, c] = vals
    A[c, r] = vals
    return A


@dataclass(frozen=True)
class Block:
    name: str
    kind: str
    n: int
    offset: int

    @property
    def length(self) -> int:
        if self.kind == "herm":
            return self.n * self.n
        if self.kind == "sym":
            return self.n * (self.n + 1) // 2
        return self.n

    @property
    def stop(self) -> int:
        return self.offset + self.length

    # coordinate helpers ----------------------------------------------------
    def re(self, i: int, j: int) -> int:
        """Coordinate of Re X_ij (herm) or X_ij (sym)."""
        if i > j:
            i, j = j, i
        return self.offset + j * (j + 1) // 2 + i

    def im(self, i: int, j: int) -> tuple[int, float] | None:
        """(coordinate, sign) of Im X_ij for a Hermitian block; None on the diagonal."""
        if i == j:
            return None
        sign = 1.0
        if i > j:
            i, j, sign = j, i, -1.0
        return self.offset + self.n * (self.n + 1) // 2 + j * (j - 1) // 2 + i, sign

    def scalar(self, i: int = 0) -> int:
        return self.offset + i

    def value(self, x: np.ndarray) -> np.ndarray:
        """Rebuild the block from the flat vector."""
        seg = np.asarray(x)[self.offset:self.stop]
        if self.kind == "vec":
            return seg.copy()
        n = self.n
        r, c = triu_pairs(n)
        tri = n * (n + 1) // 2
        A = np.zeros((n, n))
        A[r, c] = seg[:tri]
        A[c, r] = seg[:tri]
        if self.kind == "sym":
            return A
        B = np.zeros((n, n))
        if n > 1:
            rs, cs = triu_pairs(n)
            strict = rs < cs
            B[rs[strict], cs[strict]] = seg[tri:]
            B[cs[strict], rs[strict]] = -seg[tri:]
        return A + 1j * B

    def coords(self, X: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`value`."""
        if self.kind == "vec":
            return np.asarray(X, dtype=float).ravel()
        n = self.n
        r, c = triu_pairs(n)
        out = [np.real(X)[r, c]]
        if self.kind == "herm" and n > 1:
            strict = r < c
            out.append(np.imag(X)[r[strict], c[strict]])
        return np.concatenate(out)


class LinearMatrix:
    """Symmetric matrix whose upper-triangle entries are affine in the variables."""

    def __init__(self, n: int, name: str = ""):
        self.n = n
        self.name = name
        self.terms: dict[tuple[int, int], dict[int, float]] = defaultdict(dict)
        self.const = np.zeros((n, n))

    def add(self, i: int, j: int, var: int, coef: float) -> None:
        if i > j:
            i, j = j, i
        if coef != 0.0:
            d = self.terms[(i, j)]
            d[var] = d.get(var, 0.0) + coef

    def add_const(self, i: int, j: int, val: float) -> None:
        self.const[i, j] += val
        if i != j:
            self.const[j, i] += val

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        A = self.const.copy()
        for (i, j), d in self.terms.items():
            v = sum(c * x[k] for k, c in d.items())
            A[i, j] += v
            if i != j:
                A[j, i] += v
        return A

    def svec_map(self, nvar: int):
        """Return (F, f0) with svec(matrix) = F x + f0."""
        pos = svec_index(self.n)
        rows, cols, vals = [], [], []
        for (i, j), d in self.terms.items():
            scale = 1.0 if i == j else SQRT2
            for k, c in d.items():
                rows.append(pos[i, j])
                cols.append(k)
                vals.append(scale * c)
        m = self.n * (self.n + 1) // 2
        F = sp.csr_matrix((vals, (rows, cols)), shape=(m, nvar))
        F.sum_duplicates()
        return F, svec(self.const)


@dataclass
class Row:
    """Sparse linear functional sum(coef * x[var]) with a right-hand side."""

    coefs: dict[int, float]
    rhs: float
    label: str = ""


@dataclass
class ConeProgram:
    """min c'x + c0 subject to equalities, inequalities (<=) and LMIs."""

    blocks: dict[str, Block] = field(default_factory=dict)
    nvar: int = 0
    c: dict[int, float] = field(default_factory=dict)
    c0: float = 0.0
    equalities: list[Row] = field(default_factory=list)
    inequalities: list[Row] = field(default_factory=list)
    lmis: list[LinearMatrix] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_block(self, name: str, kind: str, n: int) -> Block:
        if name in self.blocks:
            raise ValueError(f"block {name!r} already defined")
        if kind not in ("herm", "sym", "vec"):
            raise ValueError(f"unknown block kind {kind!r}")
        blk = Block(name, kind, n, self.nvar)
        self.blocks[name] = blk
        self.nvar = blk.stop
        return blk

    def __getitem__(self, name: str) -> Block:
        return self.blocks[name]

    def add_objective(self, var: int, coef: float) -> None:
        self.c[var] = self.c.get(var, 0.0) + coef

    def add_eq(self, coefs: dict[int, float], rhs: float, label: str = "") -> None:
        self.equalities.append(Row(dict(coefs), float(rhs), label))

    def add_le(self, coefs: dict[int, float], rhs: float, label: str = "") -> None:
        self.inequalities.append(Row(dict(coefs), float(rhs), label))

    def add_lmi(self, lm: LinearMatrix) -> None:
        self.lmis.append(lm)

    def objective_value(self, x: np.ndarray) -> float:
        return self.c0 + sum(v * x[k] for k, v in self.c.items())

    def value(self, x: np.ndarray, name: str) -> np.ndarray:
        return self.blocks[name].value(x)


@dataclass(frozen=True)
class Cone:
    kind: str  # "zero", "nonneg" or "psd"
    size: int  # rows for zero/nonneg, matrix order for psd

    @property
    def dim(self) -> int:
        return self.size * (self.size + 1) // 2 if self.kind == "psd" else self.size


@dataclass
class StandardForm:
    """min c'x + c0  s.t.  A x + s = b,  s in the product of ``cones``."""

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list[Cone]
    c0: float = 0.0
    row_labels: list[str] = field(default_factory=list)

    @property
    def n_eq(self) -> int:
        return sum(k.dim for k in self.cones if k.kind == "zero")


# Coefficients below this fraction of their row's largest entry are dropped.
DROP_TOL = 1e-13


def _rows_to_sparse(rows: list[Row], nvar: int, normalize: bool = True):
    """Stack rows; with ``normalize`` each row (and rhs) is scaled to unit max-norm."""
    r, c, v = [], [], []
    rhs = np.empty(len(rows))
    for i, row in enumerate(rows):
        big = max((abs(val) for val in row.coefs.values()), default=0.0)
        scale = 1.0 / big if (normalize and big > 0) else 1.0
        for k, val in row.coefs.items():
            if abs(val) > DROP_TOL * big:
                r.append(i)
                c.append(k)
                v.append(val * scale)
        rhs[i] = row.rhs * scale
    M = sp.csr_matrix((v, (r, c)), shape=(len(rows), nvar))
    M.sum_duplicates()
    return M, rhs


def _dedupe(rows: list[Row]) -> list[Row]:
    seen = {}
    out = []
    for row in rows:
        key = tuple(sorted((k, v) for k, v in row.coefs.items() if v != 0.0))
        if not key:
            if abs(row.rhs) > 1e-12:
                raise ValueError(f"inconsistent empty constraint {row.label!r}")
            continue
        if key in seen:
            if abs(seen[key] - row.rhs) > 1e-12:
                raise ValueError(f"conflicting duplicate constraint {row.label!r}")
            continue
        seen[key] = row.rhs
        out.append(row)
    return out


def standard_form(p: ConeProgram) -> StandardForm:
    """Vectorize a program: equalities, then inequalities, then one PSD cone per LMI."""
    eqs = _dedupe(p.equalities)
    A_eq, b_eq = _rows_to_sparse(eqs, p.nvar)
    A_in, b_in = _rows_to_sparse(p.inequalities, p.nvar)
    mats, rhs, cones = [A_eq, A_in], [b_eq, b_in], []
    labels = [r.label for r in eqs] + [r.label for r in p.inequalities]
    if eqs:
        cones.append(Cone("zero", len(eqs)))
    if p.inequalities:
        cones.append(Cone("nonneg", len(p.inequalities)))
    for lm in p.lmis:
        # s = svec(F x + f0) = b - A x  with  A = -F, b = f0
        F, f0 = lm.svec_map(p.nvar)
        mats.append(-F)
        rhs.append(f0)
        cones.append(Cone("psd", lm.n))
        labels += [f"{lm.name}[{k}]" for k in range(len(f0))]
    c = np.zeros(p.nvar)
    for k, v in p.c.items():
        c[k] += v
    A = sp.vstack(mats).tocsc()
    return StandardForm(c, A, np.concatenate(rhs), cones, p.c0, labels)


def dump_standard_form(sf: StandardForm) -> str:
    """Plain-text dump: header, cone list, then ``c``, ``A`` and ``b`` triplets."""
    out = io.StringIO()
    m, n = sf.A.shape
    out.write(f"# rows {m} cols {n}\n")
    for cone in sf.cones:
        out.write(f"cone {cone.kind} {cone.size}\n")
    for j in np.flatnonzero(sf.c):
        out.write(f"c {j} {float(sf.c[j])!r}\n")
    coo = sf.A.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for k in order:
        out.write(f"A {coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")
    for i in np.flatnonzero(sf.b):
        out.write(f"b {i} {float(sf.b[i])!r}\n")
    return out.getvalue()
