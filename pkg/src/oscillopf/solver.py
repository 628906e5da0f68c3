"""Interior-point solves of standard-form cone programs.

The default backend is Clarabel (primal-dual interior point on the
homogeneous embedding with Nesterov-Todd scaling). CVXOPT's ``conelp`` is
available as a second, independent backend for cross-checks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic import Cone, StandardForm, smat, triu_pairs

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200

STATUSES = ("optimal", "infeasible", "unbounded", "max_iter", "numerical_error")


@dataclass
class ConicSolution:
    status: str
    primal: np.ndarray
    dual: np.ndarray
    primal_obj: float
    dual_obj: float
    gap: float
    iterations: int
    solve_time: float
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    backend: str = ""
    raw_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def cone_violation(s: np.ndarray, cones: list[Cone]) -> float:
    """Largest violation of cone membership of ``s`` (0 when inside)."""
    worst = 0.0
    k = 0
    for cone in cones:
        seg = s[k:k + cone.dim]
        k += cone.dim
        if cone.kind == "zero":
            worst = max(worst, float(np.abs(seg).max(initial=0.0)))
        elif cone.kind == "nonneg":
            worst = max(worst, float(max(0.0, -seg.min(initial=0.0))))
        else:
            lam = np.linalg.eigvalsh(smat(seg, cone.size))
            worst = max(worst, float(max(0.0, -lam[0])))
    return worst


def kkt_residuals(sf: StandardForm, x: np.ndarray, y: np.ndarray):
    """Relative primal and dual residuals of a candidate pair.

    Primal: distance of b - A x from the cone product. Dual: ||A'y + c||
    plus the violation of y from the (self-dual) cone product.
    """
    s = sf.b - sf.A @ x
    pres = cone_violation(s, sf.cones) / (1.0 + np.abs(sf.b).max(initial=0.0))
    r = sf.A.T @ y + sf.c
    dres = (np.abs(r).max(initial=0.0) + _dual_cone_violation(y, sf.cones)) \
        / (1.0 + np.abs(sf.c).max(initial=0.0))
    return float(pres), float(dres)


def _dual_cone_violation(y, cones):
    worst = 0.0
    k = 0
    for cone in cones:
        seg = y[k:k + cone.dim]
        k += cone.dim
        if cone.kind == "nonneg":
            worst = max(worst, float(max(0.0, -seg.min(initial=0.0))))
        elif cone.kind == "psd":
            lam = np.linalg.eigvalsh(smat(seg, cone.size))
            worst = max(worst, float(max(0.0, -lam[0])))
    return worst


INNER_TOL_FACTOR = 0.1


def _finish(sf, status, x, y, iterations, elapsed, tol, backend, raw):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pobj = float(sf.c @ x + sf.c0) if x.size else np.nan
    dobj = float(-sf.b @ y + sf.c0) if y.size else np.nan
    gap = abs(pobj - dobj) / (1.0 + abs(pobj)) if x.size and y.size else np.inf
    pres, dres = kkt_residuals(sf, x, y) if x.size and y.size else (np.inf, np.inf)
    if status == "optimal" and max(gap, pres, dres) > tol:
        # accept solver's own "solved" at a slightly looser certificate but flag
        status = "optimal" if max(gap, pres, dres) <= 10 * tol else "numerical_error"
    return ConicSolution(status, x, y, pobj, dobj, gap, iterations, elapsed,
                         pres, dres, backend, raw)


def _solve_clarabel(sf: StandardForm, tol: float, max_iter: int, verbose: bool):
    import clarabel

    cones = []
    for cone in sf.cones:
        if cone.kind == "zero":
            cones.append(clarabel.ZeroConeT(cone.dim))
        elif cone.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(cone.dim))
        else:
            cones.append(clarabel.PSDTriangleConeT(cone.size))
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    # clarabel judges convergence on its equilibrated problem; stopping a
    # decade early leaves room for the unscaled certificate in _finish
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = INNER_TOL_FACTOR * tol
    settings.tol_ktratio = 1e-6
    # supernodal factorization; far faster than qdldl on the dense PSD blocks
    settings.direct_solve_method = "faer"
    n = sf.A.shape[1]
    P = sp.csc_matrix((n, n))
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(P, sf.c, sf.A, sf.b, cones, settings).solve()
    elapsed = time.perf_counter() - t0
    raw = str(sol.status)
    name = raw.split(".")[-1]
    status = {
        "Solved": "optimal",
        "AlmostSolved": "optimal",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
        "MaxIterations": "max_iter",
        "MaxTime": "max_iter",
    }.get(name, "numerical_error")
    # clarabel's z multiplies A x + s = b; the dual objective is -b'z
    return status, np.array(sol.x), np.array(sol.z), int(sol.iterations), elapsed, raw


def _solve_cvxopt(sf: StandardForm, tol: float, max_iter: int, verbose: bool):
    import cvxopt
    from cvxopt import solvers

    # cvxopt wants equalities separately and full column-major PSD blocks
    k_eq = sf.n_eq
    A = sf.A.tocsr()
    Aeq, beq = A[:k_eq], sf.b[:k_eq]
    G_parts, h_parts = [], []
    dims = {"l": 0, "q": [], "s": []}
    k = k_eq
    expand = []
    for cone in sf.cones:
        if cone.kind == "zero":
            continue
        rows = A[k:k + cone.dim]
        rhs = sf.b[k:k + cone.dim]
        if cone.kind == "nonneg":
            G_parts.append(rows)
            h_parts.append(rhs)
            dims["l"] += cone.dim
        else:
            n = cone.size
            r, c = triu_pairs(n)
            scale = np.where(r == c, 1.0, 1.0 / np.sqrt(2.0))
            # full[i + n*j] = tri entry / scale
            idx_full = np.concatenate([r + n * c, c + n * r])
            src = np.concatenate([np.arange(len(r)), np.arange(len(r))])
            sc = np.concatenate([scale, scale])
            keep = np.ones(len(idx_full), bool)
            keep[len(r):] = r != c
            T = sp.csr_matrix((sc[keep], (idx_full[keep], src[keep])), shape=(n * n, len(r)))
            G_parts.append(T @ rows)
            h_parts.append(T @ rhs)
            dims["s"].append(n)
            expand.append((len(r), n, T))
        k += cone.dim

    def tocvx(M):
        M = sp.coo_matrix(M)
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), M.shape)

    G = sp.vstack(G_parts).tocoo() if G_parts else sp.coo_matrix((0, A.shape[1]))
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)
    opts = {"show_progress": verbose, "maxiters": max_iter, "abstol": tol,
            "reltol": tol, "feastol": tol}
    t0 = time.perf_counter()
    res = solvers.conelp(cvxopt.matrix(sf.c), tocvx(G), cvxopt.matrix(h), dims,
                         tocvx(Aeq) if k_eq else None,
                         cvxopt.matrix(beq) if k_eq else None, options=opts)
    elapsed = time.perf_counter() - t0
    raw = res["status"]
    status = {"optimal": "optimal", "primal infeasible": "infeasible",
              "dual infeasible": "unbounded"}.get(raw, "max_iter"
                                                  if res["iterations"] >= max_iter
                                                  else "numerical_error")
    if res["x"] is None:
        return status, np.zeros(0), np.zeros(0), int(res["iterations"]), elapsed, raw
    x = np.array(res["x"]).ravel()
    y_eq = np.array(res["y"]).ravel() if k_eq else np.zeros(0)
    z = np.array(res["z"]).ravel()
    # fold cvxopt's dual back to our layout (nonneg rows, then svec per PSD cone)
    parts = [y_eq]
    zk = 0
    if dims["l"]:
        parts.append(z[:dims["l"]])
        zk = dims["l"]
    for tri, n, T in expand:
        Zfull = z[zk:zk + n * n].reshape(n, n, order="F")
        Zfull = 0.5 * (Zfull + Zfull.T)
        r, c = triu_pairs(n)
        parts.append(np.where(r == c, 1.0, np.sqrt(2.0)) * Zfull[r, c])
        zk += n * n
    y = np.concatenate(parts)
    return status, x, y, int(res["iterations"]), elapsed, raw


BACKENDS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def solve(sf: StandardForm, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          backend: str = "clarabel", verbose: bool = False) -> ConicSolution:
    """Solve ``sf`` and return primal/dual iterates with certificate numbers."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    try:
        status, x, y, iters, elapsed, raw = BACKENDS[backend](sf, tol, max_iter, verbose)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        n = sf.A.shape[1]
        return ConicSolution("numerical_error", np.full(n, np.nan), np.zeros(0), np.nan,
                             np.nan, np.inf, 0, 0.0, backend=backend, raw_status=str(exc))
    return _finish(sf, status, x, y, iters, elapsed, tol, backend, raw)
