"""SDP relaxation of the oscillation-aware OPF.

Bus voltages enter through a real PSD matrix X of order 2N that lifts
[Re v; Im v] (see :class:`HermitianLift`). Internal machine voltages are
e = T^-1 v_S, so every entry of E = e e^H is a Hermitian form in v as well.
Only Re E_ab on coupled pairs feeds the Laplacian; those entries get their
own variables so the epigraph LMI
[[Z + sI, W], [W, M^-1/2 L M^-1/2]] >= 0 stays sparse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .casefile import RawCase, DynamicParams
from .conic import DROP_TOL, ConeProgram, LinearMatrix
from .dynamics import projector_off_shift
from .network import KronModel, QuadraticForms


class BuildError(ValueError):
    """The program cannot be assembled from the given data."""


@dataclass(frozen=True)
class TradeoffConfig:
    mu: float = 0.0
    k: int | None = 3
    omega_range: tuple[float, float] | None = None
    gamma: float | None = None
    cost_floor: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise BuildError(f"mu must lie in [0, 1], got {self.mu}")
        if self.k is not None and self.k < 1:
            raise BuildError(f"band size must be at least 1, got {self.k}")
        if (self.k is None) == (self.omega_range is None):
            raise BuildError("give exactly one of k or omega_range")
        if not 0.0 <= self.cost_floor < 1.0:
            raise BuildError("cost floor must lie in [0, 1)")


def hermitian_embed(H: np.ndarray) -> np.ndarray:
    """Real symmetric [[Re H, -Im H], [Im H, Re H]] of a Hermitian matrix."""
    H = np.asarray(H)
    tol = 1e-12 * max(1.0, float(np.abs(H).max(initial=0.0)))
    if np.abs(H - H.conj().T).max(initial=0.0) > tol:
        raise ValueError("matrix is not Hermitian")
    R, I = H.real, H.imag
    return np.block([[R, -I], [I, R]])


class HermitianLift:
    """Real 2n x 2n PSD block X standing in for a Hermitian V = v v^H.

    With xi = [Re v; Im v] and X = xi xi', every Hermitian quadratic form
    v^H H v equals trace(embed(H) X), and V = (X11 + X22) + j (X21 - X12).
    X is a free symmetric matrix, which interior-point solvers handle far
    better than the structured embedding of V itself.
    """

    def __init__(self, blk):
        if blk.kind != "sym" or blk.n % 2:
            raise ValueError("lift needs a symmetric block of even order")
        self.blk = blk
        self.n = blk.n // 2

    def trace_coefs(self, H: np.ndarray, scale: float = 1.0) -> dict[int, float]:
        """Coefficients of v^H H v = trace(embed(H) X) in the coordinates of X."""
        G = np.triu(scale * hermitian_embed(H))
        # entries at round-off level (inverse Kron maps are full of them) are dropped
        G[np.abs(G) <= DROP_TOL * np.abs(G).max(initial=0.0)] = 0.0
        r, c = np.nonzero(G)
        coefs: dict[int, float] = {}
        for i, j in zip(r, c):
            val = G[i, j] if i == j else 2.0 * G[i, j]
            coefs[self.blk.re(i, j)] = coefs.get(self.blk.re(i, j), 0.0) + val
        return coefs

    def diag_coefs(self, i: int) -> dict[int, float]:
        """Coefficients of |v_i|^2."""
        return {self.blk.re(i, i): 1.0, self.blk.re(self.n + i, self.n + i): 1.0}

    def value(self, x: np.ndarray) -> np.ndarray:
        X = self.blk.value(x)
        n = self.n
        return (X[:n, :n] + X[n:, n:]) + 1j * (X[n:, :n] - X[:n, n:])

    def coords(self, V: np.ndarray) -> np.ndarray:
        """Block coordinates of the canonical lift embed(V)/2 of a Hermitian V."""
        return self.blk.coords(0.5 * hermitian_embed(V))


def internal_form(T_inv: np.ndarray, s_idx, a: int, b: int, N: int):
    """Hermitian (H_re, H_im) with Re E_ab = v^H H_re v and Im E_ab = v^H H_im v."""
    u_a = np.zeros(N, dtype=complex)
    u_b = np.zeros(N, dtype=complex)
    u_a[s_idx] = T_inv[a]
    u_b[s_idx] = T_inv[b]
    # E_ab = e_a conj(e_b) = v^H (conj(u_b) u_a^T) v
    P = np.outer(u_b.conj(), u_a)
    return 0.5 * (P + P.conj().T), (P - P.conj().T) / 2j


def _sym_psd(prog: ConeProgram, name: str) -> None:
    blk = prog[name]
    lm = LinearMatrix(blk.n, f"{name}_psd")
    for j in range(blk.n):
        for i in range(j + 1):
            lm.add(i, j, blk.re(i, j), 1.0)
    prog.add_lmi(lm)


def lemma1_weight(M) -> np.ndarray:
    return projector_off_shift(M)


def build_lemma1_block(prog: ConeProgram, L_M: "LinearMatrix | np.ndarray", M, k: int,
                       gamma: float, weight: float = 1.0, l_scale: float = 1.0) -> None:
    """Add Z >= 0, the 2S x 2S epigraph LMI and weight*(tr Z + k s)/(2 gamma).

    ``L_M`` is either a numeric S x S matrix or a callback-free
    :class:`LinearMatrix` already expressed in the program's variables.

    With ``l_scale`` = c the LMI carries L_M / c instead; since the band
    energy is homogeneous of degree -1 in L, the objective term is divided
    by c to compensate. A c near the typical eigenvalue of L_M keeps Z and s
    of order one, which interior-point solvers need to reach tight gaps.
    """
    if l_scale <= 0:
        raise BuildError("Laplacian scale must be positive")
    M = np.asarray(M, dtype=float)
    S = len(M)
    if not 1 <= k < S:
        raise BuildError(f"band size {k} needs 1 <= k < {S}")
    Z = prog.add_block("Z", "sym", S)
    s = prog.add_block("s", "vec", 1)
    _sym_psd(prog, "Z")
    W = lemma1_weight(M)
    lmi = LinearMatrix(2 * S, "epigraph")
    for j in range(S):
        for i in range(j + 1):
            lmi.add(i, j, Z.re(i, j), 1.0)
        lmi.add(j, j, s.scalar(), 1.0)
        for i in range(S):
            lmi.add_const(i, S + j, W[i, j])
    if isinstance(L_M, LinearMatrix):
        for (i, j), terms in L_M.terms.items():
            for var, c in terms.items():
                lmi.add(S + i, S + j, var, c / l_scale)
        for j in range(S):
            for i in range(j + 1):
                if L_M.const[i, j] != 0.0:
                    lmi.add_const(S + i, S + j, L_M.const[i, j] / l_scale)
    else:
        L_M = np.asarray(L_M, dtype=float)
        for j in range(S):
            for i in range(j + 1):
                if L_M[i, j] != 0.0:
                    lmi.add_const(S + i, S + j, L_M[i, j] / l_scale)
    prog.add_lmi(lmi)
    scale = weight / (2.0 * gamma * l_scale)
    if scale != 0.0:
        for i in range(S):
            prog.add_objective(Z.re(i, i), scale)
        prog.add_objective(s.scalar(), scale * k)
    prog.meta.update(k=k, gamma=gamma, S=S, l_scale=l_scale)


def lemma1_program(L_M: np.ndarray, M, k: int, gamma: float,
                   l_scale: float | None = None) -> ConeProgram:
    """Stand-alone program whose optimum is the band energy of a fixed L_M.

    ``l_scale`` defaults to the mean eigenvalue trace(L_M) / S.
    """
    L_M = np.asarray(L_M, dtype=float)
    if l_scale is None:
        l_scale = float(np.trace(L_M)) / len(L_M) or 1.0
    prog = ConeProgram()
    build_lemma1_block(prog, L_M, M, k, gamma, l_scale=l_scale)
    return prog


def stability_term(prog: ConeProgram, x: np.ndarray) -> float:
    """(tr Z + k s)/(2 gamma) evaluated at a solution vector."""
    Z = prog.value(x, "Z")
    s = prog.value(x, "s")[0]
    scale = 2.0 * prog.meta["gamma"] * prog.meta.get("l_scale", 1.0)
    return float((np.trace(Z) + prog.meta["k"] * s) / scale)


def _gen_limits(case: RawCase, sync: tuple[int, ...]):
    lo_p = np.zeros(len(sync))
    hi_p = np.zeros(len(sync))
    lo_q = np.zeros(len(sync))
    hi_q = np.zeros(len(sync))
    pos = {b: i for i, b in enumerate(sync)}
    for g in case.in_service_gens():
        if g.bus not in pos:
            raise BuildError(f"generator bus {g.bus} is not synchronous")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise BuildError(f"infeasible generation box at bus {g.bus}: "
                             f"p in [{g.p_min}, {g.p_max}], q in [{g.q_min}, {g.q_max}]")
        i = pos[g.bus]
        lo_p[i] += g.p_min
        hi_p[i] += g.p_max
        lo_q[i] += g.q_min
        hi_q[i] += g.q_max
    base = case.base_mva
    return lo_p / base, hi_p / base, lo_q / base, hi_q / base


def build_opf_sdp(case: RawCase, kron: KronModel, forms: QuadraticForms,
                  dyn: DynamicParams, cfg: TradeoffConfig,
                  band_size: int | None = None) -> ConeProgram:
    """Assemble the relaxed oscillation-aware OPF.

    ``band_size`` overrides ``cfg.k`` (used when the band was chosen by
    frequency range on a reference spectrum).

    Two edge cases of the weighting are handled here. At mu = 0 the band
    energy has no weight, so the epigraph block is left out (its variables
    would be unbounded); evaluate the metric afterwards at the solved
    Laplacian. At mu = 1 the cost is kept with weight ``cfg.cost_floor`` so
    that the solver returns the cheapest of the most stable dispatches
    rather than an arbitrary (and generally higher-rank) point of that face.
    Set ``cfg.cost_floor = 0`` for the plain endpoint.
    """
    k = band_size if band_size is not None else cfg.k
    if k is None:
        raise BuildError("band size unresolved; select the band before building")
    gamma = cfg.gamma if cfg.gamma is not None else dyn.gamma
    bus_ids = case.bus_ids
    N = len(bus_ids)
    sync = kron.sync_buses
    S = len(sync)
    if tuple(dyn.buses) != tuple(sync):
        raise BuildError("dynamics and Kron model disagree on the synchronous buses")
    if len(forms.M_p) != N:
        raise BuildError("quadratic forms do not match the case size")
    if not 1 <= k < S:
        raise BuildError(f"band size {k} needs 1 <= k < {S}")

    lo_p, hi_p, lo_q, hi_q = _gen_limits(case, sync)
    base = case.base_mva
    bidx = case.bus_index()
    s_idx = np.array([bidx[b] for b in sync])
    weights = kron.coupling()
    edges = [(a, b) for a in range(S) for b in range(a + 1, S) if weights[a, b] != 0.0]

    prog = ConeProgram()
    X = prog.add_block("V_real", "sym", 2 * N)
    lift = HermitianLift(X)
    pg = prog.add_block("p_g", "vec", S)
    qg = prog.add_block("q_g", "vec", S)
    reE = prog.add_block("re_E", "vec", len(edges))

    # generation boxes (pinned to zero at load-only buses)
    for i, b in enumerate(sync):
        for blk, lo, hi, tag in ((pg, lo_p[i], hi_p[i], "p"), (qg, lo_q[i], hi_q[i], "q")):
            var = blk.scalar(i)
            if lo == hi:
                prog.add_eq({var: 1.0}, lo, f"{tag}g_fix[{b}]")
            else:
                prog.add_le({var: 1.0}, hi, f"{tag}g_max[{b}]")
                prog.add_le({var: -1.0}, -lo, f"{tag}g_min[{b}]")

    # nodal balances
    pos = {b: i for i, b in enumerate(sync)}
    for n, bus in enumerate(case.buses):
        cp = lift.trace_coefs(forms.M_p[n])
        cq = lift.trace_coefs(forms.M_q[n])
        if bus.id in pos:
            i = pos[bus.id]
            cp[pg.scalar(i)] = -1.0
            cq[qg.scalar(i)] = -1.0
            prog.add_eq(cp, -bus.p_load / base, f"p_bal[{bus.id}]")
            prog.add_eq(cq, -bus.q_load / base, f"q_bal[{bus.id}]")
        else:
            prog.add_eq(cp, 0.0, f"p_zero[{bus.id}]")
            prog.add_eq(cq, 0.0, f"q_zero[{bus.id}]")

    # voltage window on |v_n|^2
    for n, bus in enumerate(case.buses):
        prog.add_le(lift.diag_coefs(n), bus.v_max**2, f"v_max[{bus.id}]")
        prog.add_le({c: -v for c, v in lift.diag_coefs(n).items()}, -bus.v_min**2,
                    f"v_min[{bus.id}]")

    # from-end current magnitude
    for kbr, Mi in forms.M_i.items():
        br = case.branches[kbr]
        if br.rate > 0:
            prog.add_le(lift.trace_coefs(Mi), (br.rate / base) ** 2,
                        f"i_max[{br.from_bus}-{br.to_bus}#{kbr}]")

    # Re E_ab on coupled pairs, tied to X through the Kron voltage map
    T = kron.voltage_map()
    T_inv = np.linalg.inv(T)
    for e, (a, b) in enumerate(edges):
        H_re, _ = internal_form(T_inv, s_idx, a, b, N)
        row = {c: -v for c, v in lift.trace_coefs(H_re).items()}
        row[reE.scalar(e)] = 1.0
        prog.add_eq(row, 0.0, f"re_E[{sync[a]},{sync[b]}]")

    _sym_psd(prog, "V_real")

    M, _, _ = dyn.vectors(sync)
    L_M = laplacian_expr(edges, reE, weights, 1.0 / np.sqrt(M))
    if cfg.mu > 0.0:
        # mean eigenvalue of L_M at the flat profile e = 1
        l_scale = float(np.sum(weights * (1.0 - np.eye(S)) / M[:, None])) / S
        build_lemma1_block(prog, L_M, M, k, gamma, weight=cfg.mu, l_scale=l_scale)

    cost_weight = max(1.0 - cfg.mu, cfg.cost_floor)
    for i, b in enumerate(sync):
        c = case.cost_of(b)
        if c.c_p and cost_weight:
            prog.add_objective(pg.scalar(i), cost_weight * c.c_p)
        if c.c_q and cost_weight:
            prog.add_objective(qg.scalar(i), cost_weight * c.c_q)

    prog.meta.update(mu=cfg.mu, k=k, gamma=gamma, S=S, sync=tuple(sync),
                     bus_ids=tuple(bus_ids), sync_index=s_idx, N=N, T_inv=T_inv,
                     inertia=M, laplacian_expr=L_M, lift=lift, edges=edges,
                     cost_weight=cost_weight)
    return prog


def laplacian_expr(edges, reE, weights: np.ndarray, scale: np.ndarray) -> LinearMatrix:
    """diag(scale) L diag(scale) with L_ab = -w_ab Re E_ab and zero row sums."""
    S = weights.shape[0]
    lm = LinearMatrix(S, "L_M")
    for e, (a, b) in enumerate(edges):
        var = reE.scalar(e)
        w = weights[a, b]
        lm.add(a, a, var, scale[a] ** 2 * w)
        lm.add(b, b, var, scale[b] ** 2 * w)
        lm.add(a, b, var, -scale[a] * scale[b] * w)
    return lm


def voltage_matrix(prog: ConeProgram, x: np.ndarray) -> np.ndarray:
    """Hermitian V read off a solution vector."""
    return prog.meta["lift"].value(x)


def lifted_internal(prog: ConeProgram, x: np.ndarray) -> np.ndarray:
    """E = T^-1 V[S,S] T^-H at a solution vector."""
    V = voltage_matrix(prog, x)
    s_idx = prog.meta["sync_index"]
    Ti = prog.meta["T_inv"]
    return Ti @ V[np.ix_(s_idx, s_idx)] @ Ti.conj().T


def laplacian_value(prog: ConeProgram, x: np.ndarray) -> np.ndarray:
    """Laplacian carried by the solution (the one the epigraph LMI saw)."""
    r = np.sqrt(prog.meta["inertia"])
    return r[:, None] * prog.meta["laplacian_expr"].evaluate(x) * r[None, :]


def generation_cost(prog: ConeProgram, case: RawCase, x: np.ndarray) -> float:
    """Unweighted linear generation cost sum c_p p_g + c_q q_g."""
    pg = prog.value(x, "p_g")
    qg = prog.value(x, "q_g")
    total = 0.0
    for i, b in enumerate(prog.meta["sync"]):
        c = case.cost_of(b)
        total += c.c_p * pg[i] + c.c_q * qg[i]
    return float(total)
