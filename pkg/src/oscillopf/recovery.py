"""Exactness checks and rank-one recovery of a physical operating point."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .casefile import DynamicParams, RawCase
from .dynamics import (AdmissibilityWarning, OperatingPoint, laplacian_from_angles,
                       max_edge_spread, metric_from_laplacian)
from .network import AdmittanceModel, KronModel, branch_admittances, injections

EXACTNESS_THRESHOLD = 1e-3
REPORT_SCHEMA_VERSION = 1


class InexactRelaxation(ValueError):
    """The lifted matrix is not close enough to rank one."""

    def __init__(self, ratio: float, threshold: float):
        self.ratio = ratio
        self.threshold = threshold
        super().__init__(f"relaxation is not exact: rank-1 ratio {ratio:.3e} "
                         f"exceeds threshold {threshold:.1e}")


def rank1_ratio(X: np.ndarray, psd_tol: float = 1e-6) -> float:
    """lambda_2 / lambda_1 of a Hermitian PSD matrix (eigenvalues descending)."""
    X = np.asarray(X)
    if X.shape[0] < 2:
        raise ValueError("need at least a 2x2 matrix")
    lam = np.linalg.eigvalsh(0.5 * (X + X.conj().T))[::-1]
    if lam[0] <= 0:
        raise ValueError("matrix is zero (or negative definite); ratio undefined")
    if lam[-1] < -psd_tol * lam[0]:
        raise ValueError(f"matrix is not PSD (min eigenvalue {lam[-1]:.3e})")
    return float(max(lam[1], 0.0) / lam[0])


def extract_voltages(V: np.ndarray, ref_index: int, threshold: float = EXACTNESS_THRESHOLD,
                     allow_inexact: bool = False) -> np.ndarray:
    """sqrt(lambda_1) u_1 rotated so that entry ``ref_index`` is real positive.

    Refuses (``InexactRelaxation``) when the rank-1 ratio exceeds
    ``threshold`` unless ``allow_inexact`` is set, in which case the best
    rank-one approximation is returned.
    """
    ratio = rank1_ratio(V)
    if ratio > threshold and not allow_inexact:
        raise InexactRelaxation(ratio, threshold)
    lam, U = np.linalg.eigh(0.5 * (V + V.conj().T))
    v = np.sqrt(lam[-1]) * U[:, -1]
    return reference(v, ref_index)


def reference(v: np.ndarray, ref_index: int) -> np.ndarray:
    """Rotate a phasor vector so that ``v[ref_index]`` has angle zero."""
    ph = v[ref_index]
    if abs(ph) == 0:
        raise ValueError("reference entry is zero; cannot fix the angle")
    return v * (abs(ph) / ph)


@dataclass
class Violation:
    kind: str
    element: str
    value: float
    limit: float
    excess: float


@dataclass
class ExactnessReport:
    rank_ratio_V: float
    rank_ratio_E: float
    recovered_v: np.ndarray
    recovered_e: np.ndarray
    max_pf_residual: float
    limit_violations: list[Violation]
    f_y_recovered: float
    cost_recovered: float
    exact: bool = True
    threshold: float = EXACTNESS_THRESHOLD
    coupling_residual: float = 0.0
    max_angle_spread: float = 0.0
    p_g: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q_g: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def relaxation_gap(self) -> bool:
        return not self.exact

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        d["relaxation_gap"] = self.relaxation_gap
        for key in ("recovered_v", "recovered_e"):
            z = np.asarray(getattr(self, key))
            d[key] = [[float(c.real), float(c.imag)] for c in z]
        for key in ("p_g", "q_g"):
            d[key] = [float(t) for t in getattr(self, key)]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _gen_boxes(case: RawCase, sync):
    pos = {b: i for i, b in enumerate(sync)}
    lo = np.zeros((len(sync), 2))
    hi = np.zeros((len(sync), 2))
    for g in case.in_service_gens():
        i = pos[g.bus]
        lo[i] += (g.p_min, g.q_min)
        hi[i] += (g.p_max, g.q_max)
    return lo / case.base_mva, hi / case.base_mva


def verify_dispatch(v: np.ndarray, e: np.ndarray, case: RawCase, adm: AdmittanceModel,
                    kron: KronModel, dyn: DynamicParams, k: int,
                    dispatch: tuple[np.ndarray, np.ndarray] | None = None,
                    rank_ratio_V: float = 0.0, rank_ratio_E: float = 0.0,
                    threshold: float = EXACTNESS_THRESHOLD,
                    tol: float = 1e-5) -> ExactnessReport:
    """Check a recovered (v, e) against the original, non-lifted constraints.

    ``dispatch`` is the (p_g, q_g) returned by the relaxation, ordered like
    the synchronous buses; when given, the nodal balance residual is taken
    against it, otherwise generation is read off the recovered injections.
    Violations larger than ``tol`` are listed, never raised.
    """
    base = case.base_mva
    idx = case.bus_index()
    sync = kron.sync_buses
    s_idx = np.array([idx[b] for b in sync])
    sync_pos = {b: i for i, b in enumerate(sync)}
    load = np.array([complex(b.p_load, b.q_load) for b in case.buses]) / base
    s_inj = injections(adm, v)
    needed = s_inj + load  # generation each bus must supply

    lo, hi = _gen_boxes(case, sync)
    has_gen = set(case.generator_buses())
    gen = np.zeros(len(case.buses), dtype=complex)
    if dispatch is not None:
        p_g, q_g = (np.asarray(t, dtype=float) for t in dispatch)
        gen[s_idx] = p_g + 1j * q_g
    else:
        for b in has_gen:
            gen[idx[b]] = needed[idx[b]]
    resid = np.abs(needed - gen)
    p_rec = needed.real[s_idx]
    q_rec = needed.imag[s_idx]
    for n, b in enumerate(sync):
        if b not in has_gen:
            p_rec[n] = q_rec[n] = 0.0

    out: list[Violation] = []

    def check(kind, element, value, limit, upper=True):
        excess = value - limit if upper else limit - value
        if excess > tol:
            out.append(Violation(kind, element, float(value), float(limit), float(excess)))

    for n, bus in enumerate(case.buses):
        vm = abs(v[n])
        check("v_max", str(bus.id), vm, bus.v_max)
        check("v_min", str(bus.id), vm, bus.v_min, upper=False)
    for b in has_gen:
        i = sync_pos[b]
        j = idx[b]
        check("p_max", str(b), needed[j].real, hi[i, 0])
        check("p_min", str(b), needed[j].real, lo[i, 0], upper=False)
        check("q_max", str(b), needed[j].imag, hi[i, 1])
        check("q_min", str(b), needed[j].imag, lo[i, 1], upper=False)
    for kbr, br in enumerate(case.branches):
        if not br.status or br.rate <= 0:
            continue
        yff, yft, _, _ = branch_admittances(br)
        i_f = yff * v[idx[br.from_bus]] + yft * v[idx[br.to_bus]]
        check("i_max", f"{br.from_bus}-{br.to_bus}#{kbr}", abs(i_f), br.rate / base)

    # v_S = T e up to a common phase (both vectors carry their own reference)
    Te = kron.voltage_map() @ e
    vS = v[s_idx]
    inner = np.vdot(Te, vS)
    phase = inner / abs(inner) if abs(inner) > 0 else 1.0
    coupling = float(np.abs(vS - phase * Te).max())
    if coupling > tol:
        out.append(Violation("coupling", "v_S - T e", coupling, 0.0, coupling))

    op = OperatingPoint.from_complex(e)
    spread = max_edge_spread(op, kron)
    if spread >= np.pi / 2:
        out.append(Violation("admissibility", "max edge angle spread", spread, np.pi / 2,
                             spread - np.pi / 2))
    M, _, _ = dyn.vectors(sync)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdmissibilityWarning)
        L = laplacian_from_angles(op, kron)
    try:
        f_y = metric_from_laplacian(L, M, dyn.gamma, k)
    except ValueError:
        f_y = float("nan")

    cost = 0.0
    for n, b in enumerate(sync):
        c = case.cost_of(b)
        cost += c.c_p * p_rec[n] + c.c_q * q_rec[n]

    return ExactnessReport(
        rank_ratio_V=float(rank_ratio_V), rank_ratio_E=float(rank_ratio_E),
        recovered_v=v, recovered_e=e, max_pf_residual=float(resid.max()),
        limit_violations=out, f_y_recovered=float(f_y), cost_recovered=float(cost),
        exact=bool(rank_ratio_V <= threshold), threshold=threshold,
        coupling_residual=coupling, max_angle_spread=float(spread),
        p_g=p_rec, q_g=q_rec)
