"""Bus admittance matrix, Kron reduction and quadratic power-flow forms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .casefile import DynamicParams, RawCase

# Kron fill-in below this (pu) is treated as no coupling.
ZERO_COUPLING_TOL = 1e-9


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class AdmittanceModel:
    Y: np.ndarray
    bus_order: tuple[int, ...]

    def index(self, bus: int) -> int:
        return self.bus_order.index(bus)

    def indices(self, buses) -> np.ndarray:
        lookup = {b: i for i, b in enumerate(self.bus_order)}
        return np.array([lookup[b] for b in buses], dtype=int)


@dataclass(frozen=True)
class KronModel:
    sync_buses: tuple[int, ...]
    Gamma: np.ndarray
    Y_S: np.ndarray
    eff_reactance: np.ndarray
    internal_reactance: np.ndarray

    @property
    def size(self) -> int:
        return len(self.sync_buses)

    def edges(self) -> np.ndarray:
        """Boolean mask of pairs joined by a finite effective reactance."""
        mask = np.isfinite(self.eff_reactance)
        np.fill_diagonal(mask, False)
        return mask

    def coupling(self) -> np.ndarray:
        """Matrix of 1/gamma_nm with zeros on the diagonal and on missing edges."""
        with np.errstate(divide="ignore"):
            w = np.where(self.edges(), 1.0 / self.eff_reactance, 0.0)
        return w

    def voltage_map(self) -> np.ndarray:
        """Matrix T with v_S = T e."""
        return self.Gamma @ self.Y_S

    def internal_from_external(self, v_sync: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.voltage_map(), v_sync)


@dataclass(frozen=True)
class QuadraticForms:
    M_p: list
    M_q: list
    M_v: list
    M_i: dict


def branch_admittances(br, base_mva: float | None = None):
    """Two-port (Yff, Yft, Ytf, Ytt) of a pi-model branch with real tap ratio."""
    if br.r == 0.0 and br.x == 0.0:
        raise NetworkError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
    ys = 1.0 / complex(br.r, br.x)
    yc = 0.5j * br.b_charging
    tau = br.tap
    return (ys + yc) / tau**2, -ys / tau, -ys / tau, ys + yc


def build_ybus(case: RawCase) -> AdmittanceModel:
    n = case.n_bus
    idx = case.bus_index()
    Y = np.zeros((n, n), dtype=complex)
    for br in case.in_service_branches():
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = branch_admittances(br)
        Y[f, f] += yff
        Y[f, t] += yft
        Y[t, f] += ytf
        Y[t, t] += ytt
    for b in case.buses:
        i = idx[b.id]
        Y[i, i] += complex(b.shunt_g, b.shunt_b) / case.base_mva
    return AdmittanceModel(Y, tuple(case.bus_ids))


def kron_reduce(adm: AdmittanceModel, dyn: DynamicParams, sync=None) -> KronModel:
    """Eliminate non-synchronous buses and attach internal machine reactances.

    Under the standard phasor convention (line admittance 1/(jx)) the
    lossless coupling between machines n and m is Im(Gamma_nm)/(x_n x_m),
    so the effective reactance is x_n x_m / Im(Gamma_nm).
    """
    sync = tuple(dyn.buses if sync is None else sync)
    s_idx = adm.indices(sync)
    rest = np.setdiff1d(np.arange(len(adm.bus_order)), s_idx)
    Y = adm.Y
    x = np.array([dyn.internal_reactance[b] for b in sync])
    Y_S = np.diag(1.0 / (1j * x))
    A = Y[np.ix_(s_idx, s_idx)] + Y_S
    if rest.size:
        Ybb = Y[np.ix_(rest, rest)]
        if np.linalg.cond(Ybb) > 1e12:
            raise NetworkError("zero-injection block of Y is singular")
        A = A - Y[np.ix_(s_idx, rest)] @ np.linalg.solve(Ybb, Y[np.ix_(rest, s_idx)])
    if np.linalg.cond(A) > 1e12:
        raise NetworkError("reduced admittance matrix is singular")
    Gamma = np.linalg.inv(A)

    im = Gamma.imag
    S = len(sync)
    eff = np.full((S, S), np.inf)
    mask = np.abs(im) > ZERO_COUPLING_TOL
    np.fill_diagonal(mask, False)
    eff[mask] = (np.outer(x, x)[mask]) / im[mask]
    if np.any(eff[mask] <= 0):
        bad = np.argwhere(mask & (eff <= 0))[0]
        raise NetworkError(f"nonpositive effective reactance between buses "
                           f"{sync[bad[0]]} and {sync[bad[1]]}")
    eff = 0.5 * (eff + eff.T)
    return KronModel(sync, Gamma, Y_S, eff, x)


def full_internal_solve(adm: AdmittanceModel, kron: KronModel, e: np.ndarray) -> np.ndarray:
    """External voltages of all buses from internal voltages, unreduced solve."""
    n = len(adm.bus_order)
    s_idx = adm.indices(kron.sync_buses)
    A = adm.Y.copy()
    A[np.ix_(s_idx, s_idx)] += kron.Y_S
    rhs = np.zeros(n, dtype=complex)
    rhs[s_idx] = kron.Y_S @ e
    return np.linalg.solve(A, rhs)


def quadratic_forms(adm: AdmittanceModel, case: RawCase) -> QuadraticForms:
    """Hermitian matrices giving p_n, q_n, |v_n|^2 and from-end |i_mn|^2 as v^H M v."""
    Y = adm.Y
    n = Y.shape[0]
    M_p, M_q, M_v = [], [], []
    for k in range(n):
        Phi = np.zeros_like(Y)
        Phi[k, :] = Y[k, :]
        M_p.append(0.5 * (Phi.conj().T + Phi))
        M_q.append((Phi.conj().T - Phi) / 2j)
        Mv = np.zeros((n, n), dtype=complex)
        Mv[k, k] = 1.0
        M_v.append(Mv)
    idx = {b: i for i, b in enumerate(adm.bus_order)}
    M_i = {}
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, _, _ = branch_admittances(br)
        a = np.zeros(n, dtype=complex)
        a[f] += np.conj(yff)
        a[t] += np.conj(yft)
        M_i[k] = np.outer(a, a.conj())
    return QuadraticForms(M_p, M_q, M_v, M_i)


def injections(adm: AdmittanceModel, v: np.ndarray) -> np.ndarray:
    """Complex power injected at every bus, v * conj(Y v)."""
    return v * np.conj(adm.Y @ v)


def branch_flows(case: RawCase, adm: AdmittanceModel, v: np.ndarray):
    """Per in-service branch: (index, S_from, S_to, I_from)."""
    idx = {b: i for i, b in enumerate(adm.bus_order)}
    out = []
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = branch_admittances(br)
        i_f = yff * v[f] + yft * v[t]
        i_t = ytf * v[f] + ytt * v[t]
        out.append((k, v[f] * np.conj(i_f), v[t] * np.conj(i_t), i_f))
    return out


def dump_csv(matrix: np.ndarray, labels=None) -> str:
    """Sparse (row, col, re, im) listing of nonzero entries, for debugging."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "re", "im"])
    m = np.asarray(matrix)
    for i, j in zip(*np.nonzero(np.isfinite(m) & (m != 0))):
        r = labels[i] if labels is not None else i
        c = labels[j] if labels is not None else j
        val = complex(m[i, j])
        w.writerow([r, c, repr(val.real), repr(val.imag)])
    return buf.getvalue()
