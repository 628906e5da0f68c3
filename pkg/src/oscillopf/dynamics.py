"""Linearized swing dynamics: Laplacian, mass-scaled spectrum and the
band-limited oscillation energy metric.

Mode indices are 0-based throughout: mode 0 is the marginally stable
uniform-shift mode (eigenvalue 0) and is never part of a band.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .network import KronModel


class AdmissibilityWarning(UserWarning):
    """An effective edge has an angle spread of pi/2 or more."""


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    e_mag: np.ndarray
    e_ang: np.ndarray

    @classmethod
    def from_complex(cls, e: np.ndarray) -> "OperatingPoint":
        return cls(np.abs(e), np.angle(e))

    @property
    def phasors(self) -> np.ndarray:
        return self.e_mag * np.exp(1j * self.e_ang)


@dataclass(frozen=True)
class SwingSpectrum:
    L: np.ndarray
    L_M: np.ndarray
    inertia: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    band: tuple = ()

    @property
    def size(self) -> int:
        return len(self.eigvals)

    def with_band(self, band) -> "SwingSpectrum":
        return SwingSpectrum(self.L, self.L_M, self.inertia, self.eigvals, self.eigvecs,
                             tuple(band))


def max_edge_spread(op: OperatingPoint, kron: KronModel) -> float:
    diff = np.abs(op.e_ang[:, None] - op.e_ang[None, :])
    diff = np.abs((diff + np.pi) % (2 * np.pi) - np.pi)
    mask = kron.edges()
    return float(diff[mask].max()) if mask.any() else 0.0


def _laplacian_from_weights(W: np.ndarray) -> np.ndarray:
    W = W.copy()
    np.fill_diagonal(W, 0.0)
    return np.diag(W.sum(axis=1)) - W


def laplacian_from_angles(op: OperatingPoint, kron: KronModel) -> np.ndarray:
    """Jacobian of the lossless machine injections with respect to internal angles."""
    if np.any(op.e_mag <= 0):
        raise ValueError("internal voltage magnitudes must be positive")
    spread = max_edge_spread(op, kron)
    if spread >= np.pi / 2:
        warnings.warn(f"inadmissible operating point: angle spread {spread:.3f} rad "
                      "on an effective edge", AdmissibilityWarning, stacklevel=2)
    E = op.e_mag
    W = np.outer(E, E) * np.cos(op.e_ang[:, None] - op.e_ang[None, :]) * kron.coupling()
    return _laplacian_from_weights(W)


def laplacian_from_lifted(E_lift: np.ndarray, kron: KronModel) -> np.ndarray:
    """Same Laplacian written linearly in the lifted matrix E = e e^H."""
    E_lift = np.asarray(E_lift)
    return _laplacian_from_weights(np.real(E_lift) * kron.coupling())


def spectrum(L: np.ndarray, M: np.ndarray, check_tol: float = 1e-8) -> SwingSpectrum:
    """Eigen-decomposition of M^{-1/2} L M^{-1/2}, eigenvalues ascending.

    The first eigenvector is signed so that it equals (1'M1)^{-1/2} M^{1/2} 1.
    """
    M = np.asarray(M, dtype=float)
    if np.any(M <= 0):
        raise SpectrumError("inertias must be positive")
    L = 0.5 * (L + L.T)
    r = 1.0 / np.sqrt(M)
    L_M = r[:, None] * L * r[None, :]
    try:
        lam, U = np.linalg.eigh(L_M)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"eigensolver failed: {exc}") from exc
    scale = max(1.0, float(np.abs(lam).max()))
    if lam[0] < -check_tol * scale:
        raise SpectrumError(f"Laplacian is not PSD (min eigenvalue {lam[0]:.3e})")
    u1 = np.sqrt(M) / np.sqrt(M.sum())
    U = U.copy()
    if U[:, 0] @ u1 < 0:
        U[:, 0] = -U[:, 0]
    if abs(abs(U[:, 0] @ u1) - 1.0) > 1e-6:
        raise SpectrumError("zero mode is not the uniform shift; network is not connected")
    return SwingSpectrum(L, L_M, M, lam, U)


def select_band(spec: SwingSpectrum, k: int | None = None,
                omega_range: tuple[float, float] | None = None) -> tuple:
    """Pick the modes making up the band of interest.

    With ``k`` the K slowest nonzero modes (indices 1..K); with
    ``omega_range`` every nonzero mode whose sqrt(eigenvalue) lies in the
    closed interval.
    """
    if (k is None) == (omega_range is None):
        raise ValueError("give exactly one of k or omega_range")
    S = spec.size
    order = np.argsort(spec.eigvals, kind="stable")
    if k is not None:
        if not 1 <= k <= S - 1:
            raise ValueError(f"band size must be in [1, {S - 1}], got {k}")
        return tuple(int(i) for i in order[1:k + 1])
    lo, hi = omega_range
    freqs = np.sqrt(np.clip(spec.eigvals, 0.0, None))
    band = tuple(int(i) for i in order[1:] if lo <= freqs[i] <= hi)
    if not band:
        warnings.warn(f"no modes in band [{lo}, {hi}] rad/s", stacklevel=2)
    return band


def freq_response_sq(lam, gamma: float, omega):
    """|H(j omega)|^2 of the eigensystem y'' + gamma y' + lam y = x."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 / ((lam - omega**2) ** 2 + gamma**2 * omega**2)


def resonant_frequency(lam: float, gamma: float) -> float:
    if lam <= gamma**2 / 2:
        return 0.0
    return float(np.sqrt(lam - gamma**2 / 2))


def peak_response_sq(lam: float, gamma: float) -> float:
    if lam <= gamma**2 / 2:
        return float(freq_response_sq(lam, gamma, 0.0))
    return 1.0 / (gamma**2 * (lam - gamma**2 / 4))


def impulse_response(lam: float, gamma: float, t):
    """h(t) = (e^{ct} - e^{dt}) / r for t >= 0, r = sqrt(gamma^2 - 4 lam).

    Evaluated in complex arithmetic; the result is real in both the
    under- and overdamped regimes.
    """
    t = np.asarray(t, dtype=float)
    r = np.sqrt(complex(gamma**2 - 4 * lam))
    if abs(r) < 1e-12:
        h = t * np.exp(-gamma * t / 2)
        return np.where(t >= 0, h, 0.0) + 0j
    c = (-gamma + r) / 2
    d = (-gamma - r) / 2
    h = (np.exp(c * t) - np.exp(d * t)) / r
    return np.where(t >= 0, h, 0.0)


def eigenstate_variance(lam: float, gamma: float) -> float:
    if lam <= 0:
        raise ValueError("zero eigenvalue: mode is only marginally stable")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return 1.0 / (2.0 * lam * gamma)


def stability_metric(spec: SwingSpectrum, gamma: float, band=None) -> float:
    """Stationary energy of the band eigenstates under unit white-noise input."""
    band = spec.band if band is None else band
    lam = spec.eigvals[list(band)]
    if np.any(lam <= 0):
        raise ValueError("band contains a zero eigenvalue")
    return float(np.sum(1.0 / lam) / (2.0 * gamma))


def metric_from_laplacian(L: np.ndarray, M: np.ndarray, gamma: float, k: int) -> float:
    spec = spectrum(L, M)
    return stability_metric(spec, gamma, select_band(spec, k=k))


def f_delta_bounds(f_y: float, M) -> tuple[float, float]:
    """Inertia-scaled envelope (f_y/sqrt(M_max), f_y/sqrt(M_min)) of f_y.

    Since f_delta is a squared norm, the bracket that always holds is
    f_y/M_max <= f_delta <= f_y/M_min; the square-root pair is the bound on
    the root-mean-square angle and is reported for comparison only.
    """
    M = np.asarray(M, dtype=float)
    return f_y / np.sqrt(M.max()), f_y / np.sqrt(M.min())


def f_delta(spec: SwingSpectrum, gamma: float, band=None) -> float:
    """Angle-domain band energy; diagnostic only (never optimized)."""
    band = list(spec.band if band is None else band)
    U = spec.eigvecs[:, band]
    r = 1.0 / np.sqrt(spec.inertia)
    B = r[:, None] * U
    return float(np.trace(B @ np.diag(1.0 / spec.eigvals[band]) @ B.T) / (2.0 * gamma))


def shift_mode(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.sqrt(M) / np.sqrt(M.sum())


def projector_off_shift(M) -> np.ndarray:
    """I - u1 u1' with u1 the unit uniform-shift mode in mass-scaled coordinates."""
    u1 = shift_mode(M)
    return np.eye(len(u1)) - np.outer(u1, u1)


def frequency_response_rows(spec: SwingSpectrum, gamma: float, modes, omegas):
    """Rows (mode_index, lambda, omega, H2) for a set of modes and a frequency grid."""
    rows = []
    for i in modes:
        lam = float(spec.eigvals[i])
        for w in omegas:
            rows.append((int(i), lam, float(w), float(freq_response_sq(lam, gamma, w))))
    return rows
