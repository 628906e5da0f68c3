"""Monte-Carlo check of the band energy under ambient white-noise forcing.

Both simulators use the semi-implicit (symplectic) Euler-Maruyama step

    w <- w + dt * (-gamma w - lam y) + sqrt(dt) * xi
    y <- y + dt * w

with xi standard normal, i.e. a discrete forcing of variance 1/dt per step.
The explicit variant is unconditionally unstable for undamped oscillators
and needs gamma > lam * dt with damping, which rules it out for the stiff
modes of a real grid; the semi-implicit one is stable for
lam * dt^2 < 4 - 2 gamma dt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal

from .dynamics import eigenstate_variance, impulse_response, spectrum

# a mode must be resolved by roughly a dozen steps per period
MAX_PHASE_STEP = 0.5


class DiscretizationError(ValueError):
    def __init__(self, message: str, suggested_dt: float):
        self.suggested_dt = suggested_dt
        super().__init__(f"{message}; try dt <= {suggested_dt:.3g}")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 2000.0
    burn_in: float = 200.0
    n_trials: int = 8
    seed: int = 42

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError("burn-in must lie in [0, horizon)")
        if self.n_trials < 2:
            raise ValueError("need at least two trials for a standard error")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def n_burn(self) -> int:
        return int(round(self.burn_in / self.dt))


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    per_trial: tuple[float, ...]

    def z_score(self, target: float) -> float:
        return (self.mean - target) / self.stderr if self.stderr > 0 else np.inf


def stable_dt(lam_max: float, gamma: float) -> float:
    """Largest step keeping every mode stable and resolved (with a 2x margin)."""
    bounds = [2.0 / gamma]
    if lam_max > 0:
        bounds.append((-gamma + np.sqrt(gamma**2 + 4 * lam_max)) / lam_max)
        bounds.append(MAX_PHASE_STEP / np.sqrt(lam_max))
    return 0.5 * min(bounds)


def check_step(lam_max: float, gamma: float, dt: float) -> None:
    if gamma <= 0:
        raise ValueError("damping ratio gamma must be positive")
    unstable = lam_max * dt**2 >= 4 - 2 * gamma * dt or gamma * dt >= 2
    coarse = dt * np.sqrt(max(lam_max, 0.0)) > MAX_PHASE_STEP or gamma * dt > MAX_PHASE_STEP
    if unstable or coarse:
        what = "unstable" if unstable else "too coarse to resolve the fastest mode"
        raise DiscretizationError(
            f"step dt={dt:g} is {what} (lambda_max={lam_max:.4g}, gamma={gamma:.4g})",
            stable_dt(lam_max, gamma))


def _trial_rng(cfg: SimConfig, trial: int) -> np.random.Generator:
    # trial t is seeded with seed + t so any single trial can be rerun on its own
    return np.random.default_rng(cfg.seed + trial)


def simulate_eigensystem(lam: float, gamma: float, cfg: SimConfig = SimConfig()) -> Estimate:
    """Stationary E[y^2] of y'' + gamma y' + lam y = x, x white with unit intensity.

    The two-step recursion is run as an IIR filter on the noise sequence.
    """
    if lam <= 0:
        raise ValueError("zero eigenvalue: mode is only marginally stable")
    check_step(lam, gamma, cfg.dt)
    dt = cfg.dt
    # y[k+1] = (2 - g dt - lam dt^2) y[k] - (1 - g dt) y[k-1] + dt^1.5 xi[k]
    a = [1.0, -(2.0 - gamma * dt - lam * dt**2), 1.0 - gamma * dt]
    b = [dt**1.5]
    out = []
    for t in range(cfg.n_trials):
        xi = _trial_rng(cfg, t).standard_normal(cfg.n_steps)
        y = signal.lfilter(b, a, xi)
        out.append(float(np.mean(y[cfg.n_burn:] ** 2)))
    return _summarize(out)


def _summarize(values) -> Estimate:
    v = np.asarray(values, dtype=float)
    return Estimate(float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v))), tuple(v))


@dataclass(frozen=True)
class SwingResult:
    band_energy: Estimate
    mode_variance: dict[int, Estimate]
    final_delta: np.ndarray
    trajectory: np.ndarray  # rows (t, y_band...) of trial 0, possibly empty


def simulate_swing(M, D, L, band, cfg: SimConfig = SimConfig(), *,
                   delta0=None, noise: bool = True, chunk: int = 5000,
                   trajectory_stride: int | None = None,
                   trajectory_path=None) -> SwingResult:
    """Integrate M d'' + D d' + L d = p with E[p p'] = M delta(t - s).

    The state is advanced in physical (angle, frequency) coordinates for all
    trials at once; only the post-burn-in output is projected onto the mass
    scaled eigenvectors, y = U' M^1/2 delta. ``band`` holds 0-based mode
    indices of that spectrum. With D = gamma M the band energy converges to
    the sum of 1/(2 lambda_i gamma) over the band.

    Every ``trajectory_stride`` steps the band coordinates of the first trial
    are stored (and written as CSV when ``trajectory_path`` is given).
    """
    M = np.asarray(M, dtype=float)
    D = np.broadcast_to(np.asarray(D, dtype=float), M.shape)
    L = np.asarray(L, dtype=float)
    if np.any(D < 0):
        raise ValueError("damping must be nonnegative")
    spec = spectrum(L, M)
    band = list(band)
    if not band:
        raise ValueError("empty band")
    if 0 in band:
        raise ValueError("mode 0 is the uniform shift and has no stationary variance")
    check_step(float(spec.eigvals.max()), float((D / M).max()), cfg.dt)
    if trajectory_path is not None and trajectory_stride is None:
        trajectory_stride = 1000
    dt = cfg.dt
    S = len(M)
    T = cfg.n_trials
    P = (np.sqrt(M)[:, None] * spec.eigvecs[:, band]).T  # y_band = P delta
    # one semi-implicit step on x = [delta; omega]:
    #   omega' = damp*omega - dt M^-1 L delta + n,  delta' = delta + dt omega'
    Minv_L = L / M[:, None]
    damp = 1.0 - dt * D / M
    A = np.block([[np.eye(S) - dt**2 * Minv_L, dt * np.diag(damp)],
                  [-dt * Minv_L, np.diag(damp)]])
    noise_scale = np.sqrt(dt) / np.sqrt(M)  # dt * M^-1 * sqrt(M/dt) xi
    lift = np.concatenate([dt * noise_scale, noise_scale])[:, None]
    rngs = [_trial_rng(cfg, t) for t in range(T)]

    x = np.zeros((2 * S, T))
    if delta0 is not None:
        x[:S] += np.asarray(delta0, dtype=float)[:, None]
    sums = np.zeros((len(band), T))
    count = 0
    traj = []
    step = 0
    hist = np.empty((chunk, S, T))
    while step < cfg.n_steps:
        n = min(chunk, cfg.n_steps - step)
        if noise:
            xi = np.stack([r.standard_normal((n, S)) for r in rngs], axis=2)
            kicks = lift * np.concatenate([xi, xi], axis=1)
        for j in range(n):
            x = A @ x
            if noise:
                x += kicks[j]
            hist[j] = x[:S]
        first = max(cfg.n_burn - step, 0)  # steps step+1.. are stored at 0..n-1
        if first < n:
            y = np.einsum("bs,nst->nbt", P, hist[first:n])
            sums += (y * y).sum(axis=0)
            count += n - first
        if trajectory_stride:
            for j in range(n):
                k = step + j + 1
                if k % trajectory_stride == 0:
                    traj.append((k * dt, *(P @ hist[j, :, 0])))
        step += n

    per_mode = sums / max(count, 1)
    modes = {int(m): _summarize(per_mode[i]) for i, m in enumerate(band)}
    energy = _summarize(per_mode.sum(axis=0))
    trajectory = np.array(traj).reshape(-1, len(band) + 1)
    if trajectory_path is not None:
        with open(trajectory_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *[f"y_{m + 1}" for m in band]])
            for row in trajectory:
                w.writerow([f"{v:.10g}" for v in row])
    return SwingResult(energy, modes, x[:S, 0].copy(), trajectory)


def impulse_energy(lam: float, gamma: float, rel_tol: float = 1e-10) -> float:
    """Integral of h(t)^2 over [0, inf) by adaptive quadrature.

    The range is cut where the slowest envelope has decayed by 1e-12 and
    split into pieces of about one oscillation period so that quad never
    sees more than a few wiggles at once.
    """
    if lam <= 0 or gamma <= 0:
        raise ValueError("need lam > 0 and gamma > 0")
    disc = gamma**2 - 4 * lam
    slow = gamma / 2 if disc <= 0 else (gamma - np.sqrt(disc)) / 2
    t_end = np.log(1e12) / slow
    period = 2 * np.pi / np.sqrt(lam)
    n_pieces = int(min(max(np.ceil(t_end / period), 1), 20000))
    edges = np.linspace(0.0, t_end, n_pieces + 1)

    def f(t):
        return float(np.real(impulse_response(lam, gamma, t)) ** 2)

    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=rel_tol, limit=200)
        total += val
    return total


def band_variance_targets(lams, gamma: float) -> np.ndarray:
    return np.array([eigenstate_variance(lam, gamma) for lam in lams])
