import numpy as np
import pytest

from oscillopf.ambient import (DiscretizationError, SimConfig, check_step, impulse_energy,
                               simulate_eigensystem, simulate_swing, stable_dt)
from oscillopf.dynamics import eigenstate_variance, impulse_response, select_band, spectrum

QUICK = SimConfig(dt=2e-3, horizon=400.0, burn_in=40.0, n_trials=8, seed=3)


@pytest.mark.parametrize("lam,gamma,cfg", [
    (1.0, 1.0, QUICK),
    (4.0, 0.1467, SimConfig(dt=2e-3, horizon=1500.0, burn_in=100.0, n_trials=8, seed=3)),
    (1.0, 50.0, SimConfig(dt=2e-3, horizon=100.0, burn_in=5.0, n_trials=8, seed=3)),
])
def test_eigensystem_variance_within_three_sigma(lam, gamma, cfg):
    est = simulate_eigensystem(lam, gamma, cfg)
    assert abs(est.z_score(eigenstate_variance(lam, gamma))) <= 3
    assert len(est.per_trial) == cfg.n_trials


def test_longer_horizon_shrinks_stderr():
    ratios = []
    for seed in range(4):
        short = simulate_eigensystem(1.0, 1.0, SimConfig(2e-3, 200.0, 20.0, 8, seed))
        long = simulate_eigensystem(1.0, 1.0, SimConfig(2e-3, 380.0, 20.0, 8, seed))
        ratios.append(short.stderr / long.stderr)
    # doubling the sampled span should cut the error by about sqrt(2)
    assert 1.0 < np.mean(ratios) < 2.5


def test_same_seed_same_estimate():
    a = simulate_eigensystem(2.0, 0.5, QUICK)
    b = simulate_eigensystem(2.0, 0.5, QUICK)
    assert a == b


def test_coarse_step_is_rejected_with_a_suggestion():
    with pytest.raises(DiscretizationError) as info:
        simulate_eigensystem(4.0, 0.2, SimConfig(dt=1.0, horizon=10.0, burn_in=1.0))
    dt = info.value.suggested_dt
    assert 0 < dt < 1
    check_step(4.0, 0.2, dt)


def test_stable_dt_passes_its_own_check():
    for lam, gamma in [(1.0, 0.1), (400.0, 0.15), (1e4, 50.0)]:
        check_step(lam, gamma, stable_dt(lam, gamma))


def test_zero_eigenvalue_rejected():
    with pytest.raises(ValueError):
        simulate_eigensystem(0.0, 1.0, QUICK)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(horizon=10.0, burn_in=10.0)
    assert SimConfig().n_steps == 2_000_000 and SimConfig().n_burn == 200_000


@pytest.mark.parametrize("lam,gamma", [(1.0, 1.0), (0.1, 10.0), (4.0, 0.1467)])
def test_impulse_energy_closed_form(lam, gamma):
    assert impulse_energy(lam, gamma) == pytest.approx(1 / (2 * lam * gamma), abs=1e-6)


def test_impulse_response_is_real_when_oscillatory():
    t = np.linspace(0, 50, 2001)
    h = impulse_response(4.0, 0.2, t)
    assert np.abs(np.imag(h)).max() < 1e-12
    # h(0) = 0, h'(0) = 1 and h''(0) = -gamma for a unit impulse
    assert abs(np.real(h[0])) < 1e-14
    tau = 1e-4
    assert np.real(impulse_response(4.0, 0.2, tau)) / tau == pytest.approx(1 - 0.1 * tau,
                                                                         rel=1e-8)


def two_node(k=2.0, m=(1.0, 3.0)):
    L = np.array([[k, -k], [-k, k]])
    return np.array(m), L


def test_two_node_band_energy():
    M, L = two_node()
    gamma = 0.8
    cfg = SimConfig(dt=5e-3, horizon=600.0, burn_in=50.0, n_trials=8, seed=11)
    res = simulate_swing(M, gamma * M, L, [1], cfg)
    lam2 = spectrum(L, M).eigvals[1]
    assert abs(res.band_energy.z_score(eigenstate_variance(lam2, gamma))) <= 3


def test_five_node_modes_match_decoupled_variances():
    rng = np.random.default_rng(4)
    W = np.triu(rng.uniform(0.5, 2.0, (5, 5)), 1)
    W = W + W.T
    L = np.diag(W.sum(1)) - W
    M = rng.uniform(0.5, 2.0, 5)
    gamma = 0.6
    spec = spectrum(L, M)
    band = select_band(spec, k=4)
    cfg = SimConfig(dt=5e-3, horizon=500.0, burn_in=50.0, n_trials=8, seed=5)
    res = simulate_swing(M, gamma * M, L, band, cfg)
    for i in band:
        target = eigenstate_variance(spec.eigvals[i], gamma)
        assert abs(res.mode_variance[i].z_score(target)) <= 3.5


def test_uniform_shift_is_an_equilibrium():
    M, L = two_node()
    cfg = SimConfig(dt=1e-2, horizon=20.0, burn_in=0.0, n_trials=2)
    res = simulate_swing(M, 0.5 * M, L, [1], cfg, delta0=np.full(2, 0.3), noise=False)
    assert np.allclose(res.final_delta, 0.3, atol=1e-12)
    assert res.band_energy.mean < 1e-24


def test_swing_rejects_shift_mode_and_coarse_steps():
    M, L = two_node()
    with pytest.raises(ValueError, match="uniform shift"):
        simulate_swing(M, M, L, [0], QUICK)
    with pytest.raises(DiscretizationError):
        simulate_swing(M, M, L, [1], SimConfig(dt=1.0, horizon=10.0, burn_in=1.0))


def test_trajectory_csv(tmp_path):
    M, L = two_node()
    cfg = SimConfig(dt=1e-2, horizon=5.0, burn_in=1.0, n_trials=2)
    out = tmp_path / "traj.csv"
    res = simulate_swing(M, M, L, [1], cfg, trajectory_stride=100, trajectory_path=out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,y_2"
    assert len(lines) == 1 + 5 and res.trajectory.shape == (5, 2)
    assert float(lines[1].split(",")[0]) == pytest.approx(1.0)
