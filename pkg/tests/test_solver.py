import numpy as np
import pytest

from oscillopf.conic import ConeProgram, LinearMatrix, standard_form
from oscillopf.sdp import lemma1_program, stability_term
from oscillopf.solver import solve

BACKENDS = ["clarabel", "cvxopt"]


def lp_corner():
    p = ConeProgram()
    x = p.add_block("x", "vec", 1)
    p.add_objective(x.scalar(), 1.0)
    p.add_le({x.scalar(): -1.0}, -1.0)
    return p


def psd_completion():
    p = ConeProgram()
    X = p.add_block("X", "sym", 2)
    p.add_objective(X.re(0, 0), 1.0)
    p.add_objective(X.re(1, 1), 1.0)
    p.add_eq({X.re(0, 0): 1.0}, 1.0)
    lm = LinearMatrix(2)
    for i, j in ((0, 0), (0, 1), (1, 1)):
        lm.add(i, j, X.re(i, j), 1.0)
    p.add_lmi(lm)
    return p


@pytest.mark.parametrize("backend", BACKENDS)
def test_lp_corner(backend):
    p = lp_corner()
    sol = solve(standard_form(p), backend=backend)
    assert sol.status == "optimal"
    assert sol.primal[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.dual_obj <= sol.primal_obj + 1e-8


@pytest.mark.parametrize("backend", BACKENDS)
def test_psd_completion(backend):
    p = psd_completion()
    sol = solve(standard_form(p), backend=backend)
    assert sol.status == "optimal"
    assert sol.primal_obj == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(p.value(sol.primal, "X"), [[1, 0], [0, 0]], atol=1e-4)
    assert sol.gap <= 1e-8 and sol.primal_residual <= 1e-7


def random_laplacian(S, rng):
    W = np.triu(rng.uniform(0.5, 2.0, (S, S)) * (rng.random((S, S)) < 0.5), 1)
    W[np.arange(S - 1), np.arange(1, S)] = rng.uniform(0.5, 2.0, S - 1)  # path keeps it connected
    W = W + W.T
    return np.diag(W.sum(1)) - W


@pytest.mark.parametrize("backend", BACKENDS)
def test_band_energy_program_matches_eigenvalues(backend):
    rng = np.random.default_rng(10)
    S, k, gamma = 10, 3, 0.25
    M = rng.uniform(0.5, 4.0, S)
    L = random_laplacian(S, rng)
    r = 1 / np.sqrt(M)
    L_M = r[:, None] * L * r[None, :]
    lam = np.sort(np.linalg.eigvalsh(L_M))
    expected = np.sum(1 / lam[1:k + 1]) / (2 * gamma)
    prog = lemma1_program(L_M, M, k, gamma)
    sol = solve(standard_form(prog), backend=backend)
    assert sol.status == "optimal"
    assert stability_term(prog, sol.primal) == pytest.approx(expected, rel=1e-6)


def test_infeasible_status():
    p = ConeProgram()
    x = p.add_block("x", "vec", 1)
    p.add_le({x.scalar(): 1.0}, -1.0)
    p.add_le({x.scalar(): -1.0}, -1.0)
    sol = solve(standard_form(p))
    assert sol.status == "infeasible"
    assert not sol.optimal


def test_unbounded_status():
    p = ConeProgram()
    x = p.add_block("x", "vec", 1)
    p.add_objective(x.scalar(), -1.0)
    p.add_le({x.scalar(): -1.0}, 0.0)
    assert solve(standard_form(p)).status == "unbounded"


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown backend"):
        solve(standard_form(lp_corner()), backend="magic")


def test_reproducible_and_scale_invariant():
    p = psd_completion()
    a = solve(standard_form(p))
    b = solve(standard_form(p))
    assert abs(a.primal_obj - b.primal_obj) <= 1e-9
    p.c = {k: 10.0 * v for k, v in p.c.items()}
    c = solve(standard_form(p))
    assert np.abs(c.primal - a.primal).max() < 1e-4


def test_iteration_cap_reported():
    rng = np.random.default_rng(4)
    S = 8
    M = np.ones(S)
    prog = lemma1_program(random_laplacian(S, rng), M, 3, 0.5)
    sol = solve(standard_form(prog), max_iter=2)
    assert sol.status == "max_iter"
