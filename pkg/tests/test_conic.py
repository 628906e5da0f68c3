import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from oscillopf.conic import (Block, ConeProgram, LinearMatrix, dump_standard_form, smat,
                             standard_form, svec)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_svec_smat_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A = A + A.T
    assert np.abs(smat(svec(A)) - A).max() <= 1e-14 * max(1.0, np.abs(A).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_svec_preserves_inner_product(n, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(2, n, n))
    A, B = A + A.T, B + B.T
    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B), rel=1e-12, abs=1e-12)


def test_svec_order_is_column_major_upper():
    A = np.array([[1.0, 2.0, 4.0], [2.0, 3.0, 5.0], [4.0, 5.0, 6.0]])
    r2 = np.sqrt(2)
    assert np.allclose(svec(A), [1, 2 * r2, 3, 4 * r2, 5 * r2, 6])


def test_smat_rejects_bad_length():
    with pytest.raises(ValueError):
        smat(np.ones(4))


def test_hermitian_block_round_trip():
    rng = np.random.default_rng(0)
    blk = Block("H", "herm", 4, 3)
    H = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = H + H.conj().T
    x = np.zeros(3 + blk.length)
    x[3:] = blk.coords(H)
    assert np.allclose(blk.value(x), H)
    k, sign = blk.im(2, 1)
    assert sign * x[k] == pytest.approx(H[2, 1].imag)


def test_named_blocks_are_contiguous_and_unique():
    p = ConeProgram()
    a = p.add_block("A", "sym", 3)
    b = p.add_block("b", "vec", 2)
    assert (a.offset, a.stop, b.offset, b.stop, p.nvar) == (0, 6, 6, 8, 8)
    with pytest.raises(ValueError):
        p.add_block("A", "vec", 1)
    with pytest.raises(ValueError):
        p.add_block("C", "cube", 1)


def test_linear_matrix_svec_map_agrees_with_evaluate():
    rng = np.random.default_rng(2)
    lm = LinearMatrix(3)
    for _ in range(10):
        i, j, v = rng.integers(0, 3), rng.integers(0, 3), rng.integers(0, 5)
        lm.add(int(i), int(j), int(v), float(rng.normal()))
    lm.add_const(0, 2, 1.5)
    F, f0 = lm.svec_map(5)
    x = rng.normal(size=5)
    assert np.allclose(F @ x + f0, svec(lm.evaluate(x)))


def test_scalar_psd_program_layout():
    p = ConeProgram()
    X = p.add_block("X", "sym", 1)
    p.add_objective(X.re(0, 0), 1.0)
    p.add_le({X.re(0, 0): -1.0}, -1.0)
    lm = LinearMatrix(1)
    lm.add(0, 0, X.re(0, 0), 1.0)
    p.add_lmi(lm)
    sf = standard_form(p)
    assert sf.c.tolist() == [1.0]
    assert [(c.kind, c.size) for c in sf.cones] == [("nonneg", 1), ("psd", 1)]
    assert sf.A.toarray().tolist() == [[-1.0], [-1.0]]
    assert sf.b.tolist() == [-1.0, 0.0]


def test_duplicate_equalities_are_merged():
    p = ConeProgram()
    p.add_block("x", "vec", 2)
    p.add_eq({0: 1.0, 1: 1.0}, 2.0, "a")
    p.add_eq({1: 1.0, 0: 1.0}, 2.0, "b")
    p.add_eq({}, 0.0, "empty")
    sf = standard_form(p)
    assert sf.n_eq == 1
    p.add_eq({0: 1.0, 1: 1.0}, 3.0, "clash")
    with pytest.raises(ValueError, match="conflicting"):
        standard_form(p)


def test_rows_are_normalized():
    p = ConeProgram()
    p.add_block("x", "vec", 2)
    p.add_le({0: 200.0, 1: -50.0}, 100.0)
    sf = standard_form(p)
    assert np.allclose(sf.A.toarray(), [[1.0, -0.25]])
    assert sf.b[0] == pytest.approx(0.5)


def test_dump_is_deterministic():
    p = ConeProgram()
    p.add_block("x", "vec", 2)
    p.add_objective(1, 3.0)
    p.add_le({0: 1.0, 1: 2.0}, 1.0)
    text = dump_standard_form(standard_form(p))
    assert text == dump_standard_form(standard_form(p))
    assert text.splitlines()[:3] == ["# rows 1 cols 2", "cone nonneg 1", "c 1 3.0"]


def test_ieee39_equalities_have_full_row_rank(case39, dyn39):
    from oscillopf.network import build_ybus, kron_reduce, quadratic_forms
    from oscillopf.sdp import TradeoffConfig, build_opf_sdp
    adm = build_ybus(case39)
    prog = build_opf_sdp(case39, kron_reduce(adm, dyn39), quadratic_forms(adm, case39),
                         dyn39, TradeoffConfig(mu=0.5))
    sf = standard_form(prog)
    A_eq = sf.A[:sf.n_eq].toarray()
    assert sp.issparse(sf.A)
    assert np.linalg.matrix_rank(A_eq) == sf.n_eq
