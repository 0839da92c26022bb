"""Repulsion terms, bandwidths and the Jensen chain.

Reference values were computed independently at 50-digit precision and
are frozen here.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pvi_jensen import jensen
from pvi_jensen.numerics import finite_diff_grad

L2 = np.array([0.0, -2.0])

column = arrays(np.float64, st.integers(2, 30), elements=st.floats(-10, 0))


def test_bma_and_gap_two_points():
    assert jensen.bma_log_predictive(L2) == pytest.approx(-0.5662191695169728, abs=1e-12)
    assert jensen.jensen_gap(L2) == pytest.approx(0.4337808304830272, abs=1e-12)


def test_bandwidth_examples():
    np.testing.assert_array_equal(jensen.bandwidth_inv_sq("h", [0.0, 0.0]), [1.0, 1.0])
    np.testing.assert_allclose(jensen.bandwidth_inv_sq("h", L2), [math.exp(-1), math.exp(-3)],
                               rtol=1e-14)
    assert jensen.bandwidth_inv_sq("h_w", L2) == pytest.approx(0.04978706836786394, rel=1e-14)


def test_repulsion_examples():
    assert jensen.repulsion_R("h", L2) == pytest.approx(0.05220831369241328, abs=1e-12)
    assert jensen.repulsion_R("h_m", L2) == pytest.approx(0.01920636526566836, abs=1e-12)
    assert jensen.repulsion_R("h", [-1.0, -1.0, -1.0]) == 0.0
    assert jensen.repulsion_R("h", [-3.0]) == 0.0


def test_pairwise_examples():
    assert jensen.repulsion_Rc(L2) == pytest.approx(0.012446767091965986, abs=1e-12)
    G = jensen.gram_G(L2)
    assert G[0, 1] == pytest.approx(0.9754137547217865, abs=1e-12)
    assert jensen.repulsion_Rw(L2) == pytest.approx(0.012369308086431663, abs=1e-12)


def test_dpp_forms_example():
    up, lo = jensen.repulsion_Rd(L2)
    assert up == pytest.approx(-2.545931244284982, abs=1e-10)
    assert lo == pytest.approx(-4.39871530801002, abs=1e-10)
    # both forms sit below the mean and stay ordered
    assert lo <= up < 0


def test_gfsf_example_auto_eps():
    t = jensen.gfsf_term(L2)
    assert t.tilde_h == 128.0
    assert t.eps == pytest.approx(math.sqrt(2) - 1, abs=1e-15)
    assert t.certified_doublings == 0
    assert t.value == pytest.approx(0.000441342417678423, abs=1e-14)


def test_gfsf_unit_ridge_leaves_the_chain():
    # with a unit ridge det(I + K) exceeds N and the value is negative
    v = jensen.gfsf_term(L2, eps=1.0, certify=False).value
    assert v == pytest.approx(-0.00519765725503670, abs=1e-13)
    assert v < 0


def test_gfsf_row_rule():
    gk = jensen.select_tilde_h(L2)
    assert gk.tilde_h == 128.0 and not gk.degenerate
    assert np.all(gk.matrix.sum(axis=1) < 1.5)
    assert gk.matrix.sum(axis=1)[0] == pytest.approx(1.3314387, abs=1e-6)


def test_default_eps():
    assert jensen.default_gfsf_eps(1) == 0.0
    assert jensen.default_gfsf_eps(4) == pytest.approx(4 ** 0.25 - 1)


def test_covariance_identity_hand_case():
    assert jensen.covariance_identity_check([0.0, 2.0]) == (1.0, 1.0)


def test_predictive_variance_example():
    assert jensen.predictive_variance_V([1.0, math.exp(-2)]) == pytest.approx(
        0.0934556340519386, abs=1e-14)
    v, _ = jensen.predictive_variance_V_log(L2)
    assert v == pytest.approx(0.0934556340519386, abs=1e-14)
    assert jensen.predictive_variance_V([0.3, 0.3]) == 0.0


def test_median_bandwidth_fixed_M():
    kind = jensen.BandwidthKind("h_median", 4.0)
    w = jensen.bandwidth_inv_sq(kind, L2)
    np.testing.assert_allclose(w, np.exp(L2 + (-1.0 - 2.0) - 0.0))
    with pytest.raises(ValueError):
        jensen.BandwidthKind("h_median", -1.0)
    with pytest.raises(ValueError):
        jensen.BandwidthKind("bogus")


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        jensen.repulsion_R("h", [])
    with pytest.raises(ValueError):
        jensen.repulsion_R("h", [0.0, math.nan])


def test_identical_particles_give_zero():
    L = np.full(5, -2.5)
    assert jensen.repulsion_R("h", L) == 0.0
    assert jensen.repulsion_Rc(L) == 0.0
    assert jensen.repulsion_Rw(L) == 0.0
    t = jensen.gfsf_term(L)
    assert t.value == 0.0 and t.degenerate


def test_matrix_columns_match_single_columns(rng):
    L = rng.uniform(-8, 0, (6, 4))
    for fn in (lambda x: jensen.repulsion_R("h", x), jensen.repulsion_Rc,
               jensen.repulsion_Rw, jensen.repulsion_Rg, jensen.jensen_gap):
        cols = np.array([fn(L[:, j]) for j in range(4)])
        np.testing.assert_allclose(fn(L), cols, rtol=1e-13, atol=1e-15)


def test_data_summed_gram_single_column():
    L = np.array([[0.0], [-2.0]])
    assert jensen.repulsion_Rw(L, data_sum=True) == pytest.approx(jensen.repulsion_Rw(L2))


@pytest.mark.parametrize("kind", ["h", "h_m", "h_median", jensen.BandwidthKind("h_median", 9.0)])
def test_repulsion_gradient(rng, kind):
    L = rng.uniform(-6, 0, (5, 3))
    R, g = jensen.repulsion_R_grad(kind, L)
    np.testing.assert_allclose(R, jensen.repulsion_R(kind, L), rtol=1e-13)
    fd = finite_diff_grad(lambda x: float(np.sum(jensen.repulsion_R(kind, x.reshape(5, 3)))),
                          L.ravel()).reshape(5, 3)
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_predictive_variance_gradient(rng):
    L = rng.uniform(-4, 0, 6)
    _, g = jensen.predictive_variance_V_log(L)
    fd = finite_diff_grad(lambda x: jensen.predictive_variance_V_log(x)[0], L)
    np.testing.assert_allclose(g, fd, atol=1e-8)


def test_middle_term_gradients(rng):
    L = rng.uniform(-5, 0, 7)
    hw = jensen.bandwidth_inv_sq("h_w", L)
    v, g, _ = jensen.wsgld_middle_term(L, hw)
    assert v == pytest.approx(L.mean() + jensen.repulsion_Rw(L), abs=1e-12)
    fd = finite_diff_grad(lambda x: jensen.wsgld_middle_term(x, hw)[0], L)
    np.testing.assert_allclose(g, fd, atol=1e-8)
    t = jensen.gfsf_term(L)
    _, g2, _ = jensen.gfsf_logdet_term(L, t.tilde_h, t.eps, hw)
    fd2 = finite_diff_grad(lambda x: jensen.gfsf_logdet_term(x, t.tilde_h, t.eps, hw)[0], L)
    np.testing.assert_allclose(g2, fd2, atol=1e-8)


def test_report_columns_and_csv(rng):
    Lmat = rng.uniform(-5, 0, (4, 6))
    rep = jensen.repulsion_report(Lmat)
    assert rep.chain_ok.all()
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == list(jensen.RepulsionReport.COLUMNS)
    assert len(lines) == 7
    s = rep.summary()
    assert s["num_data"] == 6 and s["chain_ok_fraction"] == 1.0


def test_lemma_examples():
    assert jensen.lemma_sqrt_check(2.0, 2.0)
    assert jensen.lemma_sqrt_check(1e-9, 1e9)
    with pytest.raises(ValueError):
        jensen.lemma_sqrt_check(0.0, 1.0)


# --- properties -----------------------------------------------------------


@given(column)
def test_chain_orderings(L):
    v = jensen.chain_values(L)
    assert jensen.chain_violations(v) == []


@given(column, st.floats(-50, 50))
def test_gap_shift_invariant(L, c):
    assert jensen.jensen_gap(L + c) == pytest.approx(jensen.jensen_gap(L), abs=1e-9)


@given(column)
def test_bma_within_range(L):
    b = jensen.bma_log_predictive(L)
    assert L.mean() - 1e-12 <= b <= L.max() + 1e-12


@given(column)
def test_permutation_invariance(L):
    p = L[::-1].copy()
    for fn in (lambda x: jensen.repulsion_R("h", x), jensen.repulsion_Rc, jensen.repulsion_Rw):
        assert fn(p) == pytest.approx(fn(L), rel=1e-12, abs=1e-15)


@given(column)
def test_witness_brackets_gap(L):
    lo, hi, gap, ok = jensen.second_order_equality_witness(L)
    assert ok


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10)))
def test_covariance_identity(L):
    lhs, rhs = jensen.covariance_identity_check(L)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@given(st.floats(1e-8, 1e8), st.floats(1e-8, 1e8))
def test_lemma_property(a, b):
    assert jensen.lemma_sqrt_check(a, b)


@settings(max_examples=50)
@given(column)
def test_gfsf_gram_row_rule_met(L):
    gk = jensen.select_tilde_h(L)
    if not gk.degenerate:
        assert np.all(gk.matrix.sum(axis=1) < L.size - 0.5)
