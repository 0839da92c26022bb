import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pvi_jensen import jensen, models, pacbayes
from pvi_jensen.ensemble import ParticleEnsemble
from pvi_jensen.harness.data import Dataset

PRIOR = models.Prior(0.0, 1.0)


def one_weight(weights):
    spec = models.ModelSpec(input_dim=1, bias=False)
    return ParticleEnsemble(spec, np.asarray(weights, float).reshape(-1, 1))


def test_kl_single_particle_at_mean():
    assert pacbayes.kl_ensemble_prior(one_weight([0.0]), PRIOR) == pytest.approx(
        0.9189385332046727, abs=1e-14)


def test_kl_two_particles():
    kl = pacbayes.kl_ensemble_prior(one_weight([0.0, 2.0]), PRIOR)
    assert kl == pytest.approx(0.5 * math.log(2 * math.pi) + 1.0 - math.log(2), abs=1e-14)


def test_first_order_terms():
    ens = one_weight([1.0])
    data = Dataset(np.array([[1.0], [2.0]]), np.array([[1.0], [2.0]]))
    rep = pacbayes.bound_first_order(ens, data, PRIOR, pacbayes.BoundConfig(xi=0.05, c=1.0))
    assert rep.empirical_term == pytest.approx(0.5 * math.log(2 * math.pi))
    kl = 0.5 * math.log(2 * math.pi) + 0.5
    assert rep.kl_term == pytest.approx(kl / 2)
    assert rep.confidence_term == pytest.approx(math.log(20) / 2)
    assert rep.total == pytest.approx(rep.empirical_term + rep.kl_term + rep.confidence_term)
    assert rep.psi_excluded and rep.certified


def test_divisors():
    L = np.array([[0.0, -1.0], [-2.0, -0.5]])
    cfg = pacbayes.BoundConfig(xi=0.1, c=2.0, psi_constant=1.0)
    base = (math.log(10) + 1.0) / (2.0 * 2)
    for variant, k in (("first_order", 1), ("loss_repulsion", 3), ("Rc", 2), ("Rw", 2), ("Rd", 2),
                       ("Rg", 2)):
        rep = pacbayes.assemble(variant, L, 0.0, cfg)
        assert rep.confidence_term == pytest.approx(base / k)
        assert not rep.psi_excluded


def test_repulsion_lowers_empirical_term():
    L = np.array([[0.0, -1.0], [-2.0, -0.5]])
    cfg = pacbayes.BoundConfig()
    plain = pacbayes.assemble("first_order", L, 0.0, cfg).empirical_term
    for v in ("loss_repulsion", "Rc", "Rw", "Rd", "Rg"):
        rep = pacbayes.assemble(v, L, 0.0, cfg)
        assert rep.empirical_term == pytest.approx(plain - rep.repulsion_term)
    assert pacbayes.assemble("loss_repulsion", L, 0.0, cfg).repulsion_term == pytest.approx(
        np.mean(jensen.repulsion_R("h_m", L)))
    assert pacbayes.assemble("Rd", L, 0.0, cfg).repulsion_term == pytest.approx(
        np.mean(jensen.repulsion_Rd(L)[1]))


def test_oracle_bandwidth_flagged():
    L = np.array([[0.0], [-2.0]])
    rep = pacbayes.assemble("loss_repulsion", L, 0.0, pacbayes.BoundConfig(), kind="h")
    assert not rep.certified
    assert "not a certified bound" in rep.note


def test_single_particle_no_repulsion():
    rep = pacbayes.assemble("loss_repulsion", np.array([[-1.0, -2.0]]), 0.0, pacbayes.BoundConfig())
    assert rep.repulsion_term == 0.0


def test_config_validation():
    for bad in (dict(xi=0.0), dict(xi=1.0), dict(c=0.0)):
        with pytest.raises(ValueError):
            pacbayes.BoundConfig(**bad)
    with pytest.raises(ValueError):
        pacbayes.bound_ensemble("first_order", one_weight([0.0]), Dataset([[1.0]], [[1.0]]), PRIOR)


def test_json_sorted():
    rep = pacbayes.assemble("Rc", np.array([[0.0], [-2.0]]), 0.1, pacbayes.BoundConfig())
    text = rep.to_json()
    assert '"variant": "Rc"' in text
    assert text.index('"certified"') < text.index('"variant"')


@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 5)),
              elements=st.floats(-10, 0)))
def test_repulsion_variants_never_loosen_below_bma(L):
    cfg = pacbayes.BoundConfig()
    floor = -float(np.mean(jensen.bma_log_predictive(L)))
    for v in ("loss_repulsion", "Rc", "Rw", "Rd", "Rg"):
        assert pacbayes.assemble(v, L, 0.0, cfg).empirical_term >= floor - 1e-9
