import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latmaxwell import model
from latmaxwell.errors import InvalidParams

pos = st.floats(0.1, 10.0)
triples = st.tuples(pos, pos, pos)


def test_isotropic_derive():
    d = model.derive_params(model.MaterialParams((1, 1, 1), (1, 1, 1)))
    assert d.case == model.ISOTROPIC
    assert np.allclose(d.alpha, 1) and np.allclose(d.beta, 0) and np.allclose(d.gamma, 1)


@pytest.mark.parametrize(
    "eps,mu,alpha,beta,gamma",
    [
        ((1, 2, 3), (1, 1, 1), (2.5, 2, 1.5), (-1, 2, -1), (6, 3, 2)),
        ((1, 1, 2), (2, 2, 1), (2.5, 2.5, 2), (-3, 3, 0), (4, 4, 4)),
    ],
)
def test_raw_abg_values(eps, mu, alpha, beta, gamma):
    a, b, g = model.raw_abg(model.MaterialParams(eps, mu))
    assert np.allclose(a, alpha) and np.allclose(b, beta) and np.allclose(g, gamma)


def test_normalization_ani():
    d = model.derive_params(model.MaterialParams((1, 2, 3), (1, 1, 1)))
    assert d.op.to_dict()["description"] == "swap axes 2,3"
    assert d.normalized == model.MaterialParams((1, 3, 2), (1, 1, 1))
    assert np.allclose(model.raw_abg(d.normalized)[1], (1, 1, -2))
    assert d.case == model.BETA_TWO_POSITIVE
    assert abs(d.nu - (2 * np.sqrt(3) - 3) / 3) < 1e-12


def test_normalization_beta_two_zero():
    d = model.derive_params(model.MaterialParams((1, 1, 2), (2, 2, 1)))
    assert d.normalized == model.MaterialParams((1, 2, 1), (2, 1, 2))
    assert np.allclose(model.raw_abg(d.normalized)[1], (3, 0, -3))
    assert d.case == model.BETA_TWO_ZERO
    assert d.nu < 0


@pytest.mark.parametrize("eps", [(1, -1, 1), (0, 1, 1), (1, np.nan, 1), (1, 1)])
def test_invalid_params(eps):
    with pytest.raises(InvalidParams):
        model.MaterialParams(eps, (1, 1, 1))


def test_fiber_zero_at_origin():
    p = model.MaterialParams((1, 2, 3), (4, 5, 6))
    assert np.all(model.sym_fiber(p, np.zeros(3)) == 0)


@settings(max_examples=60, deadline=None)
@given(triples, triples)
def test_normal_form_reached(eps, mu):
    p = model.MaterialParams(eps, mu)
    d = model.derive_params(p)
    if d.case == model.ISOTROPIC:
        return
    assert model.satisfies_A0(model.raw_abg(d.normalized)[1])


@settings(max_examples=60, deadline=None)
@given(triples, triples, st.tuples(*[st.floats(-np.pi, np.pi)] * 3))
def test_sym_fiber_symmetric_traceless(eps, mu, x):
    s = model.sym_fiber(model.MaterialParams(eps, mu), np.array(x))
    assert np.allclose(s, s.T, atol=1e-12)
    assert abs(np.trace(s)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(triples, triples)
def test_identities_hold(eps, mu):
    p = model.MaterialParams(eps, mu)
    a, b, g = model.raw_abg(p)
    for v in model.identity_residuals(a, b, g, p.eps, p.mu).values():
        assert np.max(np.abs(v)) < 1e-12
