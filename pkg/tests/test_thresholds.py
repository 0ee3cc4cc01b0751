import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latmaxwell import model
from latmaxwell import thresholds as th
from latmaxwell.errors import InfeasibleNu, NotInSpectrum

P_ISO = model.MaterialParams((1, 1, 1), (1, 1, 1))
P_NORM = model.MaterialParams((1, 3, 2), (1, 1, 1))


def test_isotropic_enumeration():
    ts = th.enumerate_thresholds(P_ISO)
    assert np.allclose(ts.values, [1, np.sqrt(2), np.sqrt(3)], atol=1e-12)
    assert np.allclose(ts.T_sm, [np.sqrt(3)]) and np.allclose(ts.T_sa, [1, np.sqrt(2)])
    top = [t for t in ts.thresholds if t.zstar == (1.0, 1.0, 1.0)][0]
    assert top.s == (-1, -1, -1) and top.classification == th.SM
    assert np.allclose(top.C, 1 / np.sqrt(3))


def test_normalized_classification():
    ts = th.enumerate_thresholds(P_NORM)
    by = {(t.case, round(t.value, 6)) for t in ts.thresholds}
    assert (th.C2_2A, 1.931852) in by
    assert (th.C3_2, 2.0) in by
    assert (th.C2_2B, 2.065902) in by
    # independently computed: sqrt(6 -+ sqrt 3)
    assert np.allclose(ts.T_sm, [2.0, np.sqrt(6 - np.sqrt(3)), np.sqrt(6 + np.sqrt(3))], atol=1e-12)
    assert abs(ts.lambda_plus - np.sqrt(6 + np.sqrt(3))) < 1e-12


@pytest.mark.parametrize(
    "zstar,count",
    [((1, 1, 0), 8), ((0, 0, 0), 8), ((1, 1, (2 * np.sqrt(3) - 3) / 3), 16)],
)
def test_momentum_points(zstar, count):
    pts = th.momentum_points(zstar)
    assert len(pts) == count
    for x in pts:
        assert np.allclose(np.sin(x) ** 2, zstar, atol=1e-12)


def test_momentum_points_nu_angle():
    pts = th.momentum_points((1, 1, (2 * np.sqrt(3) - 3) / 3))
    assert abs(min(abs(x[2]) for x in pts) - np.arcsin(np.sqrt((2 * np.sqrt(3) - 3) / 3))) < 1e-12
    assert abs(min(abs(x[2]) for x in pts) - 0.4042397437) < 1e-9


def test_stratify():
    assert th.stratify(P_NORM, np.zeros(3), 0.0) == 6
    x = np.array([np.pi / 2, 0.0, 0.0])
    assert th.stratify(P_ISO, x, 1.0) == 2
    assert th.stratify(P_NORM, np.full(3, np.pi / 2), np.sqrt(6 + np.sqrt(3))) == 1
    with pytest.raises(NotInSpectrum):
        th.stratify(P_NORM, np.full(3, np.pi / 2), 0.5)


def test_oracle_isotropic_coarse():
    vals = th.critical_value_oracle(P_ISO, 101)
    assert len(vals) == 3
    assert np.allclose(vals, [1, np.sqrt(2), np.sqrt(3)], atol=0.03)


def test_construct_from_nu_examples():
    q = th.construct_from_nu((1.0, 1.0, -2.0), (2 * np.sqrt(3) - 3) / 3)
    assert abs(model.normalized_derived(q).nu - (2 * np.sqrt(3) - 3) / 3) < 1e-10
    q = th.construct_from_nu((2.0, 1.0, -1.0), 0.5)
    d = model.normalized_derived(q)
    assert np.allclose(model.raw_abg(d.normalized)[1], (2, 1, -1))
    with pytest.raises(InfeasibleNu):
        th.construct_from_nu((4.0, 1.0, -1.0), -1.0)


def test_nu_zero_gives_case_c():
    q = th.construct_from_nu((2.0, 1.0, -1.0), 0.0)
    cases = [t.case for t in th.enumerate_thresholds(q).thresholds]
    assert th.C2_2C in cases and th.C2_2A not in cases


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0))
def test_nu_round_trip(target):
    q = th.construct_from_nu((2.0, 1.0, -1.0), target)
    assert abs(model.normalized_derived(q).nu - target) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.floats(0.2, 5.0)] * 6))
def test_thresholds_inside_spectrum(q):
    p = model.MaterialParams(q[:3], q[3:])
    ts = th.enumerate_thresholds(p)
    assert all(0 < v <= ts.lambda_plus * (1 + 1e-12) for v in ts.values)
    assert set(ts.T_sm).isdisjoint(ts.T_sa)
