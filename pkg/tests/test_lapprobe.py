import numpy as np
import pytest

from latmaxwell import lapprobe as lp
from latmaxwell import model
from latmaxwell import thresholds as th
from latmaxwell.errors import NotConverged

P_ANI = model.MaterialParams((1, 2, 3), (1, 1, 1))
P_ISO = model.MaterialParams((1, 1, 1), (1, 1, 1))


def test_kernel_section_is_annihilated():
    x = np.random.default_rng(0).uniform(-np.pi, np.pi, size=(20, 3))
    u = lp.KernelSection()(x)
    s = np.einsum("nj,jab->nab", np.sin(x), model.sym_basis(P_ANI))
    w = u / np.sqrt(P_ANI.weights)
    assert np.allclose(np.einsum("nab,nb->na", s, w), 0, atol=1e-12)


def test_pairing_outside_spectrum_real_negative():
    lam = 2 * th.enumerate_thresholds(P_ANI).lambda_plus
    u = lp.TrigSection.random(2, seed=0)
    f = lp.pairing_trapezoid(P_ANI, u, lam + 1e-8j, 16, 64)
    assert f.real < 0 and abs(f.imag) < 1e-6 * abs(f.real)


def test_trapezoid_cap():
    u = lp.TrigSection.random(2, seed=0)
    with pytest.raises(NotConverged):
        lp.pairing_trapezoid(P_ANI, u, 1.55 + 1e-4j, 8, 16)


def test_kernel_control_case():
    u = lp.KernelSection()
    n2 = lp.weighted_norm2(P_ANI, u, 16)
    lv, c2 = lp.spectral_weights(P_ANI, u, 16)
    eps = 1e-6
    f = np.sum(c2 / (lv - 1j * eps)) / len(lv)
    assert abs(eps * f.imag - n2) < 1e-6 * n2


def test_divergence_slope_kernel():
    slope, _ = lp.divergence_slope(P_ANI, lp.KernelSection(), 0.0, grid_n=16)
    assert abs(slope + 1) < 1e-6


def test_holder_fit_synthetic():
    eps = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    assert lp.holder_fit(eps, 1 + np.sqrt(eps)) == pytest.approx(0.5, abs=1e-12)


def test_coarea_density_matches_dos():
    for t in (0.8, 1.55, 2.5):
        a = lp.band_density(P_ANI, None, t, grid_n=48)
        b = lp.dos(P_ANI, [t], eps=0.005, grid_n=128)[0]
        assert abs(a - b) < 0.05 * b


def test_dos_total_weight():
    lam = np.linspace(-40, 40, 40001)
    total = np.trapezoid(lp.dos(P_ISO, lam, eps=0.02, grid_n=32), lam)
    assert abs(total - 6) < 0.01


def test_dos_outside_spectrum_small():
    lam_p = th.enumerate_thresholds(P_ANI).lambda_plus
    assert lp.dos(P_ANI, [2 * lam_p], eps=0.01, grid_n=32)[0] < 0.01


def test_spectrum_extent_iso():
    lo, hi = lp.spectrum_extent(P_ISO, 101)
    assert lo < 1e-12 and abs(hi - np.sqrt(3)) < 1e-3


def test_scan_energies_avoid_thresholds():
    lams = lp.scan_energies(P_ANI, 20)
    marks = th.enumerate_thresholds(P_ANI).values
    assert len(lams) == 20
    assert min(abs(l - v) for l in lams for v in marks) >= 0.02


def test_no_eigenvalue_at_threshold():
    u = lp.TrigSection.random(2, seed=1)
    r = lp.no_eigenvalue_scan(P_ANI, u, [2.0], eps=1e-5, grid_n=24)
    assert r[0] < 1e-3
