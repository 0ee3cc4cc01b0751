import numpy as np
import pytest

from latmaxwell import model
from latmaxwell import spectral as sp
from latmaxwell.errors import DegenerateBand

P_ISO = model.MaterialParams((1, 1, 1), (1, 1, 1))
P_NORM = model.MaterialParams((1, 3, 2), (1, 1, 1))
X = np.array([0.4, 1.0, -0.8])


def _is_projector(m, rank):
    return np.allclose(m @ m, m, atol=1e-10) and abs(np.trace(m) - rank) < 1e-10


def test_decompose_orthonormal():
    dec = sp.decompose(P_NORM, X)
    u = dec.eigenvectors
    gram = u.conj().T @ (u / dec.weight[:, None])
    assert np.allclose(gram, np.eye(6), atol=1e-12)


def test_pi2_matches_contour():
    pr = sp.projector_pi2(P_NORM, X)
    assert _is_projector(pr.matrix, 2)
    assert np.allclose(pr.matrix, sp.contour_pi2(P_NORM, X), atol=1e-8)


def test_pi1_sum_is_pi2():
    p1 = sp.projector_pi1(P_NORM, X, "+").matrix
    m1 = sp.projector_pi1(P_NORM, X, "-").matrix
    assert _is_projector(p1, 1) and _is_projector(m1, 1)
    assert np.allclose(p1 + m1, sp.projector_pi2(P_NORM, X).matrix, atol=1e-10)


def test_pi1_isotropic_raises():
    with pytest.raises(DegenerateBand):
        sp.projector_pi1(P_ISO, X, "+")


def test_apply_phi():
    assert np.allclose(sp.apply_phi(P_NORM, X, lambda v: 0 * v), 0)
    pos = sp.apply_phi(P_NORM, X, lambda v: (v > 1e-9).astype(float))
    assert np.allclose(pos, sp.projector_pi2(P_NORM, X).matrix, atol=1e-10)


def test_projector_derivative_fd():
    d = model.derive_params(P_NORM)
    f = sp.pi2_fields(P_NORM, d, X[None, :])
    e = 1e-6
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = e
        fp = sp.pi2_fields(P_NORM, d, (X + dx)[None, :], deriv=False)["pi2"]
        fm = sp.pi2_fields(P_NORM, d, (X - dx)[None, :], deriv=False)["pi2"]
        assert np.allclose((fp - fm)[0] / (2 * e), f["dpi2"][0, j], atol=1e-6)
