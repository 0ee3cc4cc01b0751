import os
import subprocess
import sys

import numpy as np
import pytest

from latmaxwell import dispersion as ds
from latmaxwell import kernels
from latmaxwell import model


def _grid(n):
    t = np.linspace(-np.pi, np.pi, n)
    return np.sin(t) ** 2


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@pytest.mark.parametrize("eps,mu", [((1, 3, 2), (1, 1, 1)), ((1, 2, 1), (2, 1, 2)), ((1, 1, 1), (1, 1, 1))])
def test_backends_agree(eps, mu):
    d = model.derive_params(model.MaterialParams(eps, mu))
    z = _grid(21)
    a = kernels.band_table_numpy(d.alpha, d.beta, z, z, z)
    b = kernels.band_table_cython(d.alpha, d.beta, z, z, z)
    assert np.allclose(a[0], b[0], rtol=1e-14, atol=1e-14)
    assert np.allclose(a[1], b[1], rtol=1e-14, atol=1e-14)


def test_numpy_matches_eval_bands():
    d = model.derive_params(model.MaterialParams((1, 3, 2), (1, 1, 1)))
    z = _grid(9)
    tm, tp = kernels.band_table_numpy(d.alpha, d.beta, z, z, z)
    zz = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1)
    b = ds.eval_bands(d, zz)
    assert np.allclose(tm, b.tau_minus) and np.allclose(tp, b.tau_plus)


def test_pure_env_forces_fallback():
    env = dict(os.environ, LATMAXWELL_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from latmaxwell import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
