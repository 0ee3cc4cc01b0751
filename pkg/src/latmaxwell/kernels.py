"""Hot loops with a compiled backend and a NumPy fallback.

``BACKEND`` is "cython" when the extension is importable and "numpy"
otherwise.  Set LATMAXWELL_PURE=1 to force the fallback.
"""

import os

import numpy as np

from .dispersion import k0_labels


def band_table_numpy(alpha, beta, z1, z2, z3):
    """tau^- and tau^+ on the tensor grid z1 x z2 x z3."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    z = np.meshgrid(np.asarray(z1, float), np.asarray(z2, float), np.asarray(z3, float), indexing="ij", sparse=True)
    a, b, c = k0_labels(beta)
    psi = alpha[0] * z[0] + alpha[1] * z[1] + alpha[2] * z[2]
    lin = beta[a] * z[a] - beta[b] * z[b] - beta[c] * z[c]
    kv = np.maximum(0.25 * lin**2 - beta[b] * beta[c] * z[b] * z[c], 0.0)
    r = np.sqrt(kv)
    return psi - r, psi + r


def _compiled():
    if os.environ.get("LATMAXWELL_PURE"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_ext = _compiled()
BACKEND = "numpy" if _ext is None else "cython"


def band_table_cython(alpha, beta, z1, z2, z3):
    if _ext is None:
        raise RuntimeError("compiled extension not available")
    labels = np.asarray(k0_labels(beta), dtype=np.intc)
    f = lambda v: np.ascontiguousarray(v, dtype=np.float64)
    return _ext.band_table(f(alpha), f(beta), labels, f(z1), f(z2), f(z3))


band_table = band_table_numpy if _ext is None else band_table_cython
