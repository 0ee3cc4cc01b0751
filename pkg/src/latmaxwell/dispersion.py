"""Closed-form band functions and their derivatives.

With ``z = sin(x)**2`` the nonzero eigenvalues of the fiber are
``+-sqrt(tau_pm(z))`` where ``tau_pm = Psi0 +- sqrt(K0)``, ``Psi0 = alpha.z``
and ``K0`` is a quadratic form in ``z``.  Everything here is vectorized over
leading axes of ``z`` / ``x`` (last axis of length 3).
"""

from typing import NamedTuple

import numpy as np

from . import model
from .errors import DegenerateBand, ZeroBand

K0_REL_TOL = 1e-12


class BandValues(NamedTuple):
    tau_minus: np.ndarray
    tau_plus: np.ndarray
    K0: np.ndarray
    Psi0: np.ndarray


def k0_labels(beta):
    """Index order (a, b, c) with beta_b * beta_c <= 0.

    In that order ``K0 = (beta_a z_a - beta_b z_b - beta_c z_c)^2 / 4
    - beta_b beta_c z_b z_c`` is a sum of two nonnegative terms, so it can be
    evaluated without cancellation.
    """
    beta = np.asarray(beta, dtype=float)
    if not np.any(beta):
        return (0, 1, 2)
    b = int(np.argmax(beta))
    c = int(np.argmin(beta))
    if b == c:
        c = (b + 1) % 3
    a = 3 - b - c
    return (a, b, c)


def k0_matrix(beta):
    """Symmetric Q with K0(z) = z^T Q z."""
    beta = np.asarray(beta, dtype=float)
    return 0.25 * (2.0 * np.diag(beta**2) - np.outer(beta, beta))


def k0(beta, z):
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    a, b, c = k0_labels(beta)
    lin = beta[a] * z[..., a] - beta[b] * z[..., b] - beta[c] * z[..., c]
    val = 0.25 * lin**2 - beta[b] * beta[c] * z[..., b] * z[..., c]
    return np.maximum(val, 0.0)


def k0_tol(beta, z):
    """Degeneracy threshold tol_K0 = 1e-12 (|beta| |z|)^2."""
    z = np.asarray(z, dtype=float)
    nb = np.linalg.norm(beta)
    nz = np.linalg.norm(z, axis=-1)
    return K0_REL_TOL * (nb * nz) ** 2


def psi0(alpha, z):
    return np.asarray(z, dtype=float) @ np.asarray(alpha, dtype=float)


def phi0_from_params(p: model.MaterialParams, z):
    """Product tau^+ tau^- from its expanded definition (independent of K0)."""
    e = p.eps
    m = p.mu
    z = np.asarray(z, dtype=float)
    z1, z2, z3 = z[..., 0], z[..., 1], z[..., 2]
    return (
        e[1] * e[2] * m[1] * m[2] * z1**2
        + e[0] * e[2] * m[0] * m[2] * z2**2
        + e[0] * e[1] * m[0] * m[1] * z3**2
        + (e[1] * e[2] * m[0] * m[2] + e[0] * e[2] * m[1] * m[2]) * z1 * z2
        + (e[1] * e[2] * m[0] * m[1] + e[0] * e[1] * m[1] * m[2]) * z1 * z3
        + (e[0] * e[2] * m[0] * m[1] + e[0] * e[1] * m[0] * m[2]) * z2 * z3
    )


def eval_bands(d: model.DerivedParams, z) -> BandValues:
    z = np.asarray(z, dtype=float)
    kv = k0(d.beta, z)
    ps = psi0(d.alpha, z)
    r = np.sqrt(kv)
    return BandValues(ps - r, ps + r, kv, ps)


def phi0(d: model.DerivedParams, z):
    b = eval_bands(d, z)
    return b.Psi0**2 - b.K0


def charpoly_eval(d: model.DerivedParams, z, lam):
    """lam^2 (tau^+ - lam^2)(tau^- - lam^2)."""
    b = eval_bands(d, z)
    l2 = np.asarray(lam, dtype=float) ** 2
    return l2 * (b.tau_plus - l2) * (b.tau_minus - l2)


def analytic_eigenvalues(p: model.MaterialParams, x, d=None):
    """Sorted analytic spectrum of the fiber and a flag for a double nonzero pair.

    Returns ``(values, double)`` with ``values`` of shape (..., 6).
    """
    if d is None:
        d = model.derive_params(p)
    z = np.sin(np.asarray(x, dtype=float)) ** 2
    b = eval_bands(d, z)
    sp = np.sqrt(np.maximum(b.tau_plus, 0.0))
    sm = np.sqrt(np.maximum(b.tau_minus, 0.0))
    zero = np.zeros_like(sp)
    vals = np.stack([-sp, -sm, zero, zero, sm, sp], axis=-1)
    double = b.K0 <= k0_tol(d.beta, z)
    return vals, double


def _branch_sign(branch):
    if branch in ("+", 1, "plus"):
        return 1.0
    if branch in ("-", -1, "minus"):
        return -1.0
    raise ValueError(f"unknown branch {branch!r}")


def sqrt_k0_grad(d: model.DerivedParams, z):
    """Gradient of sqrt(K0) in z; exact linear form when beta_2 = 0 or beta = 0."""
    z = np.asarray(z, dtype=float)
    if d.case == model.ISOTROPIC:
        return np.zeros_like(z)
    if d.case == model.BETA_TWO_ZERO:
        # sqrt(K0) = sum_i |beta_i| z_i / 2 on the whole cube
        return np.broadcast_to(0.5 * np.abs(d.beta), z.shape).copy()
    kv = k0(d.beta, z)
    q = k0_matrix(d.beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (z @ q) / np.sqrt(kv)[..., None]
    return g


def grad_tau_z(d: model.DerivedParams, z, branch):
    """Gradient of tau^branch with respect to z."""
    z = np.asarray(z, dtype=float)
    s = _branch_sign(branch)
    if d.case == model.BETA_TWO_POSITIVE:
        bad = k0(d.beta, z) <= k0_tol(d.beta, z)
        if np.any(bad):
            raise DegenerateBand("K0 below tolerance: tau^+ and tau^- coincide")
    return np.asarray(d.alpha) + s * sqrt_k0_grad(d, z)


def hess_tau_z(d: model.DerivedParams, z, branch):
    """Hessian of tau^branch in z (zero for the linear cases)."""
    z = np.asarray(z, dtype=float)
    s = _branch_sign(branch)
    out = np.zeros(z.shape + (3,))
    if d.case != model.BETA_TWO_POSITIVE:
        return out
    kv = k0(d.beta, z)
    q = k0_matrix(d.beta)
    gk = 2.0 * (z @ q)
    r = np.sqrt(kv)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (2.0 * q) / (2.0 * r[..., None, None]) - np.einsum(
            "...i,...j->...ij", gk, gk
        ) / (4.0 * (kv * r)[..., None, None])
    return s * h


def band_value(d, z, branch):
    b = eval_bands(d, z)
    if branch == "psi":
        return b.Psi0
    return b.tau_plus if _branch_sign(branch) > 0 else b.tau_minus


def band_derivs_x(d: model.DerivedParams, x, branch, order=1):
    """sqrt(tau) and its x-gradient (and Hessian when order=2).

    ``branch`` is '+', '-' or 'psi' (the double band sqrt(Psi0)).
    """
    x = np.asarray(x, dtype=float)
    z = np.sin(x) ** 2
    s2 = np.sin(2.0 * x)
    c2 = np.cos(2.0 * x)
    tau = band_value(d, z, branch)
    if branch == "psi":
        gz = np.broadcast_to(np.asarray(d.alpha, dtype=float), z.shape)
        hz = np.zeros(z.shape + (3,))
    else:
        gz = np.asarray(d.alpha) + _branch_sign(branch) * sqrt_k0_grad(d, z)
        hz = hess_tau_z(d, z, branch)
    v = np.sqrt(np.maximum(tau, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        gx = gz * s2 / (2.0 * v[..., None])
    if order == 1:
        return v, gx
    # d^2 tau / dx_j dx_k = hz_jk s2_j s2_k + delta_jk 2 gz_j c2_j
    ht = hz * s2[..., :, None] * s2[..., None, :]
    idx = np.arange(3)
    ht[..., idx, idx] += 2.0 * gz * c2
    with np.errstate(divide="ignore", invalid="ignore"):
        hx = ht / (2.0 * v[..., None, None]) - np.einsum("...i,...j->...ij", gx, gx) / v[..., None, None]
    return v, gx, hx


def grad_band_x(p: model.MaterialParams, x, branch, d=None):
    """x-gradient of sqrt(tau^branch(sin^2 x))."""
    if d is None:
        d = model.derive_params(p)
    x = np.asarray(x, dtype=float)
    z = np.sin(x) ** 2
    if np.any(np.all(z == 0.0, axis=-1)):
        raise ZeroBand("band gradient undefined at z = 0")
    if branch != "psi":
        grad_tau_z(d, z, branch)  # raises DegenerateBand where needed
    return band_derivs_x(d, x, branch)[1]
