"""Fiber eigendecomposition in the weighted product and the band projectors.

Numerics run on the real symmetric matrix ``S = Dhat^{1/2} H0 Dhat^{1/2}``;
a matrix ``P`` in that frame corresponds to ``Dhat^{1/2} P Dhat^{-1/2}`` for
``H^D``.  The positive-band projector is a polynomial in ``S`` whose
coefficients are smooth symmetric functions of the two band values, so it is
evaluated in closed form (and differentiated exactly) even where the bands
touch.
"""

from dataclasses import dataclass

import numpy as np

from . import dispersion as ds
from . import model
from .errors import DegenerateBand, ZeroFiber

CLUSTER_TOL = 1e-6
# below this ratio sqrt(K0)/Psi0 the split projectors use ray interpolation
CROSSING_RATIO = 1e-6
# ray step relative to the local band scale sqrt(Psi0 / max alpha)
RICHARDSON_STEP = 0.015
RICHARDSON_PAIRS = 4


def _ray_weights(m, t):
    """Lagrange weights on nodes +-h, ..., +-m h (in units of h) for evaluation at t."""
    nodes = np.concatenate([np.arange(1, m + 1), -np.arange(1, m + 1)]).astype(float)
    w = np.ones((len(nodes),) + np.shape(t))
    for i, ni in enumerate(nodes):
        for j, nj in enumerate(nodes):
            if i != j:
                w[i] = w[i] * (t - nj) / (ni - nj)
    return nodes, w


@dataclass
class FiberDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, D-orthonormal
    cluster_labels: list
    weight: np.ndarray

    def projector(self, k):
        """Rank-one spectral projector of eigenvector k in the weighted frame."""
        u = self.eigenvectors[:, k]
        return np.outer(u, u.conj() / self.weight)


@dataclass
class Projector:
    matrix: np.ndarray
    rank: int
    weight: np.ndarray

    @property
    def symmetric(self):
        return model.to_symmetric(model.MaterialParams(self.weight[:3], self.weight[3:]), self.matrix)


def _fix_phase(w):
    """Make the largest-magnitude component of each column real positive."""
    idx = np.argmax(np.abs(w), axis=-2)
    piv = np.take_along_axis(w, idx[..., None, :], axis=-2)
    return w * np.where(piv < 0, -1.0, 1.0)


def _labels(vals, analytic, double):
    names = ["tau_plus_neg", "tau_minus_neg", "zero", "zero", "tau_minus_pos", "tau_plus_pos"]
    scale = max(1.0, float(np.abs(analytic).max()))
    out = []
    used = set()
    for v in vals:
        dist = np.abs(analytic - v)
        order = np.argsort(dist, kind="stable")
        k = next(int(j) for j in order if int(j) not in used)
        if dist[k] > CLUSTER_TOL * scale:
            raise RuntimeError("numeric eigenvalue does not match any analytic band")
        used.add(k)
        name = names[k]
        if double and name != "zero":
            name = "double_pos" if v > 0 else "double_neg"
        out.append(name)
    return out


def decompose(p: model.MaterialParams, x) -> FiberDecomposition:
    x = np.asarray(x, dtype=float)
    s = model.sym_fiber(p, x)
    vals, w = np.linalg.eigh(s)
    w = _fix_phase(w)
    r = np.sqrt(p.weights)
    u = r[:, None] * w
    analytic, double = ds.analytic_eigenvalues(p, x)
    labels = _labels(vals, analytic, bool(double))
    return FiberDecomposition(vals, u.astype(complex), labels, p.weights)


def apply_phi(p: model.MaterialParams, x, phi, frame="weighted"):
    """phi(H^D(x)) by the spectral theorem; ``phi`` is a vectorized callable."""
    s = model.sym_fiber(p, np.asarray(x, dtype=float))
    vals, w = np.linalg.eigh(s)
    f = np.asarray(phi(vals), dtype=float)
    out = np.einsum("...ik,...k,...jk->...ij", w, f, w)
    if frame == "symmetric":
        return out
    r = np.sqrt(p.weights)
    return r[:, None] * out / r[None, :]


# ---------------------------------------------------------------- closed forms


def _mm(a, b):
    return np.matmul(a, b)


def _sym_s(p, x):
    basis = model.sym_basis(p)
    y = np.sin(x)
    return np.einsum("...j,jab->...ab", y, basis), np.einsum("...j,jab->...jab", np.cos(x), basis)


def _scalars(d, x):
    """Psi0, Phi0 and their x-gradients."""
    z = np.sin(x) ** 2
    s2 = np.sin(2.0 * x)
    alpha = np.asarray(d.alpha, dtype=float)
    q = ds.k0_matrix(d.beta)
    psi = z @ alpha
    kv = ds.k0(d.beta, z)
    phi = psi**2 - kv
    dpsi = alpha * s2
    dphi = (2.0 * psi[..., None] * alpha - 2.0 * (z @ q)) * s2
    return psi, phi, dpsi, dphi, kv


def pi2_fields(p, d, x, deriv=True):
    """S, dS, pi2 and d pi2 (symmetric frame) at points x of shape (n, 3)."""
    x = np.asarray(x, dtype=float)
    s, ds_ = _sym_s(p, x)
    psi, phi, dpsi, dphi, _ = _scalars(d, x)
    if np.any(phi <= 0.0):
        raise ZeroFiber("projector requested at z = 0")
    qq = np.sqrt(phi)  # product of the two positive band values
    sum_ab = np.sqrt(2.0 * psi + 2.0 * qq)
    c1 = -1.0 / (qq * sum_ab)
    c0 = (sum_ab**2 - qq) / (qq * sum_ab)
    s2m = _mm(s, s)
    s4 = _mm(s2m, s2m)
    eye = np.eye(6)
    qproj = (2.0 * psi[..., None, None] * s2m - s4) / phi[..., None, None]
    g = c0[..., None, None] * eye + c1[..., None, None] * s2m
    sg = _mm(s, g)
    pi2 = 0.5 * qproj + 0.5 * sg
    out = {"S": s, "dS": ds_, "S2": s2m, "pi2": pi2, "psi": psi, "phi": phi, "dpsi": dpsi}
    if not deriv:
        return out
    dq = dphi / (2.0 * qq[..., None])
    dsum = (dpsi + dq) / sum_ab[..., None]
    # c1 = -1/(q s), c0 = s/q - 1/s
    dc1 = (dq * sum_ab[..., None] + qq[..., None] * dsum) / (qq * sum_ab)[..., None] ** 2
    dc0 = dsum / qq[..., None] - sum_ab[..., None] * dq / qq[..., None] ** 2 + dsum / sum_ab[..., None] ** 2
    s_ = s[..., None, :, :]
    s2_ = s2m[..., None, :, :]
    ds2 = _mm(ds_, s_) + _mm(s_, ds_)
    ds4 = _mm(ds2, s2_) + _mm(s2_, ds2)
    dqp = (
        2.0 * dpsi[..., None, None] * s2_
        + 2.0 * psi[..., None, None, None] * ds2
        - ds4
        - dphi[..., None, None] * qproj[..., None, :, :]
    ) / phi[..., None, None, None]
    dg = dc0[..., None, None] * eye + dc1[..., None, None] * s2_ + c1[..., None, None, None] * ds2
    dsg = _mm(ds_, g[..., None, :, :]) + _mm(s_, dg)
    out["dpi2"] = 0.5 * dqp + 0.5 * dsg
    out["dS2"] = ds2
    return out


def _pi1_direct(d, x, f, deriv):
    z = np.sin(x) ** 2
    s2 = np.sin(2.0 * x)
    b = ds.eval_bands(d, z)
    two_r = 2.0 * np.sqrt(b.K0)
    eye = np.eye(6)
    m = f["S2"] - b.tau_minus[..., None, None] * eye
    pp = _mm(f["pi2"], m) / two_r[..., None, None]
    res = {"pi1p": pp, "pi1m": f["pi2"] - pp}
    if deriv:
        gk = ds.sqrt_k0_grad(d, z) * s2  # d sqrt(K0) / dx
        dtm = (np.asarray(d.alpha) * s2) - gk
        dm = f["dS2"] - dtm[..., None, None] * eye
        dpp = (
            _mm(f["dpi2"], m[..., None, :, :])
            + _mm(f["pi2"][..., None, :, :], dm)
            - 2.0 * gk[..., None, None] * pp[..., None, :, :]
        ) / two_r[..., None, None, None]
        res["dpi1p"] = dpp
        res["dpi1m"] = f["dpi2"] - dpp
    return res


def _crossing_axes(d):
    """The two axes with nonzero beta; the bands cross where both z vanish."""
    return [int(i) for i in np.flatnonzero(d.beta)]


def projector_fields(p, d, x, deriv=True, split=True):
    """All projector data in the symmetric frame at points x (shape (n, 3)).

    Keys: S, dS, pi2, dpi2 and, when ``split`` and beta != 0, pi1p, pi1m,
    dpi1p, dpi1m.  In the beta_2 = 0 case the bands cross on the lines where
    the two z-components with nonzero beta vanish.  The split projectors have
    direction-dependent limits there; points close to a crossing are
    evaluated by polynomial interpolation along the ray through the nearest
    crossing point (axis direction when exactly on it).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = pi2_fields(p, d, x, deriv)
    if not split or d.case == model.ISOTROPIC:
        return f
    z = np.sin(x) ** 2
    kv = ds.k0(d.beta, z)
    if d.case == model.BETA_TWO_POSITIVE:
        if np.any(kv <= ds.k0_tol(d.beta, z)):
            raise DegenerateBand("split projectors requested where the bands coincide")
        near = np.zeros(x.shape[0], dtype=bool)
    else:
        near = np.sqrt(kv) < CROSSING_RATIO * f["psi"]
    good = ~near
    res = {}
    if np.any(good):
        fg = {k: v[good] for k, v in f.items()}
        r = _pi1_direct(d, x[good], fg, deriv)
        for k, v in r.items():
            res[k] = np.zeros((x.shape[0],) + v.shape[1:])
            res[k][good] = v
    if np.any(near):
        xn = x[near]
        ax = _crossing_axes(d)
        base = xn.copy()
        base[:, ax] = np.pi * np.round(xn[:, ax] / np.pi)
        delta = np.angle(np.exp(1j * (xn - base)))
        dist = np.linalg.norm(delta, axis=1)
        direc = np.zeros_like(xn)
        direc[:, ax[0]] = 1.0
        moved = dist > 0
        direc[moved] = delta[moved] / dist[moved, None]
        h = RICHARDSON_STEP * np.sqrt(f["psi"][near] / np.max(d.alpha))
        nodes, wts = _ray_weights(RICHARDSON_PAIRS, dist / h)
        acc = None
        for nk, wk in zip(nodes, wts):
            xs = base + (nk * h)[:, None] * direc
            fs = pi2_fields(p, d, xs, deriv)
            r = _pi1_direct(d, xs, fs, deriv)
            if acc is None:
                acc = {kk: np.zeros_like(vv) for kk, vv in r.items()}
            for kk in acc:
                acc[kk] += wk.reshape((-1,) + (1,) * (r[kk].ndim - 1)) * r[kk]
        for k, v in acc.items():
            if k not in res:
                res[k] = np.zeros((x.shape[0],) + v.shape[1:])
            res[k][near] = v
    f.update(res)
    return f


def projector_pi2(p: model.MaterialParams, x) -> Projector:
    d = model.derive_params(p)
    x = np.asarray(x, dtype=float)
    f = pi2_fields(p, d, x[None, :], deriv=False)
    return Projector(model.to_weighted(p, f["pi2"][0]), 2, p.weights)


def projector_pi1(p: model.MaterialParams, x, branch) -> Projector:
    d = model.derive_params(p)
    if d.case == model.ISOTROPIC:
        raise DegenerateBand("isotropic medium has no simple bands")
    x = np.asarray(x, dtype=float)
    f = projector_fields(p, d, x[None, :], deriv=False)
    key = "pi1p" if ds._branch_sign(branch) > 0 else "pi1m"
    return Projector(model.to_weighted(p, f[key][0]), 1, p.weights)


def contour_pi2(p: model.MaterialParams, x, nodes=64):
    """pi2 from trapezoid quadrature of the resolvent on a circle (cross-check)."""
    d = model.derive_params(p)
    z = np.sin(np.asarray(x, dtype=float)) ** 2
    b = ds.eval_bands(d, z)
    a = np.sqrt(b.tau_plus)
    bb = np.sqrt(b.tau_minus)
    c = 0.5 * (a + bb)
    # geometric mean of the inner and outer distances balances both error terms
    rad = np.sqrt(0.5 * (a - bb) * c)
    hmat = model.hd(p, np.asarray(x, dtype=float))
    theta = 2.0 * np.pi * np.arange(nodes) / nodes
    acc = np.zeros((6, 6), dtype=complex)
    for t in theta:
        zeta = c + rad * np.exp(1j * t)
        # -(1/2 pi i) oint (H - zeta)^{-1} dzeta, dzeta = i rad e^{it} dt
        acc += np.linalg.inv(hmat - zeta * np.eye(6)) * rad * np.exp(1j * t)
    return -(acc / nodes).real
