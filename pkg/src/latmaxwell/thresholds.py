"""Threshold enumeration, local classification and a brute-force critical-value scan.

All thresholds are computed for the normalized medium (beta_1 >= beta_2 >= 0 >
beta_3); ``zstar`` and momentum points are given in that frame.  The input
medium is related to it by an axis relabeling and possibly an eps/mu
exchange, both of which leave the threshold values unchanged.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import dispersion as ds
from . import model
from .errors import InfeasibleNu, NotInSpectrum

# origins
ZERO = "Zero"
T1_PLUS = "T1plus"
T1_MINUS = "T1minus"
T2 = "T2"

# local case tags
C1 = "C1"
C2_1 = "C2_1"
C2_2A = "C2_2a"
C2_2B = "C2_2b"
C2_2C = "C2_2c"
C2_2D = "C2_2d"
C2_2E = "C2_2e"
C3_1 = "C3_1"
C3_2 = "C3_2"
C3_3 = "C3_3"

SA = "SA"
SM = "SM"

VALUE_TOL = 1e-12
CLUSTER_GAP = 5e-3
NU_SNAP = 1e-12  # nu within this of 0 or 1 is treated as the boundary value


@dataclass
class Threshold:
    value: float
    origin: str
    zstar: tuple
    momentum_points: list
    case: str
    s: tuple
    classification: str
    deficiency_side: str
    band: str  # '+', '-' or 'psi' (both positive bands at a double point)
    C: tuple = field(default=())

    def to_dict(self):
        return {
            "value": self.value,
            "origin": self.origin,
            "zstar": list(self.zstar),
            "momentum_points": [list(map(float, x)) for x in self.momentum_points],
            "case": self.case,
            "s": list(self.s),
            "classification": self.classification,
            "deficiency_side": self.deficiency_side,
            "band": self.band,
            "C": list(self.C),
        }


@dataclass
class ThresholdSet:
    thresholds: list
    lambda_plus: float
    lambda_minus: float
    T_sm: list
    T_sa: list
    derived: model.DerivedParams

    @property
    def values(self):
        """Sorted distinct positive threshold values."""
        return merge_values([t.value for t in self.thresholds if t.value > 0])

    def to_dict(self):
        return {
            "thresholds": [t.to_dict() for t in self.thresholds],
            "values": self.values,
            "lambda_plus": self.lambda_plus,
            "lambda_minus": self.lambda_minus,
            "T_sm": self.T_sm,
            "T_sa": self.T_sa,
        }


def merge_values(vals, tol=VALUE_TOL):
    out = []
    for v in sorted(vals):
        if not out or v - out[-1] > tol * max(1.0, abs(v)):
            out.append(float(v))
    return out


def momentum_points(zstar):
    """All x in [-pi, pi)^3 with sin^2 x = zstar."""
    per_axis = []
    for zj in zstar:
        if zj <= 0.0:
            opts = [0.0, -np.pi]
        elif zj >= 1.0:
            opts = [np.pi / 2, -np.pi / 2]
        else:
            a = float(np.arcsin(np.sqrt(zj)))
            opts = [a, -a, np.pi - a, -(np.pi - a)]
        per_axis.append(opts)
    pts = []
    for combo in itertools.product(*per_axis):
        x = np.angle(np.exp(1j * np.array(combo)))
        x[np.isclose(x, np.pi)] = -np.pi
        if not any(np.allclose(np.exp(1j * x), np.exp(1j * q), atol=1e-12) for q in pts):
            pts.append(x)
    return pts


def stratify(p: model.MaterialParams, x, lam, tol=1e-9):
    """Multiplicity of lam as an eigenvalue of H^D(x) (6, 2 or 1)."""
    d = model.derive_params(p)
    z = np.sin(np.asarray(x, dtype=float)) ** 2
    b = ds.eval_bands(d, z)
    l2 = float(lam) ** 2
    scale = max(1.0, float(b.tau_plus))
    if abs(lam) <= tol:
        return 6 if not np.any(z) else 2
    near_p = abs(l2 - b.tau_plus) <= tol * scale
    near_m = abs(l2 - b.tau_minus) <= tol * scale
    if not (near_p or near_m):
        raise NotInSpectrum(f"{lam} is not an eigenvalue of the fiber")
    if d.case == model.ISOTROPIC or b.K0 <= ds.k0_tol(d.beta, z):
        return 2
    return 1


def _s_star(zstar):
    return tuple(int(1 - 2 * round(zj)) if zj in (0.0, 1.0) else 0 for zj in zstar)


def _grad_band_z(d, z, band):
    if band == "psi":
        return np.asarray(d.alpha, dtype=float)
    return ds.grad_tau_z(d, np.asarray(z, dtype=float), band)


def _tau(d, z, band):
    return float(ds.band_value(d, np.asarray(z, dtype=float), band))


def hess_z3(d, z, band):
    """Exact second z3-derivative of tau^band (closed form)."""
    z = np.asarray(z, dtype=float)
    if band == "psi":
        return 0.0
    return float(ds.hess_tau_z(d, z[None, :], band)[0, 2, 2])


def _local_data(d, zstar, band, case, nu):
    """s-triple and Taylor constants C_j at a threshold."""
    zs = np.asarray(zstar, dtype=float)
    tau = _tau(d, zs, band)
    sq = np.sqrt(tau)
    s_star = _s_star(zstar)
    if case in (C3_2, C3_3):
        return (0, 0, 0), ()
    g = _grad_band_z(d, zs, band)
    s = [int(np.sign(g[j]) * s_star[j]) for j in range(2)]
    c = [float(abs(g[j]) / sq) for j in range(2)]
    if case == C2_2A:
        a = float(np.arcsin(np.sqrt(nu)))
        c3 = hess_z3(d, zs, band) * np.sin(2 * a) ** 2 / (2.0 * sq)
        s.append(1)
        c.append(float(c3))
    elif case == C2_2C:
        s.append(0)
        c.append(float(hess_z3(d, zs, band) / sq))
    elif case == C2_2B:
        s.append(int(np.sign(zs[2] - nu) * s_star[2]))
        c.append(float(abs(g[2]) / sq))
    else:
        s.append(int(np.sign(g[2]) * s_star[2]))
        c.append(float(abs(g[2]) / sq))
    return tuple(s), tuple(c)


def _classify(case, s):
    if case in (C3_1, C3_2, C3_3):
        return SM
    if all(v == -1 for v in s) or all(v == 1 for v in s):
        return SM
    return SA


def _side(cls, case, s):
    if cls == SA:
        return "none"
    if case in (C3_1, C3_2, C3_3):
        return "minus"
    return "minus" if s[0] == -1 else "plus"


def _case_t1(d, zstar, band, nu):
    if d.case == model.BETA_TWO_ZERO:
        return C2_1
    if band == "+":
        return C2_2E
    if zstar[0] == 0.0 or zstar[1] == 0.0:
        return C2_2D
    if 0.0 < nu < 1.0 and zstar[2] == nu:
        return C2_2A
    if zstar[2] == nu:
        return C2_2C
    return C2_2B


def _record(d, zstar, band, origin, case, nu):
    s, c = _local_data(d, zstar, band, case, nu)
    cls = _classify(case, s)
    val = float(np.sqrt(_tau(d, zstar, band)))
    return Threshold(
        value=val,
        origin=origin,
        zstar=tuple(float(v) for v in zstar),
        momentum_points=momentum_points(zstar),
        case=case,
        s=s,
        classification=cls,
        deficiency_side=_side(cls, case, s),
        band=band,
        C=c,
    )


def x2_point(d):
    """z* of the double-band threshold for a normalized medium."""
    b = d.beta
    return (float(b[1] / b[0]), 1.0, 0.0)


def enumerate_thresholds(p: model.MaterialParams) -> ThresholdSet:
    d = model.normalized_derived(p)
    cube = [c for c in itertools.product((0.0, 1.0), repeat=3) if any(c)]
    recs = []
    zero = Threshold(0.0, ZERO, (0.0, 0.0, 0.0), momentum_points((0, 0, 0)), "", (0, 0, 0), SA, "none", "")
    if d.case == model.ISOTROPIC:
        for zs in cube:
            recs.append(_record(d, zs, "psi", T2, C1, None))
        lam_p = lam_m = float(np.sqrt(np.sum(d.alpha)))
    else:
        nu = d.nu
        if nu is not None:
            if abs(nu) < NU_SNAP:
                nu = 0.0
            elif abs(nu - 1.0) < NU_SNAP:
                nu = 1.0
        zx2 = x2_point(d)
        for zs in cube:
            if zs == zx2:
                continue
            recs.append(_record(d, zs, "+", T1_PLUS, _case_t1(d, zs, "+", nu), nu))
            recs.append(_record(d, zs, "-", T1_MINUS, _case_t1(d, zs, "-", nu), nu))
        if d.case == model.BETA_TWO_POSITIVE and 0.0 < nu < 1.0:
            zs = (1.0, 1.0, float(nu))
            recs.append(_record(d, zs, "-", T1_MINUS, C2_2A, nu))
        if d.case == model.BETA_TWO_ZERO:
            case3 = C3_1
        elif d.beta[0] == d.beta[1]:
            case3 = C3_2
        else:
            case3 = C3_3
        recs.append(_record(d, zx2, "psi", T2, case3, nu))
        lam_p = float(np.sqrt(ds.band_value(d, np.ones(3), "+")))
        lam_m = float(
            max(
                np.sqrt(ds.band_value(d, np.array([1.0, 1.0, 0.0]), "-")),
                np.sqrt(ds.band_value(d, np.ones(3), "-")),
            )
        )
    recs.sort(key=lambda t: (t.value, t.origin))
    sm = merge_values([t.value for t in recs if t.classification == SM])
    allv = merge_values([t.value for t in recs])
    sa = [v for v in allv if not any(abs(v - w) <= VALUE_TOL * max(1.0, v) for w in sm)]
    return ThresholdSet([zero] + recs, lam_p, lam_m, sm, sa, d)


# ---------------------------------------------------------------- brute force


def _cluster(vals, grads, gap=CLUSTER_GAP):
    order = np.argsort(vals, kind="stable")
    vals = np.asarray(vals)[order]
    grads = np.asarray(grads)[order]
    out = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] - vals[i - 1] > gap:
            k = start + int(np.argmin(grads[start:i]))
            out.append(float(vals[k]))
            start = i
    return out


def _fd_critical(f, n, exclude=None):
    """Values of a periodic grid function at approximate critical points."""
    h = 2.0 * np.pi / n
    grad2 = np.zeros_like(f)
    hess2 = np.zeros_like(f)
    shifted = {}
    for ax in range(3):
        fp = np.roll(f, -1, axis=ax)
        fm = np.roll(f, 1, axis=ax)
        shifted[ax] = (fp, fm)
        grad2 += ((fp - fm) / (2 * h)) ** 2
        hess2 += ((fp - 2 * f + fm) / h**2) ** 2
    for a, b in ((0, 1), (0, 2), (1, 2)):
        fpp = np.roll(np.roll(f, -1, axis=a), -1, axis=b)
        fpm = np.roll(np.roll(f, -1, axis=a), 1, axis=b)
        fmp = np.roll(np.roll(f, 1, axis=a), -1, axis=b)
        fmm = np.roll(np.roll(f, 1, axis=a), 1, axis=b)
        hess2 += 2.0 * ((fpp - fpm - fmp + fmm) / (4 * h * h)) ** 2
    g = np.sqrt(grad2)
    # nearest grid point to a critical point lies within sqrt(3) h / 2
    bound = 1.1 * np.sqrt(3.0) * 0.5 * h * np.sqrt(hess2)
    mask = g < bound
    if exclude is not None:
        mask &= ~exclude
    return f[mask], g[mask]


def critical_value_oracle(p: model.MaterialParams, grid_n=161, return_raw=False):
    """Positive critical values of the band functions found by a grid scan.

    Critical points of sqrt(tau^+-) (or sqrt(Psi0) when beta = 0) are grid
    points where the central-difference gradient is below the size allowed
    by the local finite-difference Hessian.  When beta_2 > 0 the bands touch
    along a curve; grid points within a stencil of it are skipped for the
    simple bands and the curve itself is scanned for critical points of
    sqrt(Psi0) along its tangent.
    """
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    d = model.normalized_derived(p)
    n = grid_n
    h = 2.0 * np.pi / n
    x1 = h * np.arange(n)
    xx = np.meshgrid(x1, x1, x1, indexing="ij")
    z = np.stack([np.sin(c) ** 2 for c in xx], axis=-1)
    del xx
    b = ds.eval_bands(d, z)
    vals, grads = [], []
    tip = _cone_tip(d, b.Psi0, h)
    if d.case == model.ISOTROPIC:
        fields = [(np.sqrt(b.Psi0), tip)]
    else:
        excl = tip
        if d.case == model.BETA_TWO_POSITIVE:
            lip = np.max(np.abs(d.beta))
            excl = tip | (np.sqrt(b.K0) < 2.0 * np.sqrt(3.0) * h * lip)
        fields = [(np.sqrt(b.tau_plus), excl), (np.sqrt(np.maximum(b.tau_minus, 0.0)), excl)]
    del z
    for f, ex in fields:
        v, g = _fd_critical(f, n, ex)
        vals.append(v)
        grads.append(g)
    if d.case == model.BETA_TWO_POSITIVE:
        v, g = _x2_tangential(d, n)
        vals.append(v)
        grads.append(g)
    vals = np.concatenate(vals)
    grads = np.concatenate(grads)
    keep = vals > 1e-6
    out = _cluster(vals[keep], grads[keep])
    if return_raw:
        return out, vals[keep]
    return out


def _cone_tip(d, psi, h):
    """Stencil neighborhood of z = 0, where the bands have a conical tip."""
    return psi < 12.0 * np.max(d.alpha) * h * h


def _x2_tangential(d, n):
    """Critical points of sqrt(Psi0) restricted to the band-touching curve."""
    h = 2.0 * np.pi / n
    r = d.beta[1] / d.beta[0]
    t = h * np.arange(n)
    vals, grads = [], []
    for branch in (0, 1):
        x2 = t
        s1 = np.sqrt(r) * np.abs(np.sin(x2))
        a = np.arcsin(np.clip(s1, 0.0, 1.0))
        x1 = a if branch == 0 else np.pi - a
        # curve z3 = 0, beta_1 z_1 = beta_2 z_2; parameter x2
        pts = np.stack([x1, x2, np.zeros_like(x2)], axis=-1)
        psi = ds.psi0(d.alpha, np.sin(pts) ** 2)
        f = np.sqrt(psi)
        arc = np.linalg.norm(np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0), axis=1)
        arc = np.where(arc > np.pi, 2 * h, arc)
        g = np.abs(np.roll(f, -1) - np.roll(f, 1)) / arc
        hs = np.abs(np.roll(f, -1) - 2 * f + np.roll(f, 1)) / h**2
        mask = (g < 1.1 * 0.5 * h * hs + 1e-12) & ~_cone_tip(d, psi, h)
        vals.append(f[mask])
        grads.append(g[mask])
    return np.concatenate(vals), np.concatenate(grads)


# ---------------------------------------------------------------- nu inverse


def nu_star(beta):
    b1, b2, b3 = beta
    return -((np.sqrt(b1) - np.sqrt(b2)) ** 2) / abs(b3)


def construct_from_nu(beta, nu_target, eps1=1.0, mu1=1.0) -> model.MaterialParams:
    """A medium with the given normalized beta and critical height nu.

    The height depends on the medium only through beta and alpha_3, via a
    decreasing bijection F of alpha_3 on (|beta_3|/2, inf); it is inverted
    in closed form and the remaining constants follow explicitly.
    """
    b1, b2, b3 = (float(v) for v in beta)
    if not (b1 >= b2 > 0 > b3):
        raise ValueError("beta must satisfy beta_1 >= beta_2 > 0 > beta_3")
    ns = nu_star(beta)
    if not nu_target > ns:
        raise InfeasibleNu(f"nu must exceed {ns:.17g} for this beta")
    target = abs(b3) / np.sqrt(b1 * b2) * (nu_target - ns)
    # 2r / sqrt(r^2 - c^2) = target + 2
    c = 0.5 * abs(b3)
    k = target + 2.0
    alpha3 = c * k / np.sqrt(k * k - 4.0)
    dp = alpha3 + 0.5 * b3
    dm = alpha3 - 0.5 * b3
    eps2 = dm / mu1
    mu2 = dp / eps1
    eps3 = (eps1 * b1 + eps2 * b2) / (-b3)
    mu3 = (mu1 * b1 + mu2 * b2) / (-b3)
    return model.MaterialParams((eps1, eps2, eps3), (mu1, mu2, mu3))
