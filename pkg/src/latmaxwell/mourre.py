"""Cutoffs, the conjugate operator A_phi as sampled coefficient fields, the
closed-form first commutator and the pointwise Mourre gap.

Everything is done for the normalized medium in the symmetric frame, where
the fiber is the real symmetric ``S(x)``.  A conjugate-operator piece

    A u = i chi P V . grad(chi P u) + formal adjoint

with a scalar cutoff ``chi``, a band projector ``P`` and a real vector field
``V`` is stored as ``A = i (sum_j R_j d_j + R_0)`` with

    R_j = 2 chi^2 V_j P
    R_0 = 2 chi (V . grad chi) P + chi^2 (div V) P + 2 chi^2 P (V . grad P)

and its commutator with ``S`` is the multiplication operator
``[S, iA] = 2 chi^2 P (d_V S) P``.  Three kinds of fields ``V`` occur:
band gradients ``grad F / |grad F|^2``, the direction ``w / F_w`` tangent to
the band-touching curve, and ``grad p1 / (grad p1 . grad F)`` near a
threshold point, where ``p1`` is the local quadratic (or quartic) model.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import dispersion as ds
from . import model
from . import spectral
from . import thresholds as th
from .errors import CalibrationFailed, EmptySupport, UnsupportedCase

CHUNK = 4096
MAX_HALVINGS = 20
PLANE_TOL = 1e-9


# ---------------------------------------------------------------- profiles


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    out[inside] = expit(-(1.0 / ti - 1.0 / (1.0 - ti)))
    return out


def smooth_step_deriv(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    v = expit(-(1.0 / ti - 1.0 / (1.0 - ti)))
    out[inside] = v * (1.0 - v) * (1.0 / ti**2 + 1.0 / (1.0 - ti) ** 2)
    return out


def bump_phi1(s):
    """1 on |s| <= 1/2, 0 on |s| >= 1, smooth and monotone in between."""
    return 1.0 - smooth_step(2.0 * np.abs(np.asarray(s, dtype=float)) - 1.0)


def bump_phi1_deriv(s):
    s = np.asarray(s, dtype=float)
    return -2.0 * np.sign(s) * smooth_step_deriv(2.0 * np.abs(s) - 1.0)


@dataclass(frozen=True)
class EnergyWindow:
    """Smooth bump: 1 on |lam - center| <= inner, 0 beyond outer."""

    center: float
    inner: float
    outer: float

    def __post_init__(self):
        if not (0.0 <= self.inner < self.outer):
            raise ValueError("need 0 <= inner < outer")

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        t = (np.abs(lam - self.center) - self.inner) / (self.outer - self.inner)
        return 1.0 - smooth_step(t)

    @property
    def support(self):
        return (self.center - self.outer, self.center + self.outer)

    def active(self, lam):
        return np.abs(np.asarray(lam) - self.center) < self.outer

    def to_dict(self):
        return {"center": self.center, "inner_halfwidth": self.inner, "outer_halfwidth": self.outer}


def metric_d0(x, xstar):
    """|e^{ix} - e^{ix*}| on the torus."""
    dlt = np.asarray(x, dtype=float) - np.asarray(xstar, dtype=float)
    return np.sqrt(np.sum(4.0 * np.sin(0.5 * dlt) ** 2, axis=-1))


def wrap(a):
    return np.angle(np.exp(1j * np.asarray(a, dtype=float)))


def torus_grid(n):
    t = 2.0 * np.pi * np.arange(n) / n
    g = np.meshgrid(t, t, t, indexing="ij")
    return np.stack([c.ravel() for c in g], axis=-1)


# ---------------------------------------------------------------- setup


@dataclass
class CutoffConfig:
    b0: float
    b: float
    s_k: float
    halvings: int = 0
    checks: dict = field(default_factory=dict)

    def to_dict(self):
        return {"b0": self.b0, "b": self.b, "tube_scale": self.s_k, "halvings": self.halvings, "checks": self.checks}


@dataclass
class Term:
    kind: str  # 'grad', 'w' or 'p1'
    proj: str  # 'pi2', 'pi1p' or 'pi1m'
    band: str  # 'psi', '+' or '-'
    cut: tuple  # ('out', set_name, tube) or ('ball', index)
    consts: tuple = ()
    s: tuple = ()
    quartic: bool = False


def resolve_t_prime(tset, t_prime):
    """Threshold values excluded from the near-threshold construction (0 always)."""
    vals = tset.values
    if t_prime in (None, "full", "full_T"):
        return [0.0] + list(vals)
    if t_prime in ("zero", "zero_only"):
        return [0.0]
    out = [0.0]
    for v in t_prime:
        v = float(v)
        if v == 0.0:
            continue
        hit = [w for w in vals if abs(w - v) < 1e-6 * max(1.0, v)]
        if not hit:
            raise ValueError(f"{v} is not a threshold")
        out.append(hit[0])
    return out


class MourreProblem:
    """Medium, energy window and excluded thresholds, with the term lists."""

    def __init__(self, p: model.MaterialParams, phi: EnergyWindow, t_prime="full"):
        self.input = p
        self.tset = th.enumerate_thresholds(p)
        self.d = self.tset.derived
        self.p = self.d.normalized
        self.phi = phi
        lo, hi = phi.support
        if lo <= 0.0:
            raise ValueError("energy window must lie in (0, inf)")
        self.t_prime = resolve_t_prime(self.tset, t_prime)
        for v in self.t_prime[1:]:
            if lo < v < hi:
                raise ValueError(f"excluded threshold {v} lies in the window support")
        self.records = [t for t in self.tset.thresholds if t.value > 0.0]
        # distinct momentum points; pairs (point index, record index)
        pts, pairs = [], []
        for i, r in enumerate(self.records):
            for x in r.momentum_points:
                x = np.asarray(x, dtype=float)
                hit = [k for k, q in enumerate(pts) if metric_d0(x, q) < 1e-9]
                if hit:
                    k = hit[0]
                else:
                    k = len(pts)
                    pts.append(x)
                pairs.append((k, i))
        self.points = np.array(pts)
        self.pairs = pairs
        self.in_scope = [not self._excluded(r.value) for r in self.records]
        self._sets()

    def _excluded(self, v):
        return any(abs(v - w) <= 1e-9 * max(1.0, v) for w in self.t_prime)

    @property
    def case(self):
        return self.d.case

    def _sets(self):
        plus, minus = set(), set()
        for k, o in self.pairs:
            r = self.records[o]
            if r.band == "+" or r.case == th.C3_1:
                plus.add(k)
            if r.band == "-" or r.case == th.C3_1:
                minus.add(k)
        self.sets = {
            "all": np.arange(len(self.points)),
            "plus": np.array(sorted(plus), dtype=int),
            "minus": np.array(sorted(minus), dtype=int),
        }

    def tube_scale(self):
        b = self.d.beta
        return 1.5 * max(np.sqrt(abs(b[1] * b[2])), 0.5 * (b[0] + b[1]), 1e-300)

    def out_terms(self):
        if self.case == model.ISOTROPIC:
            return [Term("grad", "pi2", "psi", ("out", "all", None))]
        if self.case == model.BETA_TWO_ZERO:
            return [
                Term("grad", "pi1p", "+", ("out", "plus", None)),
                Term("grad", "pi1m", "-", ("out", "minus", None)),
            ]
        return [
            Term("grad", "pi1p", "+", ("out", "plus", 1)),
            Term("grad", "pi1m", "-", ("out", "minus", 1)),
            Term("w", "pi2", "psi", ("out", "all", 2)),
            Term("w", "pi1p", "+", ("out", "all", 3)),
            Term("w", "pi1m", "-", ("out", "all", 3)),
        ]

    def in_terms(self):
        terms = []
        for k, o in self.pairs:
            r = self.records[o]
            if not self.in_scope[o]:
                continue
            cut = ("ball", k)
            if r.case == th.C1:
                terms.append(Term("p1", "pi2", "psi", cut, r.C, r.s))
            elif r.case in (th.C3_2, th.C3_3):
                terms.append(Term("w", "pi2", "psi", cut))
            elif r.case == th.C3_1:
                for band, proj in (("+", "pi1p"), ("-", "pi1m")):
                    c, s = c31_constants(self.d, r.zstar, band)
                    terms.append(Term("p1", proj, band, cut, c, s))
            else:
                proj = "pi1p" if r.band == "+" else "pi1m"
                terms.append(Term("p1", proj, r.band, cut, r.C, r.s, quartic=(r.case == th.C2_2C)))
        return terms


def c31_constants(d, zstar, band):
    """Per-band Taylor constants at the double point when beta_2 = 0."""
    zs = np.asarray(zstar, dtype=float)
    g = ds.grad_tau_z(d, zs, band)
    sq = np.sqrt(ds.band_value(d, zs, band))
    s_star = [1 - 2 * int(round(v)) for v in zs]
    return tuple(float(v) for v in np.abs(g) / sq), tuple(int(np.sign(g[j]) * s_star[j]) for j in range(3))


# ---------------------------------------------------------------- cutoffs


class CutoffFields:
    """All scalar cutoffs and gradients at a batch of points."""

    def __init__(self, prob: MourreProblem, cfg: CutoffConfig, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            self._init(prob, cfg, x)

    def _init(self, prob, cfg, x):
        self.prob = prob
        self.cfg = cfg
        self.x = x
        z = np.sin(x) ** 2
        self.z = z
        nz = np.linalg.norm(z, axis=1)
        self.chi0 = bump_phi1(nz / cfg.b0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dnz = np.where(nz[:, None] > 0, z * np.sin(2 * x) / nz[:, None], 0.0)
        self.dchi0 = bump_phi1_deriv(nz / cfg.b0)[:, None] * dnz / cfg.b0
        # balls around every threshold momentum point
        pts = prob.points
        dl = x[:, None, :] - pts[None, :, :]
        d0 = np.sqrt(np.sum(4.0 * np.sin(0.5 * dl) ** 2, axis=-1))
        self.d0 = d0
        self.balls = bump_phi1(d0 / cfg.b)
        with np.errstate(divide="ignore", invalid="ignore"):
            dd0 = np.where(d0[..., None] > 0, np.sin(dl) / d0[..., None], 0.0)
        self.dballs = bump_phi1_deriv(d0 / cfg.b)[..., None] * dd0 / cfg.b
        if prob.case == model.BETA_TWO_POSITIVE:
            self._tube()

    def _tube(self):
        d = self.prob.d
        b = self.cfg.b
        kv = ds.k0(d.beta, self.z)
        r = np.sqrt(kv)
        rho = r / self.cfg.s_k
        self.rho = rho
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (self.z @ ds.k0_matrix(d.beta)) / r[:, None]
        g = np.where(r[:, None] > 0, g, 0.0)
        drho = g * np.sin(2 * self.x) / self.cfg.s_k
        t2 = rho / b - 1.0
        t1 = rho / b - 2.0
        self.chi2 = 1.0 - smooth_step(t2)
        self.dchi2 = -smooth_step_deriv(t2)[:, None] * drho / b
        self.chi1 = smooth_step(t1)
        self.dchi1 = smooth_step_deriv(t1)[:, None] * drho / b
        self.chi3 = 1.0 - self.chi1 - self.chi2
        self.dchi3 = -self.dchi1 - self.dchi2

    def star(self, set_name):
        """(1 - chi0) prod_{x* in set} (1 - chi_x*) and its gradient."""
        idx = self.prob.sets[set_name]
        one_m = 1.0 - self.balls[:, idx]
        n, m = one_m.shape
        val = (1.0 - self.chi0) * np.prod(one_m, axis=1)
        # exclusive products for the gradient
        pre = np.ones((n, m + 1))
        pre[:, 1:] = np.cumprod(one_m, axis=1)
        suf = np.ones((n, m + 1))
        suf[:, :-1] = np.cumprod(one_m[:, ::-1], axis=1)[:, ::-1]
        excl = pre[:, :-1] * suf[:, 1:]
        gprod = -np.einsum("nm,nmk->nk", excl, self.dballs[:, idx, :])
        grad = -self.dchi0 * np.prod(one_m, axis=1)[:, None] + (1.0 - self.chi0)[:, None] * gprod
        return val, grad

    def tube(self, k):
        return {1: (self.chi1, self.dchi1), 2: (self.chi2, self.dchi2), 3: (self.chi3, self.dchi3)}[k]

    def term_cut(self, term):
        if term.cut[0] == "ball":
            k = term.cut[1]
            return self.balls[:, k], self.dballs[:, k, :]
        _, set_name, tube = term.cut
        v, g = self.star(set_name)
        if tube is None:
            return v, g
        tv, tg = self.tube(tube)
        return v * tv, g * tv[:, None] + v[:, None] * tg


# ---------------------------------------------------------------- vector fields


def _band_z(d, z, band):
    """tau, grad_z tau, hess_z tau for the band ('psi' means Psi0)."""
    if band == "psi":
        tau = ds.psi0(d.alpha, z)
        g = np.broadcast_to(np.asarray(d.alpha, dtype=float), z.shape)
        h = np.zeros(z.shape + (3,))
        return tau, g, h
    s = 1.0 if band == "+" else -1.0
    tau = ds.band_value(d, z, band)
    g = np.asarray(d.alpha) + s * ds.sqrt_k0_grad(d, z)
    h = ds.hess_tau_z(d, z, band)
    return tau, g, h


def w_field(d, x, band):
    """V = (tan x1, tan x2, 0) / G, div V, and G (y-space tangential derivative of F).

    Points on the planes cos x1 cos x2 = 0 get V = 0 and are flagged.
    """
    z = np.sin(x) ** 2
    tau, g, h = _band_z(d, z, band)
    sq = np.sqrt(tau)
    f = g / (2.0 * sq[:, None])
    fz = h / (2.0 * sq[:, None, None]) - np.einsum("ni,nj->nij", g, g) / (4.0 * (tau * sq)[:, None, None])
    G = 2.0 * (z[:, 0] * f[:, 0] + z[:, 1] * f[:, 1])
    Gz = 2.0 * (z[:, 0:1] * fz[:, 0, :] + z[:, 1:2] * fz[:, 1, :])
    Gz[:, 0] += 2.0 * f[:, 0]
    Gz[:, 1] += 2.0 * f[:, 1]
    c = np.cos(x)
    plane = np.abs(c[:, 0] * c[:, 1]) < PLANE_TOL
    cs = np.where(plane[:, None], 1.0, c)
    V = np.zeros_like(x)
    V[:, 0] = np.tan(x[:, 0]) / G
    V[:, 1] = np.tan(x[:, 1]) / G
    sec2 = 1.0 / cs[:, 0] ** 2 + 1.0 / cs[:, 1] ** 2
    div = sec2 / G - 2.0 * (z[:, 0] * Gz[:, 0] + z[:, 1] * Gz[:, 1]) / G**2
    V[plane] = 0.0
    div[plane] = 0.0
    return V, div, G, plane


def w_derivative(d, x, band="psi"):
    """Derivative of sqrt(tau) along the smooth field (sin x1 cos x2, cos x1 sin x2, 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        _, _, G, _ = w_field(d, x, band)
    c = np.cos(x)
    return c[:, 0] * c[:, 1] * G


def grad_field(d, x, band):
    """V = grad F / |grad F|^2 and div V for F = sqrt(tau^band)."""
    _, gf, hf = ds.band_derivs_x(d, x, band, order=2)
    n2 = np.sum(gf**2, axis=1)
    V = gf / n2[:, None]
    lap = np.trace(hf, axis1=1, axis2=2)
    quad = np.einsum("ni,nij,nj->n", gf, hf, gf)
    div = lap / n2 - 2.0 * quad / n2**2
    return V, div


def p1_data(term, x, xstar):
    """Gradient and Hessian diagonal of the local model p1."""
    dl = wrap(x - xstar)
    c = np.asarray(term.consts, dtype=float)
    s = np.asarray(term.s, dtype=float)
    grad = c * s * dl
    hdiag = np.broadcast_to(c * s, dl.shape).copy()
    if term.quartic:
        grad[:, 2] = c[2] * dl[:, 2] ** 3
        hdiag[:, 2] = 3.0 * c[2] * dl[:, 2] ** 2
    return grad, hdiag


def p1_field(d, x, term, xstar):
    """V = grad p1 / (grad p1 . grad F), div V, and the denominator."""
    _, gf, hf = ds.band_derivs_x(d, x, term.band, order=2)
    gp, hp = p1_data(term, x, xstar)
    den = np.sum(gp * gf, axis=1)
    gden = hp * gf + np.einsum("nij,nj->ni", hf, gp)
    V = gp / den[:, None]
    div = np.sum(hp, axis=1) / den - np.sum(gp * gden, axis=1) / den**2
    return V, div, den


def p1_denominator(d, x, term, xstar):
    _, gf = ds.band_derivs_x(d, x, term.band, order=1)
    gp, _ = p1_data(term, x, xstar)
    return np.sum(gp * gf, axis=1)


def xi_ratio(p, d, x, proj=None):
    """pi2 xi_w pi2 / F_w in the y-variables, F = sqrt(Psi0) (smooth, 0 on the curve)."""
    if proj is None:
        proj = spectral.pi2_fields(p, d, x, deriv=False)
    basis = model.sym_basis(p)
    y = np.sin(x)
    dws = y[:, 0, None, None] * basis[0] + y[:, 1, None, None] * basis[1]
    _, _, G, _ = w_field(d, x, "psi")
    pi2 = proj["pi2"]
    m = pi2 @ dws @ pi2
    return m / G[:, None, None] - pi2


# ---------------------------------------------------------------- assembly


class _Chunk:
    """Projector data at a batch of points, computed lazily per key."""

    def __init__(self, prob, x, deriv):
        self.prob = prob
        self.x = x
        self.deriv = deriv
        self.base = spectral.pi2_fields(prob.p, prob.d, x, deriv)
        self.split = {}

    def get(self, proj, mask):
        if proj == "pi2":
            out = {"P": self.base["pi2"][mask]}
            if self.deriv:
                out["dP"] = self.base["dpi2"][mask]
            return out
        f = spectral.projector_fields(self.prob.p, self.prob.d, self.x[mask], self.deriv)
        out = {"P": f[proj]}
        if self.deriv:
            out["dP"] = f["d" + proj]
        return out


def _h1_block(prob, term, x, proj):
    """P (d_V S) P for one term at its active points."""
    if term.kind == "w" and term.proj == "pi2":
        return xi_ratio(prob.p, prob.d, x, {"pi2": proj["P"]}) + proj["P"]
    return proj["P"]


def evaluate(prob, cfg, x, terms, want_R=True, want_H1=True, r_excl=None):
    """Sum of coefficient fields and commutators of the given terms at points x."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _evaluate(prob, cfg, x, terms, want_R, want_H1, r_excl)


def _evaluate(prob, cfg, x, terms, want_R, want_H1, r_excl):
    n = x.shape[0]
    out = {}
    if want_R:
        out["R"] = np.zeros((3, n, 6, 6))
        out["R0"] = np.zeros((n, 6, 6))
    if want_H1:
        out["H1"] = np.zeros((n, 6, 6))
    excluded = np.zeros(n, dtype=bool)
    cut = CutoffFields(prob, cfg, x)
    # zero fiber: every term vanishes where chi0 = 1
    live = cut.chi0 < 1.0
    chunk = None
    if np.any(live):
        chunk = _Chunk(prob, x[live], want_R)
    live_idx = np.flatnonzero(live)
    for term in terms:
        chi, dchi = cut.term_cut(term)
        act = chi[live] > 0.0
        if not np.any(act):
            continue
        idx = live_idx[act]
        xa = x[idx]
        ch = chi[idx]
        dch = dchi[idx]
        if term.kind == "grad":
            V, div = grad_field(prob.d, xa, term.band)
            bad = np.zeros(len(idx), dtype=bool)
        elif term.kind == "w":
            V, div, _, bad = w_field(prob.d, xa, term.band)
        else:
            xs = prob.points[term.cut[1]]
            V, div, _ = p1_field(prob.d, xa, term, xs)
            lim = r_excl if r_excl is not None else 0.0
            bad = metric_d0(xa, xs) <= max(lim, 1e-12)
            V[bad] = 0.0
            div[bad] = 0.0
        excluded[idx[bad]] = True
        proj = chunk.get(term.proj, act)
        P = proj["P"]
        c2 = ch**2
        if want_H1:
            out["H1"][idx] += 2.0 * c2[:, None, None] * _h1_block(prob, term, xa, proj)
        if want_R:
            for j in range(3):
                out["R"][j, idx] += 2.0 * (c2 * V[:, j])[:, None, None] * P
            vdchi = np.sum(V * dch, axis=1)
            vdp = np.einsum("nj,njab->nab", V, proj["dP"])
            r0 = (2.0 * ch * vdchi + c2 * div)[:, None, None] * P + 2.0 * c2[:, None, None] * (P @ vdp)
            out["R0"][idx] += r0
    out["excluded"] = excluded
    return out


# ---------------------------------------------------------------- operators


@dataclass
class FirstOrderOperator:
    """A = i (sum_j R_j d_j + R_0) on an N^3 torus grid, symmetric frame.

    ``R`` has shape (3, N^3, 6, 6) and ``R0`` shape (N^3, 6, 6), both real.
    Grid points in ``excluded`` carry a coefficient singularity and are set
    to zero.
    """

    grid_n: int
    R: np.ndarray
    R0: np.ndarray
    excluded: np.ndarray
    singular_points: list = field(default_factory=list)
    r_excl: float = 0.0
    weight: np.ndarray = None

    def __add__(self, other):
        if other.grid_n != self.grid_n:
            raise ValueError("grid mismatch")
        return FirstOrderOperator(
            self.grid_n,
            self.R + other.R,
            self.R0 + other.R0,
            self.excluded | other.excluded,
            self.singular_points + other.singular_points,
            max(self.r_excl, other.r_excl),
            self.weight,
        )

    @property
    def a(self):
        """Coefficients of d_j in the weighted frame (complex)."""
        r = np.sqrt(self.weight)
        return 1j * self.R * r[:, None] / r[None, :]

    @property
    def c(self):
        r = np.sqrt(self.weight)
        return 1j * self.R0 * r[:, None] / r[None, :]

    def is_zero(self):
        return not (np.any(self.R) or np.any(self.R0))

    def apply_l(self, u):
        """L u = sum_j R_j D_j u + R_0 u for u of shape (N, N, N, 6) (A u = i L u)."""
        n = self.grid_n
        du = fft_derivatives(u)
        flat = lambda a: a.reshape(n**3, 6)
        out = np.einsum("nab,nb->na", self.R0, flat(u))
        for j in range(3):
            out += np.einsum("nab,nb->na", self.R[j], flat(du[j]))
        return out.reshape(u.shape)


def fft_derivatives(u):
    """Spectral d/dx_j of a periodic field on [0, 2 pi)^3 (last axis = components)."""
    n = u.shape[0]
    k = np.fft.fftfreq(n, d=1.0 / n)
    k[n // 2] = 0.0 if n % 2 == 0 else k[n // 2]
    uh = np.fft.fftn(u, axes=(0, 1, 2))
    out = []
    for j in range(3):
        shape = [1, 1, 1, 1]
        shape[j] = n
        out.append(np.fft.ifftn(1j * k.reshape(shape) * uh, axes=(0, 1, 2)))
    if np.isrealobj(u):
        out = [o.real for o in out]
    return out


def _build(prob, cfg, grid_n, terms, r_excl):
    x = torus_grid(grid_n)
    n = x.shape[0]
    R = np.zeros((3, n, 6, 6))
    R0 = np.zeros((n, 6, 6))
    exc = np.zeros(n, dtype=bool)
    for s in range(0, n, CHUNK):
        e = min(n, s + CHUNK)
        out = evaluate(prob, cfg, x[s:e], terms, want_R=True, want_H1=False, r_excl=r_excl)
        R[:, s:e] = out["R"]
        R0[s:e] = out["R0"]
        exc[s:e] = out["excluded"]
    return R, R0, exc


def build_Aout(prob: MourreProblem, cfg: CutoffConfig, grid_n=64):
    lo, hi = prob.phi.support
    r_excl = cfg.b / 8.0
    if lo >= prob.tset.lambda_plus:
        n = grid_n**3
        return FirstOrderOperator(grid_n, np.zeros((3, n, 6, 6)), np.zeros((n, 6, 6)), np.zeros(n, bool), [], r_excl, prob.p.weights)
    R, R0, exc = _build(prob, cfg, grid_n, prob.out_terms(), r_excl)
    return FirstOrderOperator(grid_n, R, R0, exc, [], r_excl, prob.p.weights)


def build_Ain(prob: MourreProblem, cfg: CutoffConfig, grid_n=64):
    terms = prob.in_terms()
    r_excl = cfg.b / 8.0
    n = grid_n**3
    if not terms:
        return FirstOrderOperator(grid_n, np.zeros((3, n, 6, 6)), np.zeros((n, 6, 6)), np.zeros(n, bool), [], r_excl, prob.p.weights)
    R, R0, exc = _build(prob, cfg, grid_n, terms, r_excl)
    sing = sorted({int(t.cut[1]) for t in terms})
    pts = [prob.points[k] for k in sing]
    # p1 singularities: exclude the small balls
    x = torus_grid(grid_n)
    for q in pts:
        exc |= metric_d0(x, q) <= r_excl
    R[:, exc] = 0.0
    R0[exc] = 0.0
    return FirstOrderOperator(grid_n, R, R0, exc, pts, r_excl, prob.p.weights)


def build_p1(record: th.Threshold):
    """Coefficients and evaluator of the local model p1 at a threshold record."""
    if record.case in (th.C3_2, th.C3_3):
        raise UnsupportedCase("double-point thresholds with beta_2 > 0 use the tangent field")
    quartic = record.case == th.C2_2C
    c = np.asarray(record.C, dtype=float)
    s = np.asarray(record.s, dtype=float)

    def p1(x, xstar):
        dl = wrap(np.asarray(x, dtype=float) - np.asarray(xstar, dtype=float))
        q = 0.5 * c * s * dl**2
        if quartic:
            q[..., 2] = 0.25 * c[2] * dl[..., 2] ** 4
        return np.sum(q, axis=-1)

    return {"C": tuple(c), "s": tuple(int(v) for v in s), "quartic": quartic, "p1": p1}


def h1_closed_form(prob: MourreProblem, cfg: CutoffConfig, x, include_in=True):
    """[S, iA_phi] at points x (symmetric frame), chunked."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    terms = prob.out_terms() + (prob.in_terms() if include_in else [])
    H = np.zeros((x.shape[0], 6, 6))
    for s in range(0, x.shape[0], CHUNK):
        e = min(x.shape[0], s + CHUNK)
        H[s:e] = evaluate(prob, cfg, x[s:e], terms, want_R=False, want_H1=True)["H1"]
    return H


# ---------------------------------------------------------------- calibration


def _fib_dirs(m=64):
    i = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * i / m)
    th_ = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(th_) * np.sin(phi), np.sin(th_) * np.sin(phi), np.cos(phi)], axis=1)


def ball_samples(xstar, b, radii=(0.25, 0.5, 0.75, 1.0), m=64):
    """Points with d0(x, x*) = r b for several r (exact in the d0 metric)."""
    dirs = _fib_dirs(m)
    out = []
    for r in radii:
        arg = np.clip(r * b * dirs / 2.0, -1.0, 1.0)
        out.append(xstar + 2.0 * np.arcsin(arg))
    return np.concatenate(out)


def _band_active(prob, x):
    z = np.sin(x) ** 2
    bnd = ds.eval_bands(prob.d, z)
    lam = np.sqrt(np.stack([np.maximum(bnd.tau_minus, 0), bnd.tau_plus], axis=-1))
    return np.any(prob.phi.active(lam), axis=-1)


def _run_checks(prob, cfg, x):
    """Calibration checks on grid points x plus exact samples in every ball."""
    checks = {}
    b = cfg.b
    pts = prob.points
    cut = CutoffFields(prob, cfg, x)
    active = _band_active(prob, x)
    checks["chi0_off_window"] = bool(not np.any(cut.chi0[active] > 0.0))
    # disjoint balls and disjoint from the zero cutoff
    m = len(pts)
    dmin = np.inf
    for i in range(m):
        if i + 1 < m:
            dmin = min(dmin, float(np.min(metric_d0(pts[i + 1 :], pts[i]))))
    zmin = np.inf
    for q in pts:
        s = ball_samples(q, b)
        zmin = min(zmin, float(np.min(np.linalg.norm(np.sin(s) ** 2, axis=1))))
    disjoint = dmin > 2.0 * b and zmin > cfg.b0
    star, _ = cut.star("all")
    part = 1.0 - star - cut.chi0 - np.sum(cut.balls, axis=1)
    checks["partition_error"] = float(np.max(np.abs(part)))
    for name in ("plus", "minus"):
        if prob.case != model.ISOTROPIC:
            sv, _ = cut.star(name)
            err = 1.0 - sv - cut.chi0 - np.sum(cut.balls[:, prob.sets[name]], axis=1)
            checks["partition_error"] = max(checks["partition_error"], float(np.max(np.abs(err))))
    checks["partition"] = bool(disjoint and checks["partition_error"] < 1e-12)
    # excluded thresholds: their balls avoid the window
    ok = True
    for k, o in prob.pairs:
        if prob.in_scope[o]:
            continue
        s = np.vstack([ball_samples(pts[k], b), x[cut.balls[:, k] > 0]])
        if np.any(_band_active(prob, s)):
            ok = False
            break
    checks["excluded_balls_off_window"] = ok
    # p1 denominators
    ok = True
    for term in prob.in_terms():
        if term.kind != "p1":
            continue
        q = pts[term.cut[1]]
        s = ball_samples(q, b)
        if np.min(p1_denominator(prob.d, s, term, q)) <= 0.0:
            ok = False
            break
    checks["p1_denominator"] = ok
    if prob.case == model.BETA_TWO_POSITIVE:
        checks["support_disjointness"] = bool(not np.any((cut.chi1 > 0) & (cut.chi2 > 0)))
        checks["chi_sum_positive"] = bool(np.all(cut.chi1**2 + cut.chi2**2 + cut.chi3**2 > 0))
        # inclusions: X1* balls inside {chi1 = 1}, X2* balls inside {chi2 = 1}
        inc = True
        for k, o in prob.pairs:
            r = prob.records[o]
            s = np.vstack([ball_samples(pts[k], b), x[cut.balls[:, k] > 0]])
            c = CutoffFields(prob, cfg, s)
            if r.origin == th.T2:
                inc &= bool(np.all(c.chi2 == 1.0))
            else:
                inc &= bool(np.all(c.chi1 == 1.0))
        checks["inclusions"] = inc
        # the tangent field w vanishes on z1 = z2 = 0; keep the tube supports
        # (rho <= 3b) off that axis wherever 1 - chi0 > 0 (|z| >= b0/2)
        axis_rho = 0.5 * abs(prob.d.beta[2]) * (0.5 * cfg.b0) / cfg.s_k
        checks["tube_off_axis"] = bool(axis_rho > 3.0 * b)
        # xi bound on supp (1 - chi0) chi2 and on the double-point balls
        sel = (cut.chi2 > 0) & (cut.chi0 < 1)
        xs = [x[sel]]
        for k, o in prob.pairs:
            if prob.records[o].origin == th.T2:
                xs.append(ball_samples(pts[k], b))
        xs = np.vstack(xs)
        xs = xs[np.linalg.norm(np.sin(xs) ** 2, axis=1) > 0]
        xb = 0.0
        for s in range(0, len(xs), CHUNK):
            with np.errstate(divide="ignore", invalid="ignore"):
                r = xi_ratio(prob.p, prob.d, xs[s : s + CHUNK])
            nr = np.sum(np.abs(r), axis=2)
            xb = max(xb, float(np.max(np.where(np.isfinite(nr), nr, np.inf))))
        checks["xi_bound"] = xb
        checks["xi_ok"] = xb < 0.5
    else:
        checks["support_disjointness"] = True
        checks["inclusions"] = True
        checks["xi_ok"] = True
    return checks


def _passed(checks):
    keys = ["chi0_off_window", "partition", "excluded_balls_off_window", "p1_denominator",
            "support_disjointness", "inclusions", "xi_ok", "tube_off_axis"]
    return all(checks.get(k, True) for k in keys)


def calibrate(prob: MourreProblem, grid_n=64) -> CutoffConfig:
    """Pick (b0, b) so that all cutoff conditions hold on the grid and in the balls."""
    x = torus_grid(grid_n)
    active = _band_active(prob, x)
    if not np.any(active):
        raise EmptySupport("energy window misses the spectrum on the grid")
    zn = np.linalg.norm(np.sin(x[active]) ** 2, axis=1)
    b0 = 0.5 * float(np.min(zn))
    b = b0 / 4.0
    s_k = prob.tube_scale()
    last = None
    for k in range(MAX_HALVINGS + 1):
        cfg = CutoffConfig(b0, b, s_k, k)
        checks = _run_checks(prob, cfg, x)
        cfg.checks = checks
        if _passed(checks):
            return cfg
        last = checks
        b *= 0.5
    failed = [k for k, v in last.items() if v is False]
    raise CalibrationFailed(f"cutoff checks still failing after {MAX_HALVINGS} halvings: {failed}")


# ---------------------------------------------------------------- gap


def _min_eig_2x2(m):
    a = m[:, 0, 0]
    d = m[:, 1, 1]
    c = m[:, 0, 1]
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + c**2)


def mourre_gap(prob: MourreProblem, cfg: CutoffConfig, grid_n=64, include_balls=True, return_field=False):
    """Infimum over the grid of the best constant in phi H1 phi >= delta phi^2.

    At each grid point the commutator is compressed onto the eigenvectors of
    S whose eigenvalue lies in the window support; delta(x) is its smallest
    eigenvalue (the generalized problem with weight phi^2).
    """
    x = torus_grid(grid_n)
    if include_balls:
        # the balls can be thinner than the grid spacing; sample them exactly
        x = np.vstack([x] + [ball_samples(q, cfg.b) for q in prob.points])
    active = _band_active(prob, x)
    if not np.any(active):
        raise EmptySupport("energy window misses the spectrum on the grid")
    xa = x[active]
    basis = model.sym_basis(prob.p)
    deltas = np.empty(len(xa))
    for s in range(0, len(xa), CHUNK):
        e = min(len(xa), s + CHUNK)
        xc = xa[s:e]
        H = h1_closed_form(prob, cfg, xc)
        S = np.einsum("nj,jab->nab", np.sin(xc), basis)
        lam, vec = np.linalg.eigh(S)
        # positive eigenvalues sit in columns 4, 5
        e2 = vec[:, :, 4:6]
        m = np.transpose(e2, (0, 2, 1)) @ H @ e2
        on = prob.phi.active(lam[:, 4:6])
        both = on[:, 0] & on[:, 1]
        dl = np.where(on[:, 0], m[:, 0, 0], m[:, 1, 1])
        dl[both] = _min_eig_2x2(m[both])
        deltas[s:e] = dl
    k = int(np.argmin(deltas))
    if return_field:
        return float(deltas[k]), xa[k], (xa, deltas)
    return float(deltas[k]), xa[k]


# ---------------------------------------------------------------- oracle


def test_sections(grid_n, modes, count=20, seed=0, vanish_planes=False):
    """Random trigonometric 6-vector sections on the grid, shape (count, N, N, N, 6).

    With ``vanish_planes`` each section carries the factor
    sin(2 x1)^3 sin(2 x2)^3, so it vanishes to third order on the planes
    x1, x2 in {0, pi/2, pi, 3 pi/2}.
    """
    rng = np.random.default_rng(seed)
    t = 2.0 * np.pi * np.arange(grid_n) / grid_n
    ks = np.arange(-modes, modes + 1)
    e = np.exp(1j * np.outer(ks, t))  # (K, N)
    out = np.empty((count, grid_n, grid_n, grid_n, 6), dtype=complex)
    for c in range(count):
        coef = rng.standard_normal((len(ks),) * 3 + (6,)) + 1j * rng.standard_normal((len(ks),) * 3 + (6,))
        coef /= len(ks) ** 1.5
        u = np.einsum("abcv,ai,bj,ck->ijkv", coef, e, e, e, optimize=True)
        out[c] = u
    if vanish_planes:
        f = np.sin(2 * t) ** 3
        out *= f[None, :, None, None, None] * f[None, None, :, None, None]
    return out


def commutator_oracle(prob: MourreProblem, A: FirstOrderOperator, H1, modes=5, count=20, seed=0, vanish_planes=None):
    """max over test sections of ||(L S - S L) u - H1 u|| / ||u|| with A = i L.

    Norms are grid L2 norms over points outside the excluded set.
    """
    n = A.grid_n
    if n < 4 * modes:
        raise ValueError("grid_n must be at least 4 * modes")
    if vanish_planes is None:
        vanish_planes = bool(np.any(A.excluded))
    x = torus_grid(n)
    S = np.einsum("nj,jab->nab", np.sin(x), model.sym_basis(prob.p))
    keep = ~A.excluded
    us = test_sections(n, modes, count, seed, vanish_planes)
    worst = 0.0
    for u in us:
        flat = u.reshape(n**3, 6)
        su = np.einsum("nab,nb->na", S, flat).reshape(u.shape)
        lsu = A.apply_l(su).reshape(n**3, 6)
        lu = A.apply_l(u).reshape(n**3, 6)
        slu = np.einsum("nab,nb->na", S, lu)
        h1u = np.einsum("nab,nb->na", H1, flat)
        res = (lsu - slu - h1u)[keep]
        nu = np.sqrt(np.sum(np.abs(flat[keep]) ** 2))
        if nu == 0.0:
            continue
        r = float(np.sqrt(np.sum(np.abs(res) ** 2)) / nu)
        worst = max(worst, r if np.isfinite(r) else np.inf)
    return worst


def symmetry_defect(prob, cfg, x, terms, h=1e-5):
    """max |R0 + R0^T - sum_j d_j R_j| at points x (finite differences of R_j)."""
    base = evaluate(prob, cfg, x, terms, want_H1=False)
    div = np.zeros_like(base["R0"])
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        rp = evaluate(prob, cfg, x + e, terms, want_H1=False)["R"][j]
        rm = evaluate(prob, cfg, x - e, terms, want_H1=False)["R"][j]
        div += (rp - rm) / (2 * h)
    r0 = base["R0"]
    return float(np.max(np.abs(r0 + np.transpose(r0, (0, 2, 1)) - div)))
