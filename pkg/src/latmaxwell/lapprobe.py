"""Numerical probes of the resolvent near the real axis.

Pairings are taken in the weighted product of the fiber, which becomes the
plain product after ``w = Dhat^{-1/2} u``:

    F(z) = mean_x < w(x), (S(x) - z)^{-1} w(x) >

with the normalized torus measure.  Two quadratures are available.
``trapezoid`` sums the spectral decomposition on an N^3 grid and compares
with the doubled grid.  ``split`` separates energies near Re z: the smooth
far part is summed on the grid, and the near part is written through the
band density of u (computed by a coarea root solve along grid lines) and
integrated against 1/(t - z) exactly, which stays accurate as Im z -> 0.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as cheb

from . import dispersion as ds
from . import model
from . import thresholds as th
from .errors import NotConverged
from .mourre import smooth_step, torus_grid

CHUNK = 8192
CHEB_NODES = 24
GL_NODES = 48


# ---------------------------------------------------------------- sections


@dataclass
class TrigSection:
    """u(x) = f(x) sum_n c_n e^{i n.x}, a 6-vector field in the weighted frame.

    ``coef`` has shape (2m+1, 2m+1, 2m+1, 6) for modes -m..m.  With
    ``vanish_planes`` the factor f = sin(2 x1)^3 sin(2 x2)^3 is applied.
    """

    coef: np.ndarray
    vanish_planes: bool = False

    @property
    def modes(self):
        return (self.coef.shape[0] - 1) // 2

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = self.modes
        ks = np.arange(-m, m + 1)
        e = [np.exp(1j * np.outer(x[:, j], ks)) for j in range(3)]
        u = np.einsum("na,nb,nc,abcv->nv", e[0], e[1], e[2], self.coef, optimize=True)
        if self.vanish_planes:
            u *= (np.sin(2 * x[:, 0]) ** 3 * np.sin(2 * x[:, 1]) ** 3)[:, None]
        return u

    @classmethod
    def random(cls, modes=2, seed=0, vanish_planes=False):
        rng = np.random.default_rng(seed)
        k = 2 * modes + 1
        c = rng.standard_normal((k, k, k, 6)) + 1j * rng.standard_normal((k, k, k, 6))
        return cls(c / k**1.5, vanish_planes)


class KernelSection:
    """(sin x1, sin x2, sin x3, 0, 0, 0): annihilated by the fiber at every x."""

    vanish_planes = False

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.zeros((x.shape[0], 6), dtype=complex)
        u[:, :3] = np.sin(x)
        return u


def _to_sym(p, u):
    return u / np.sqrt(p.weights)


def weighted_norm2(p, u_fn, grid_n=32):
    x = torus_grid(grid_n)
    w = _to_sym(p, u_fn(x))
    return float(np.mean(np.sum(np.abs(w) ** 2, axis=1)))


# ---------------------------------------------------------------- grid sums


def spectral_weights(p, u_fn, grid_n):
    """Eigenvalues and |<v_k, w>|^2 at every point of the N^3 grid."""
    x = torus_grid(grid_n)
    basis = model.sym_basis(p)
    lam = np.empty((len(x), 6))
    c2 = np.empty((len(x), 6))
    for s in range(0, len(x), CHUNK):
        xc = x[s : s + CHUNK]
        S = np.einsum("nj,jab->nab", np.sin(xc), basis)
        lv, vec = np.linalg.eigh(S)
        w = _to_sym(p, u_fn(xc))
        lam[s : s + CHUNK] = lv
        c2[s : s + CHUNK] = np.abs(np.einsum("nab,na->nb", vec, w)) ** 2
    return lam, c2


def _spectral_sum(p, u_fn, f, grid_n):
    """mean_x sum_k f(lam_k) |<v_k, w>|^2 on the N^3 grid."""
    lam, c2 = spectral_weights(p, u_fn, grid_n)
    return np.sum(f(lam) * c2) / len(lam)


def pairing_trapezoid(p, u_fn, z, grid_n=32, grid_cap=128, rtol=1e-6):
    """Grid quadrature with doubling until two grids agree to rtol."""
    f = lambda lam: 1.0 / (lam - z)
    prev = _spectral_sum(p, u_fn, f, grid_n)
    n = grid_n
    while 2 * n <= grid_cap:
        n *= 2
        cur = _spectral_sum(p, u_fn, f, n)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise NotConverged(f"trapezoid pairing not converged at grid {n} (grid cap {grid_cap})")


# ---------------------------------------------------------------- coarea


def _line_roots(d, zperp, j, t):
    """Roots s = z_j in [0, 1] of tau(z) = t^2 along a line, with band labels.

    ``zperp`` (n, 3) holds the fixed components (entry j ignored).
    Returns (s, band_sign, line_index).
    """
    T = t * t
    z0 = zperp.copy()
    z0[:, j] = 0.0
    q = ds.k0_matrix(d.beta)
    al = np.asarray(d.alpha, dtype=float)
    a0 = ds.psi0(al, z0)
    aj = al[j]
    # Phi0(s) = Psi0(s)^2 - z^T Q z with z_j = s (exact quadratic in s)
    f0 = a0**2 - np.einsum("ni,ij,nj->n", z0, q, z0)
    c1 = 2.0 * a0 * aj - 2.0 * (z0 @ q[:, j])
    c2 = np.full_like(f0, aj**2 - q[j, j])
    # T^2 - 2 T Psi0(s) + Phi0(s) = 0
    A = c2
    B = c1 - 2.0 * T * aj
    C = f0 - 2.0 * T * a0 + T * T
    out_s, out_i = [], []
    lin = np.abs(A) <= 1e-14 * (np.abs(B) + np.abs(C) + 1.0)
    idx = np.arange(len(A))
    if np.any(lin):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -C[lin] / B[lin]
        out_s.append(s)
        out_i.append(idx[lin])
    q = ~lin
    if np.any(q):
        disc = B[q] ** 2 - 4.0 * A[q] * C[q]
        # a double root (touching bands) may come out slightly negative
        ok = disc >= -1e-12 * (B[q] ** 2 + np.abs(4.0 * A[q] * C[q]))
        sq = np.sqrt(np.maximum(disc, 0.0))
        # stable quadratic formula: roots qq / A and C / qq
        qq = -0.5 * (B[q] + np.copysign(sq, B[q]))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = qq / A[q]
            r2 = C[q] / qq
        for r in (r1, r2):
            out_s.append(np.where(ok, r, np.nan))
            out_i.append(idx[q])
    s = np.concatenate(out_s)
    li = np.concatenate(out_i)
    keep = np.isfinite(s) & (s >= 0.0) & (s <= 1.0)
    s, li = s[keep], li[keep]
    zz = zperp[li].copy()
    zz[:, j] = s
    band = np.where(T >= ds.psi0(d.alpha, zz), 1, -1)
    return s, band, li


def band_density(p, u_fn, t, grid_n=48, power=4):
    """Density at energy t > 0 of the spectral measure of u over the positive bands.

    Coarea along coordinate lines with the partition of unity
    |d_j lam|^power / sum_i |d_i lam|^power.  ``u_fn`` may be None for the
    plain density of states (unit weight per band).
    """
    d = _frame_derived(p)
    basis = model.sym_basis(p)
    g1 = 2.0 * np.pi * np.arange(grid_n) / grid_n
    a, b = np.meshgrid(g1, g1, indexing="ij")
    total = 0.0
    for j in range(3):
        others = [k for k in range(3) if k != j]
        xp = np.zeros((grid_n * grid_n, 3))
        xp[:, others[0]] = a.ravel()
        xp[:, others[1]] = b.ravel()
        zp = np.sin(xp) ** 2
        s, band, li = _line_roots(d, zp, j, t)
        if len(s) == 0:
            continue
        r = np.arcsin(np.sqrt(s))
        pts = []
        bands = []
        for xj in (r, -r, np.pi - r, np.pi + r):
            xx = xp[li].copy()
            xx[:, j] = xj
            pts.append(xx)
            bands.append(band)
        xx = np.concatenate(pts)
        bb = np.concatenate(bands)
        # the four preimages coincide in pairs when s is 0 or 1
        mult = np.ones(len(xx))
        edge = np.concatenate([(s <= 0.0) | (s >= 1.0)] * 4)
        mult[edge] = 0.5
        grad = np.empty_like(xx)
        for sign in (1, -1):
            m = bb == sign
            if np.any(m):
                grad[m] = ds.band_derivs_x(d, xx[m], "+" if sign > 0 else "-")[1]
        gp = np.abs(grad) ** power
        den = np.sum(gp, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            wgt = np.where(den > 0, gp[:, j] / den / np.abs(grad[:, j]), 0.0)
        wgt = np.where(np.isfinite(wgt), wgt, 0.0)
        if u_fn is None:
            g = np.ones(len(xx))
        else:
            g = np.empty(len(xx))
            for c in range(0, len(xx), CHUNK):
                xc = xx[c : c + CHUNK]
                S = np.einsum("nj,jab->nab", np.sin(xc), basis)
                ev, vec = np.linalg.eigh(S)
                w = _to_sym(p, u_fn(xc))
                c2 = np.abs(np.einsum("nab,na->nb", vec[:, :, 4:6], w)) ** 2
                gg = np.where(bb[c : c + CHUNK] > 0, c2[:, 1], c2[:, 0])
                # where the two positive bands touch, split their weight evenly
                touch = ev[:, 5] - ev[:, 4] <= 1e-8 * ev[:, 5]
                gg[touch] = 0.5 * (c2[touch, 0] + c2[touch, 1])
                g[c : c + CHUNK] = gg
        total += np.sum(mult * wgt * g)
    # mean over the perpendicular grid, 1/(2 pi) for the line integral
    return total / (grid_n * grid_n) / (2.0 * np.pi)


def _frame_derived(p):
    """alpha/beta/gamma of p itself with the case tag (no relabeling)."""
    a, b, g = model.raw_abg(p)
    d = model.derive_params(p)
    return model.DerivedParams(a, b, g, d.nu, d.case, model.SymmetryOp(), p)


# ---------------------------------------------------------------- split pairing


def _window(lam, delta):
    """chi(t): 1 on |t - lam| <= delta/2, 0 beyond delta."""

    def chi(t):
        return 1.0 - smooth_step((np.abs(t - lam) - 0.5 * delta) / (0.5 * delta))

    return chi


def _gl(a, b, n=GL_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


@dataclass
class NearData:
    """Chebyshev interpolant of the band density of u on [lam - delta, lam + delta]."""

    lam: float
    delta: float
    coef: np.ndarray

    def density(self, t):
        s = (np.asarray(t) - self.lam) / self.delta
        return cheb.chebval(s, self.coef)

    def integral(self, z):
        """int chi(t) rho(t) / (t - z) dt over the window."""
        lam, dl = self.lam, self.delta
        chi = _window(lam, dl)
        pz = self.density(z)
        acc = 0.0 + 0.0j
        pieces = [(lam - dl, lam - 0.5 * dl), (lam - 0.5 * dl, lam + 0.5 * dl), (lam + 0.5 * dl, lam + dl)]
        for a, b in pieces:
            t, w = _gl(a, b)
            acc += np.sum(w * chi(t) * (self.density(t) - pz) / (t - z))
            if a == lam - 0.5 * dl:
                acc += pz * np.log((b - z) / (a - z))
            else:
                acc += pz * np.sum(w * chi(t) / (t - z))
        return acc


def near_data(p, u_fn, lam, delta, grid_n=48, nodes=CHEB_NODES):
    k = np.arange(nodes)
    s = np.cos(np.pi * (k + 0.5) / nodes)
    vals = np.array([band_density(p, u_fn, lam + delta * si, grid_n) for si in s])
    coef = cheb.chebfit(s, vals, nodes - 1)
    return NearData(lam, delta, coef)


def default_window(tset, lam, cap=0.12):
    """Half-width of the near window: stays clear of thresholds and of 0."""
    marks = [0.0] + list(tset.values) + [tset.lambda_plus]
    dist = min(abs(lam - v) for v in marks)
    return min(cap, 0.45 * dist)


class SplitPairing:
    """F(lam + i eps) for several eps at one lam, reusing the near-window density."""

    def __init__(self, p, u_fn, lam, delta=None, grid_n=48, far_grid=48):
        self.p = p
        self.u_fn = u_fn
        self.lam = float(lam)
        tset = th.enumerate_thresholds(p)
        self.delta = default_window(tset, lam) if delta is None else float(delta)
        self.far_grid = far_grid
        self.near = near_data(p, u_fn, self.lam, self.delta, grid_n) if self.delta > 0 else None
        self._lam, self._c2 = spectral_weights(p, u_fn, far_grid)
        if self.near is not None:
            self._c2 = self._c2 * (1.0 - _window(self.lam, self.delta)(self._lam))

    def __call__(self, eps):
        z = self.lam + 1j * eps
        far = np.sum(self._c2 / (self._lam - z)) / len(self._lam)
        if self.near is None:
            return far
        return far + self.near.integral(z)


def resolvent_pairing(p, u_fn, lam, eps, method="split", grid_n=48, grid_cap=128):
    """(u, (H - lam - i eps)^{-1} u) in the weighted product."""
    if method == "trapezoid":
        return pairing_trapezoid(p, u_fn, lam + 1j * eps, grid_n, grid_cap)
    return SplitPairing(p, u_fn, lam, grid_n=grid_n, far_grid=grid_n)(eps)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    lam: float
    eps: np.ndarray
    values: np.ndarray
    graph_norm: float
    C: float
    holder_exponent: float

    def to_dict(self):
        return {
            "lambda": self.lam,
            "eps": self.eps.tolist(),
            "re": self.values.real.tolist(),
            "im": self.values.imag.tolist(),
            "graph_norm": self.graph_norm,
            "C": self.C,
            "holder_exponent": self.holder_exponent,
        }


def holder_fit(eps, values):
    """Slope of log |F(eps_k) - F(eps_{k+1})| against log eps_k."""
    eps = np.asarray(eps, dtype=float)
    diffs = np.abs(np.diff(np.asarray(values)))
    x = np.log(eps[:-1])
    y = np.log(np.maximum(diffs, 1e-300))
    return float(np.polyfit(x, y, 1)[0])


def graph_norm(p, u_fn, A, grid_n=None):
    """||u|| + ||A u|| with A a FirstOrderOperator (symmetric frame)."""
    n = A.grid_n if grid_n is None else grid_n
    x = torus_grid(n)
    w = _to_sym(p, u_fn(x))
    nu = np.sqrt(np.mean(np.sum(np.abs(w) ** 2, axis=1)))
    lw = A.apply_l(w.reshape(n, n, n, 6)).reshape(n**3, 6)
    keep = ~A.excluded
    na = np.sqrt(np.sum(np.abs(lw[keep]) ** 2) / n**3)
    return float(nu + na)


def eps_sweep(p, u_fn, lam, eps_list=(1e-1, 1e-2, 1e-3, 1e-4), A=None, grid_n=48):
    sp = SplitPairing(p, u_fn, lam, grid_n=grid_n, far_grid=grid_n)
    vals = np.array([sp(e) for e in eps_list])
    gn = graph_norm(p, u_fn, A) if A is not None else np.sqrt(weighted_norm2(p, u_fn))
    c = float(np.max(np.abs(vals)) / gn**2)
    return SweepResult(float(lam), np.asarray(eps_list, dtype=float), vals, gn, c, holder_fit(eps_list, vals))


def divergence_slope(p, u_fn, lam, eps_list=(1e-1, 1e-2, 1e-3, 1e-4), grid_n=32):
    """log-log slope of |F(lam + i eps)| against eps (plain grid quadrature)."""
    lv, c2 = spectral_weights(p, u_fn, grid_n)
    vals = [abs(np.sum(c2 / (lv - lam - 1j * e)) / len(lv)) for e in eps_list]
    return float(np.polyfit(np.log(eps_list), np.log(vals), 1)[0]), np.array(vals)


def scan_energies(p, count=20, lo=0.2, margin=0.02):
    """``count`` energies in (lo, lambda_plus) at least ``margin`` from every threshold."""
    tset = th.enumerate_thresholds(p)
    marks = list(tset.values) + [tset.lambda_plus]
    grid = np.linspace(lo, tset.lambda_plus, 40 * count)[1:-1]
    ok = [t for t in grid if min(abs(t - v) for v in marks) >= margin]
    pick = np.linspace(0, len(ok) - 1, count).round().astype(int)
    return [float(ok[i]) for i in pick]


def no_eigenvalue_scan(p, u_fn, lambdas, eps=1e-5, grid_n=48):
    """eps Im F(lam + i eps) / ||u||^2 for each lam (tends to ||E({lam}) u||^2 / ||u||^2)."""
    n2 = weighted_norm2(p, u_fn)
    out = []
    for lam in lambdas:
        f = SplitPairing(p, u_fn, lam, grid_n=grid_n, far_grid=grid_n)(eps)
        out.append(float(eps * f.imag / n2))
    return np.array(out)


# ---------------------------------------------------------------- spectrum


def band_table(p, grid_n=101, endpoint=True):
    """tau^-, tau^+ on a tensor grid (kernel-backed)."""
    from . import kernels

    d = _frame_derived(p)
    if endpoint:
        t = np.linspace(-np.pi, np.pi, grid_n)
    else:
        t = 2.0 * np.pi * np.arange(grid_n) / grid_n
    zz = np.sin(t) ** 2
    return kernels.band_table(d.alpha, d.beta, zz, zz, zz)


def spectrum_extent(p, grid_n=101):
    """(min, max) of the positive bands on a grid including both ends of [-pi, pi]."""
    tm, tp = band_table(p, grid_n)
    return float(np.sqrt(max(tm.min(), 0.0))), float(np.sqrt(tp.max()))


def dos(p, lambdas, eps=0.01, grid_n=128, bins_per_eps=20):
    """Lorentzian-broadened density of states, normalized to 6 per fiber."""
    tm, tp = band_table(p, grid_n, endpoint=False)
    vals = np.concatenate([np.sqrt(np.maximum(tm.ravel(), 0.0)), np.sqrt(tp.ravel())])
    top = float(vals.max())
    width = eps / bins_per_eps
    nb = int(np.ceil((top + width) / width))
    hist, edges = np.histogram(vals, bins=nb, range=(0.0, nb * width))
    centers = 0.5 * (edges[1:] + edges[:-1])
    w = hist / float(tm.size)
    lam = np.asarray(lambdas, dtype=float)

    def lor(c):
        return eps / np.pi / ((lam[:, None] - c[None, :]) ** 2 + eps**2)

    # positive bands, their mirror images, and the two zero bands
    out = lor(centers) @ w + lor(-centers) @ w + 2.0 * (eps / np.pi) / (lam**2 + eps**2)
    return out


def dos_edge(p, eps=0.01, grid_n=128, lam_plus=None):
    """Largest lam where D(lam) >= half the maximum of D over lam_plus +- 10 eps."""
    if lam_plus is None:
        lam_plus = th.enumerate_thresholds(p).lambda_plus
    lam = np.linspace(lam_plus - 10 * eps, lam_plus + 10 * eps, 801)
    dv = dos(p, lam, eps, grid_n)
    half = 0.5 * dv.max()
    return float(lam[np.flatnonzero(dv >= half).max()])
