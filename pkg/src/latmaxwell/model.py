"""Material constants, derived parameter algebra and the 6x6 fiber matrices.

The medium is described by two positive diagonals ``eps`` and ``mu``.  At a
torus point ``x`` the fiber matrix is ``H^D(x) = Dhat H0(x)`` with
``Dhat = diag(eps, mu)`` and ``H0 = [[0, M(y)], [-M(y), 0]]``, ``y = sin x``,
``M(y) v = y x v``.  ``H^D`` is self-adjoint for the weighted product
``<Dhat^{-1} u, v>``; most numerics use the congruent real symmetric matrix
``S = Dhat^{1/2} H0 Dhat^{1/2}``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidParams, NormalizationError

MIN_ENTRY = 1e-12

ISOTROPIC = "Isotropic"
BETA_TWO_ZERO = "BetaTwoZero"
BETA_TWO_POSITIVE = "BetaTwoPositive"


@dataclass(frozen=True)
class MaterialParams:
    """Diagonal permittivity ``eps`` and permeability ``mu`` (three entries each)."""

    eps: tuple
    mu: tuple

    def __post_init__(self):
        eps = tuple(float(v) for v in self.eps)
        mu = tuple(float(v) for v in self.mu)
        if len(eps) != 3 or len(mu) != 3:
            raise InvalidParams("eps and mu need exactly three entries each")
        for name, vals in (("permittivity", eps), ("permeability", mu)):
            for v in vals:
                if not np.isfinite(v):
                    raise InvalidParams(f"non-finite {name}")
                if v <= 0.0:
                    raise InvalidParams(f"nonpositive {name}")
                if v < MIN_ENTRY:
                    raise InvalidParams(f"{name} below {MIN_ENTRY:g}")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "mu", mu)

    @property
    def weights(self):
        """Diagonal of Dhat as a length-6 array."""
        return np.array(self.eps + self.mu)

    def to_dict(self):
        return {"eps": list(self.eps), "mu": list(self.mu)}


@dataclass(frozen=True)
class SymmetryOp:
    """Axis relabeling plus optional eps/mu exchange.

    ``perm[i]`` is the old axis that becomes new axis ``i``.
    """

    perm: tuple = (0, 1, 2)
    swap_eps_mu: bool = False

    @property
    def parity(self):
        p = self.perm
        inversions = sum(1 for i in range(3) for j in range(i + 1, 3) if p[i] > p[j])
        return -1 if inversions % 2 else 1

    def apply(self, p: MaterialParams) -> MaterialParams:
        eps = tuple(p.eps[k] for k in self.perm)
        mu = tuple(p.mu[k] for k in self.perm)
        if self.swap_eps_mu:
            eps, mu = mu, eps
        return MaterialParams(eps, mu)

    def apply_beta(self, beta):
        """Signed permutation induced on beta = eps x mu."""
        beta = np.asarray(beta, dtype=float)
        out = self.parity * beta[list(self.perm)]
        return -out if self.swap_eps_mu else out

    def apply_z(self, z):
        """Relabel the last axis of z the same way as the material axes."""
        z = np.asarray(z, dtype=float)
        return z[..., list(self.perm)]

    def describe(self):
        p = self.perm
        if p == (0, 1, 2):
            text = "identity"
        elif self.parity < 0:
            moved = [i + 1 for i in range(3) if p[i] != i]
            text = f"swap axes {moved[0]},{moved[1]}"
        else:
            new = "".join(str(k + 1) for k in p)
            text = f"cycle (1,2,3)->({new[0]},{new[1]},{new[2]})"
        if self.swap_eps_mu:
            text += " + exchange eps/mu"
        return text

    def to_dict(self):
        return {
            "axis_permutation": [k + 1 for k in self.perm],
            "swap_eps_mu": self.swap_eps_mu,
            "description": self.describe(),
        }


# identity, three transpositions, two cycles; each without then with the swap
_PERMS = [(0, 1, 2), (1, 0, 2), (2, 1, 0), (0, 2, 1), (1, 2, 0), (2, 0, 1)]
SEARCH_ORDER = [SymmetryOp(q, s) for q in _PERMS for s in (False, True)]


@dataclass(frozen=True)
class DerivedParams:
    """alpha, beta, gamma of the input frame plus the normal-form data.

    ``nu`` and ``case`` refer to the normalized medium ``normalized``
    obtained from the input by ``op``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    nu: Optional[float]
    case: str
    op: SymmetryOp = field(default_factory=SymmetryOp)
    normalized: Optional[MaterialParams] = None

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "nu": self.nu,
            "case": self.case,
            "normalization": self.op.to_dict(),
            "normalized": None if self.normalized is None else self.normalized.to_dict(),
        }


def raw_abg(p: MaterialParams):
    """alpha, beta, gamma straight from the definitions (no normalization)."""
    e = np.array(p.eps)
    m = np.array(p.mu)
    i1 = [1, 2, 0]
    i2 = [2, 0, 1]
    alpha = 0.5 * (e[i1] * m[i2] + e[i2] * m[i1])
    beta = e[i1] * m[i2] - e[i2] * m[i1]
    gamma = e[i1] * e[i2] * m[i1] * m[i2]
    return alpha, beta, gamma


def satisfies_A0(beta) -> bool:
    b1, b2, b3 = beta
    return (b1 >= b2 > 0 > b3) or (b1 > b2 == 0 > b3)


def normalize_A0(p: MaterialParams):
    """Search the 12 symmetry ops for one that brings beta to the normal form.

    Returns ``(params', op)``.  An isotropic medium (beta = 0) comes back
    unchanged with the identity op; ``derive_params`` tags it.
    """
    _, beta, _ = raw_abg(p)
    if not np.any(beta):
        return p, SymmetryOp()
    for op in SEARCH_ORDER:
        q = op.apply(p)
        if satisfies_A0(raw_abg(q)[1]):
            return q, op
    raise NormalizationError("no normalization found")


def nu_from_normalized(alpha, beta, gamma):
    """Critical height of tau^- along z = (1, 1, t) for a normalized medium."""
    b1, b2, b3 = beta
    sg3 = np.sqrt(gamma[2])
    return float((2.0 * alpha[2] * np.sqrt(b1 * b2) - sg3 * (b1 + b2)) / (abs(b3) * sg3))


def derive_params(p: MaterialParams) -> DerivedParams:
    alpha, beta, gamma = raw_abg(p)
    if not np.any(beta):
        return DerivedParams(alpha, beta, gamma, None, ISOTROPIC, SymmetryOp(), p)
    q, op = normalize_A0(p)
    a2, b2, g2 = raw_abg(q)
    case = BETA_TWO_ZERO if b2[1] == 0 else BETA_TWO_POSITIVE
    nu = nu_from_normalized(a2, b2, g2)
    return DerivedParams(alpha, beta, gamma, nu, case, op, q)


def normalized_derived(p: MaterialParams) -> DerivedParams:
    """Derived parameters of the normalized medium (frame in which the formulas hold)."""
    d = derive_params(p)
    if d.case == ISOTROPIC:
        return d
    a, b, g = raw_abg(d.normalized)
    return DerivedParams(a, b, g, d.nu, d.case, SymmetryOp(), d.normalized)


def identity_residuals(alpha, beta, gamma, eps, mu):
    """Relative residuals of the algebraic identities linking alpha, beta, gamma.

    Returns a dict of arrays (one entry per identity family, three
    circular permutations each).
    """
    a = np.asarray(alpha)
    b = np.asarray(beta)
    g = np.asarray(gamma)
    e = np.asarray(eps)
    m = np.asarray(mu)
    i1 = [1, 2, 0]
    i2 = [2, 0, 1]
    scale = np.abs(a).max() ** 2 + 1e-300
    r1 = (a**2 - g - 0.25 * b**2) / scale
    r2 = (e * m * a - a[i1] * a[i2] - 0.25 * b[i1] * b[i2]) / scale
    r3 = (a[i2] * b[i1] + a[i1] * b[i2] + e * m * b) / scale
    r4 = np.array([np.dot(b, e) / (np.abs(b).max() * np.abs(e).max() + 1e-300)])
    return {"alpha_gamma": r1, "alpha_beta": r2, "beta_i": r3, "beta_dot_eps": r4}


def cross_matrix(y):
    """M(y) with M(y) v = y x v; works on stacked y of shape (..., 3)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape[:-1] + (3, 3))
    out[..., 0, 1] = -y[..., 2]
    out[..., 0, 2] = y[..., 1]
    out[..., 1, 0] = y[..., 2]
    out[..., 1, 2] = -y[..., 0]
    out[..., 2, 0] = -y[..., 1]
    out[..., 2, 1] = y[..., 0]
    return out


def h0_from_y(y):
    m = cross_matrix(y)
    out = np.zeros(m.shape[:-2] + (6, 6))
    out[..., :3, 3:] = m
    out[..., 3:, :3] = -m
    return out


def h0(x):
    """Unweighted block matrix at torus points x (shape (..., 3))."""
    return h0_from_y(np.sin(np.asarray(x, dtype=float)))


def hd(p: MaterialParams, x):
    """H^D(x) = Dhat H0(x)."""
    return p.weights[:, None] * h0(x)


def sym_from_y(p: MaterialParams, y):
    """S = Dhat^{1/2} H0 Dhat^{1/2}, the real symmetric representative."""
    r = np.sqrt(p.weights)
    return r[:, None] * h0_from_y(y) * r[None, :]


def sym_fiber(p: MaterialParams, x):
    return sym_from_y(p, np.sin(np.asarray(x, dtype=float)))


def sym_basis(p: MaterialParams):
    """The three constant matrices S_j with S(y) = sum_j y_j S_j."""
    return sym_from_y(p, np.eye(3))


def to_weighted(p: MaterialParams, mat):
    """Map a matrix from the symmetric frame to the weighted frame."""
    r = np.sqrt(p.weights)
    return r[:, None] * mat / r[None, :]


def to_symmetric(p: MaterialParams, mat):
    r = np.sqrt(p.weights)
    return mat * r[None, :] / r[:, None]


@dataclass(frozen=True)
class FiberMatrix:
    entries: np.ndarray
    weight: np.ndarray

    @property
    def symmetric(self):
        r = np.sqrt(self.weight)
        return self.entries * r[None, :] / r[:, None]

    def inner(self, u, v):
        """Weighted product <Dhat^{-1} u, v>."""
        return np.vdot(np.asarray(u) / self.weight, np.asarray(v))


def build_fiber(p: MaterialParams, x) -> FiberMatrix:
    return FiberMatrix(hd(p, np.asarray(x, dtype=float)), p.weights)
