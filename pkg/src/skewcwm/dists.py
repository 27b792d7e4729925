"""Component densities: the normal and four normal variance-mean mixtures.

Each skewed family arises as ``X = mu + W alpha + sqrt(W) U`` with
``U ~ N(0, Sigma)`` and a positive mixing variable ``W``:

=====  ==========================  =========================
code   family                      law of W
=====  ==========================  =========================
ST     skew-t (nu)                 IGamma(nu/2, nu/2)
GH     generalized hyperbolic      I(omega, 1, lam)
VG     variance-gamma (gamma)      Gamma(gamma, gamma)
NIG    normal inverse Gaussian     IG with GIG(kappa^2, 1, -1/2)
=====  ==========================  =========================

Every law of W is a (limit of a) GIG(a0, b0, lam0) density times a constant,
so the marginal density of X and the conditional law of W given x share one
code path: ``W | x ~ GIG(rho + a0, delta + b0, lam0 - p/2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import matcore
from .specfun import GigParams, gig_moments, log_bessel_k, sample_gig

DELTA_FLOOR = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


class Family(str, enum.Enum):
    N = "N"
    ST = "ST"
    GH = "GH"
    VG = "VG"
    NIG = "NIG"

    @property
    def skewed(self) -> bool:
        return self is not Family.N

    @property
    def n_conc(self) -> int:
        """Number of free concentration/index parameters."""
        return {Family.N: 0, Family.GH: 2}.get(self, 1)


FAMILIES = tuple(Family)
SKEWED_FAMILIES = tuple(f for f in Family if f.skewed)


class MixingLaw(NamedTuple):
    """``h(w) = exp(log_const) * w^(lam0-1) * exp(-(a0 w + b0 / w) / 2)``."""

    a0: float
    b0: float
    lam0: float
    log_const: float


@dataclass(frozen=True)
class DistKind:
    """A component family together with its concentration parameters.

    Use the named constructors, e.g. ``DistKind.skew_t(7.0)``.
    """

    family: Family
    nu: float | None = None
    omega: float | None = None
    lam: float | None = None
    gamma: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        need = {
            Family.N: (),
            Family.ST: ("nu",),
            Family.GH: ("omega", "lam"),
            Family.VG: ("gamma",),
            Family.NIG: ("kappa",),
        }[self.family]
        for name in ("nu", "omega", "lam", "gamma", "kappa"):
            value = getattr(self, name)
            if name in need:
                if value is None or not np.isfinite(value):
                    raise ValueError(f"{self.family.value} needs a finite {name}")
                if name != "lam" and value <= 0:
                    raise ValueError(f"{name} must be positive, got {value}")
            elif value is not None:
                raise ValueError(f"{name} is not a parameter of {self.family.value}")

    @classmethod
    def normal(cls):
        return cls(Family.N)

    @classmethod
    def skew_t(cls, nu):
        return cls(Family.ST, nu=float(nu))

    @classmethod
    def gen_hyperbolic(cls, omega, lam):
        return cls(Family.GH, omega=float(omega), lam=float(lam))

    @classmethod
    def variance_gamma(cls, gamma):
        return cls(Family.VG, gamma=float(gamma))

    @classmethod
    def nig(cls, kappa):
        return cls(Family.NIG, kappa=float(kappa))

    @classmethod
    def default(cls, family) -> "DistKind":
        """Starting concentrations used before the first EM update."""
        family = Family(family)
        return {
            Family.N: lambda: cls.normal(),
            Family.ST: lambda: cls.skew_t(10.0),
            Family.GH: lambda: cls.gen_hyperbolic(1.0, 0.5),
            Family.VG: lambda: cls.variance_gamma(5.0),
            Family.NIG: lambda: cls.nig(1.0),
        }[family]()

    def updated(self, **kw) -> "DistKind":
        return replace(self, **kw)

    def conc(self) -> dict:
        return {k: getattr(self, k) for k in ("nu", "omega", "lam", "gamma", "kappa") if getattr(self, k) is not None}

    def mixing_law(self) -> MixingLaw:
        f = self.family
        if f is Family.ST:
            h = 0.5 * self.nu
            return MixingLaw(0.0, self.nu, -h, h * math.log(h) - math.lgamma(h))
        if f is Family.GH:
            return MixingLaw(
                self.omega, self.omega, self.lam, -math.log(2.0) - log_bessel_k(self.lam, self.omega)
            )
        if f is Family.VG:
            g = self.gamma
            return MixingLaw(2.0 * g, 0.0, g, g * math.log(g) - math.lgamma(g))
        if f is Family.NIG:
            k = self.kappa
            return MixingLaw(k * k, 1.0, -0.5, k - 0.5 * LOG_2PI)
        raise ValueError("the normal family has no mixing law")


@dataclass
class ComponentBlock:
    """Location, scatter, skewness and family of one component density."""

    location: np.ndarray
    scatter: np.ndarray
    skew: np.ndarray
    kind: DistKind

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float)
        self.scatter = np.asarray(self.scatter, dtype=float)
        self.skew = np.asarray(self.skew, dtype=float)
        if self.skew.shape != self.location.shape[-1:]:
            raise ValueError("skew vector must match the scatter dimension")
        if not self.kind.family.skewed and np.any(self.skew != 0):
            raise ValueError("normal blocks carry no skewness")


def conditional_gig_law(kind: DistKind, delta, rho, dim: int) -> GigParams:
    """Law of the mixing weight given an observation.

    ``delta`` is the squared Mahalanobis distance of the observation and
    ``rho = alpha' Sigma^-1 alpha``.
    """
    if not kind.family.skewed:
        raise ValueError("conditional_gig_law is only defined for skewed families")
    law = kind.mixing_law()
    delta = max(float(delta), DELTA_FLOOR)
    return GigParams(rho + law.a0, delta + law.b0, law.lam0 - 0.5 * dim)


class BlockTerms(NamedTuple):
    """Per-observation output of :func:`block_terms`."""

    log_dens: np.ndarray
    e_w: np.ndarray | None
    e_inv_w: np.ndarray | None
    e_log_w: np.ndarray | None


def block_terms(kind: DistKind, diff, chol, skew=None, level: int = 0) -> BlockTerms:
    """Log-density of rows ``diff = x - location`` plus latent moments.

    Parameters
    ----------
    kind : DistKind
    diff : ndarray, shape (n, p)
    chol : ndarray, shape (p, p)
        Lower Cholesky factor of the scatter matrix.
    skew : ndarray, shape (p,), optional
    level : int
        0 for densities only, 1 adds E[W|x] and E[1/W|x], 2 adds E[log W|x].
    """
    n, p = diff.shape
    sol = linalg.solve_triangular(chol, diff.T, lower=True, check_finite=False)
    delta = np.einsum("ij,ij->j", sol, sol)
    base = -0.5 * p * LOG_2PI - float(np.sum(np.log(np.diag(chol))))
    if not kind.family.skewed:
        return BlockTerms(base - 0.5 * delta, None, None, None)

    a_sol = linalg.solve_triangular(chol, skew, lower=True, check_finite=False)
    rho = float(a_sol @ a_sol)
    bilinear = sol.T @ a_sol
    law = kind.mixing_law()
    big_b = np.maximum(delta, DELTA_FLOOR) + law.b0
    log_int, e_w, e_inv, e_log = gig_moments(law.lam0 - 0.5 * p, rho + law.a0, big_b, level)
    log_dens = bilinear + base + law.log_const + log_int
    if level == 0:
        return BlockTerms(log_dens, None, None, None)
    return BlockTerms(log_dens, e_w, e_inv, e_log if level >= 2 else None)


def log_density(kind: DistKind, x, location, scatter, skew=None):
    """Log-density of ``x`` (a vector or rows of a matrix).

    ``location`` may be a single vector or one row per observation (the
    regression case, location ``B' x*``).
    """
    x = np.asarray(x, dtype=float)
    scatter = np.asarray(scatter, dtype=float)
    p = scatter.shape[0]
    if x.shape[-1] != p or np.shape(location)[-1] != p:
        raise ValueError("dimension mismatch between point, location and scatter")
    if skew is None:
        skew = np.zeros(p)
    skew = np.asarray(skew, dtype=float)
    if not kind.family.skewed and np.any(skew != 0):
        raise ValueError("normal family takes no skewness")
    L, _ = matcore.cholesky(scatter)
    diff = np.atleast_2d(x - np.asarray(location, dtype=float))
    out = block_terms(kind, diff, L, skew, level=0).log_dens
    return float(out[0]) if x.ndim == 1 and np.ndim(location) == 1 else out


def sample_mixing_weight(kind: DistKind, rng: np.random.Generator, size=None):
    """Draw the latent mixing weight ``W`` of the family (1 for the normal)."""
    f = kind.family
    if f is Family.N:
        return 1.0 if size is None else np.ones(size)
    if f is Family.ST:
        h = 0.5 * kind.nu
        return 1.0 / rng.gamma(h, 1.0 / h, size=size)
    if f is Family.GH:
        return sample_gig(GigParams(kind.omega, kind.omega, kind.lam), rng, size=size)
    if f is Family.VG:
        return rng.gamma(kind.gamma, 1.0 / kind.gamma, size=size)
    if f is Family.NIG:
        return rng.wald(1.0 / kind.kappa, 1.0, size=size)
    raise AssertionError(f)


def sample_vector(block: ComponentBlock, rng: np.random.Generator, size=None):
    """Draw from the block via ``mu + W alpha + sqrt(W) U``."""
    n = 1 if size is None else int(size)
    L, _ = matcore.cholesky(block.scatter)
    p = L.shape[0]
    w = np.atleast_1d(sample_mixing_weight(block.kind, rng, size=n))
    u = rng.standard_normal((n, p)) @ L.T
    out = block.location + w[:, None] * block.skew + np.sqrt(w)[:, None] * u
    return out[0] if size is None else out
