"""Modified Bessel function of the third kind (log scale) and GIG moments.

The generalized inverse Gaussian law GIG(a, b, lam) has density

    f(w) = (a/b)^(lam/2) w^(lam-1) / (2 K_lam(sqrt(ab))) * exp(-(a w + b/w) / 2)

on w > 0. Every skewed density and every E-step quantity in the package is
assembled from ``log K`` and the three moments E[W], E[1/W], E[log W].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ._backend import kernels


@dataclass(frozen=True)
class GigParams:
    """GIG(a, b, lam) with rate-like ``a`` and inverse-rate-like ``b``."""

    a: float
    b: float
    lam: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError(f"GIG parameters need a > 0 and b > 0, got a={self.a}, b={self.b}")
        if not np.isfinite(self.lam):
            raise ValueError(f"GIG index must be finite, got {self.lam}")

    def to_alt(self) -> "GigAltParams":
        return GigAltParams(np.sqrt(self.a * self.b), np.sqrt(self.b / self.a), self.lam)


@dataclass(frozen=True)
class GigAltParams:
    """Concentration/scale form I(omega, eta, lam) with density

        (w/eta)^(lam-1) / (2 eta K_lam(omega)) * exp(-omega/2 (w/eta + eta/w)).

    Matching this density to GIG(a, b, lam) gives omega = sqrt(ab) and
    eta = sqrt(b/a); ``eta`` is a pure scale.
    """

    omega: float
    eta: float
    lam: float

    def __post_init__(self):
        if not (self.omega > 0 and self.eta > 0):
            raise ValueError("omega and eta must be positive")

    def to_gig(self) -> GigParams:
        return GigParams(self.omega / self.eta, self.omega * self.eta, self.lam)

    def log_pdf(self, w):
        w = np.asarray(w, dtype=float) / self.eta
        return (
            (self.lam - 1.0) * np.log(w)
            - np.log(2.0 * self.eta)
            - log_bessel_k(self.lam, self.omega)
            - 0.5 * self.omega * (w + 1.0 / w)
        )


def _as_float_arrays(order, arg):
    order, arg = np.broadcast_arrays(np.asarray(order, dtype=float), np.asarray(arg, dtype=float))
    return np.ascontiguousarray(order).ravel(), np.ascontiguousarray(arg).ravel(), order.shape


def log_bessel_k(order, arg):
    """``log K_order(arg)`` for real order and positive argument.

    Accepts scalars or broadcastable arrays; returns a float for scalar input.

    Raises
    ------
    ValueError
        If any argument is not strictly positive.
    """
    if isinstance(order, (float, int)) and isinstance(arg, (float, int)):
        if not arg > 0:
            raise ValueError("log_bessel_k requires arg > 0")
        return kernels.log_kv_scalar(float(order), float(arg))
    nu, x, shape = _as_float_arrays(order, arg)
    if np.any(~(x > 0)):
        raise ValueError("log_bessel_k requires arg > 0")
    out = kernels.log_kv(nu, x).reshape(shape)
    return float(out) if out.ndim == 0 else out


def _order_step(order):
    return 1e-6 * np.maximum(1.0, np.abs(order))


def d_log_bessel_k_dorder(order, arg):
    """Central-difference derivative of ``log K_s(arg)`` in ``s`` at ``s = order``.

    Step size is ``1e-6 * max(1, |order|)``.
    """
    if isinstance(order, (float, int)) and isinstance(arg, (float, int)):
        if not arg > 0:
            raise ValueError("d_log_bessel_k_dorder requires arg > 0")
        h = 1e-6 * max(1.0, abs(order))
        f = kernels.log_kv_scalar
        return (f(order + h, float(arg)) - f(order - h, float(arg))) / (2.0 * h)
    nu, x, shape = _as_float_arrays(order, arg)
    if np.any(~(x > 0)):
        raise ValueError("d_log_bessel_k_dorder requires arg > 0")
    h = _order_step(nu)
    out = ((kernels.log_kv(nu + h, x) - kernels.log_kv(nu - h, x)) / (2.0 * h)).reshape(shape)
    return float(out) if out.ndim == 0 else out


def gig_moments(lam: float, a: float, b, level: int = 2):
    """Vectorised GIG moments for a shared ``(lam, a)`` and an array of ``b``.

    This is the E-step workhorse. ``level`` 0 computes only ``log_int``, 1 adds
    E[W] and E[1/W], 2 adds E[log W]. ``a == 0`` with ``lam < 0`` gives the
    inverse-gamma limit; ``b == 0`` with ``lam > 0`` gives the gamma limit.

    Returns
    -------
    log_int, e_w, e_inv_w, e_log_w : ndarray
        ``log_int`` is ``log int_0^inf w^(lam-1) exp(-(a w + b/w)/2) dw``,
        i.e. minus the log normalising constant of the GIG density.
    """
    b = np.ascontiguousarray(b, dtype=float)
    return kernels.gig_terms(float(lam), float(a), b, int(level))


def gig_expectations(p: GigParams) -> tuple[float, float, float]:
    """Return ``(E[W], E[1/W], E[log W])`` for ``W ~ GIG(a, b, lam)``.

    E[1/W] is evaluated as ``sqrt(a/b) K_{lam-1}/K_lam``, which equals
    ``sqrt(a/b) K_{lam+1}/K_lam - 2 lam / b`` by the Bessel recurrence but does
    not cancel when ``b`` is small.
    """
    _, e_w, e_inv, e_log = gig_moments(p.lam, p.a, np.array([p.b]))
    return float(e_w[0]), float(e_inv[0]), float(e_log[0])


def gig_log_pdf(w, p: GigParams):
    w = np.asarray(w, dtype=float)
    log_int, *_ = gig_moments(p.lam, p.a, np.array([p.b]), level=0)
    with np.errstate(divide="ignore"):
        return (p.lam - 1.0) * np.log(w) - 0.5 * (p.a * w + p.b / w) - log_int[0]


def digamma(x):
    """Digamma function on the positive reals."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise ValueError("digamma requires x > 0")
    out = special.digamma(xa)
    return float(out) if out.ndim == 0 else out


def sample_gig(p: GigParams, rng: np.random.Generator, size=None):
    """Draw from GIG(a, b, lam).

    Uses the scipy ``geninvgauss`` sampler, which has density proportional to
    ``w^(lam-1) exp(-omega (w + 1/w) / 2)``, rescaled by ``sqrt(b/a)``.
    """
    omega = np.sqrt(p.a * p.b)
    scale = np.sqrt(p.b / p.a)
    draws = stats.geninvgauss.rvs(p.lam, omega, scale=scale, size=size, random_state=rng)
    return float(draws) if size is None else draws
