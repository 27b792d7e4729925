"""Reference values computed independently of the package (mpmath, scipy.stats)."""

import mpmath as mp
import numpy as np

mp.mp.dps = 30


def log_k(nu, x):
    return float(mp.log(mp.besselk(nu, x)))


def log_k_integral(nu, x):
    """log K_nu(x) from int_0^inf exp(-x cosh t) cosh(nu t) dt."""
    f = lambda t: mp.exp(-x * mp.cosh(t)) * mp.cosh(nu * t)  # noqa: E731
    t_max = mp.acosh(1 + (1000 + abs(nu) * 50) / x)  # integrand below e^-1000 beyond
    return float(mp.log(mp.quad(f, mp.linspace(0, t_max, 8))))


def gig_moments(a, b, lam):
    """(E[W], E[1/W], E[log W]) of GIG(a, b, lam) by direct quadrature of the density.

    Twenty digits keep the quadrature error near 1e-9, far inside the 1e-8
    tolerance this oracle is used with, at half the cost of thirty.
    """
    with mp.workdps(20):
        return _gig_moments(mp.mpf(a), mp.mpf(b), mp.mpf(lam))


def _gig_moments(a, b, lam):
    mode = ((lam - 1) + mp.sqrt((lam - 1) ** 2 + a * b)) / a
    kern = lambda w: w ** (lam - 1) * mp.exp(-(a * w + b / w) / 2)  # noqa: E731
    pts = [0, mode / 10, mode, mode * 10, mp.inf]
    z = mp.quad(kern, pts)
    e_w = mp.quad(lambda w: w * kern(w), pts) / z
    e_inv = mp.quad(lambda w: kern(w) / w, pts) / z
    e_log = mp.quad(lambda w: mp.log(w) * kern(w), pts) / z
    return float(e_w), float(e_inv), float(e_log)


def mvt_logpdf(x, loc, shape, df):
    """Multivariate t log-density via scipy (independent of the package)."""
    from scipy import stats

    return stats.multivariate_t(loc=loc, shape=shape, df=df).logpdf(x)


def ols(design, y):
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return coef, resid.T @ resid / len(y)
