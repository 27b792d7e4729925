"""Pure numpy/scipy versions of the compiled kernels in ``_ckernels.pyx``.

Same call signatures. ``log K`` comes from the exponentially scaled
``scipy.special.kve``; where that overflows (large order, small argument) the
value is rebuilt from a fractional base order by upward ratio recurrence.
"""

import numpy as np
from scipy import special

_LOG2 = np.log(2.0)


def _log_kv_recurrence(nu, x):
    n_up = np.floor(nu)
    mu = nu - n_up
    with np.errstate(over="ignore", divide="ignore"):
        lk0 = np.log(special.kve(mu, x)) - x
        lk1 = np.log(special.kve(mu + 1.0, x)) - x
    # Tiny arguments: leading small-x term for the base pair.
    bad = ~np.isfinite(lk0) | ~np.isfinite(lk1)
    if bad.any():
        xb, mb = x[bad], mu[bad]
        lk1[bad] = special.gammaln(mb + 1.0) + mb * _LOG2 - (mb + 1.0) * np.log(xb)
        with np.errstate(divide="ignore"):
            lk0[bad] = np.where(
                mb > 0,
                special.gammaln(np.maximum(mb, 1e-300)) + (mb - 1.0) * _LOG2 - mb * np.log(xb),
                np.log(-np.log(0.5 * xb) - np.euler_gamma),
            )
    out = lk0.copy()
    r = np.exp(lk1 - lk0)
    steps = int(n_up.max()) if n_up.size else 0
    for j in range(steps):
        active = j < n_up
        out = np.where(active, out + np.log(r), out)
        r = np.where(active, 2.0 * (mu + j + 1.0) / x + 1.0 / r, r)
    return out


def log_kv(nu, x):
    """Elementwise log K_nu(x) over two equal-length float arrays."""
    nu = np.abs(np.asarray(nu, dtype=float))
    x = np.asarray(x, dtype=float)
    out = np.full(nu.shape, np.nan)
    pos = x > 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out[pos] = np.log(special.kve(nu[pos], x[pos])) - x[pos]
    out[np.isposinf(x)] = -np.inf
    redo = pos & ~np.isfinite(out) & np.isfinite(x)
    if redo.any():
        out[redo] = _log_kv_recurrence(nu[redo], x[redo])
    return out


def log_kv_scalar(nu, x):
    """log K_nu(x) for one order and argument."""
    return float(log_kv(np.array([nu], dtype=float), np.array([x], dtype=float))[0])


def gig_terms(lam, a, b, level=2):
    """Log-normaliser and moments of GIG(a, b_i, lam); see ``_ckernels.gig_terms``."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    log_int = np.full(n, np.nan)
    e_w = np.full(n, np.nan)
    e_inv = np.full(n, np.nan)
    e_log = np.full(n, np.nan)

    reg = (b > 0) & (a > 0)
    if reg.any():
        bi = b[reg]
        z = np.sqrt(a * bi)
        lam_v = np.full_like(z, lam)
        k0 = log_kv(lam_v, z)
        leta = 0.5 * (np.log(bi) - np.log(a))
        log_int[reg] = _LOG2 + lam * leta + k0
        if level >= 1:
            kp = log_kv(lam_v + 1.0, z)
            km = log_kv(lam_v - 1.0, z)
            e_w[reg] = np.exp(leta + kp - k0)
            e_inv[reg] = np.exp(km - k0 - leta)
        if level >= 2:
            # Five-point central difference: truncation O(h^4), rounding ~eps/h.
            h = 1e-3 * max(1.0, abs(lam))
            d = (
                8.0 * (log_kv(lam_v + h, z) - log_kv(lam_v - h, z))
                - (log_kv(lam_v + 2.0 * h, z) - log_kv(lam_v - 2.0 * h, z))
            ) / (12.0 * h)
            e_log[reg] = leta + d

    lim = (b > 0) & (a == 0) & (lam < 0)
    if lim.any():
        s = 0.5 * b[lim]
        log_int[lim] = special.gammaln(-lam) + lam * np.log(s)
        e_w[lim] = s / (-lam - 1.0) if lam < -1.0 else np.inf
        e_inv[lim] = -lam / s
        e_log[lim] = np.log(s) - special.digamma(-lam)

    lim = (b == 0) & (a > 0) & (lam > 0)
    if lim.any():
        s = 0.5 * a
        log_int[lim] = special.gammaln(lam) - lam * np.log(s)
        e_w[lim] = lam / s
        e_inv[lim] = s / (lam - 1.0) if lam > 1.0 else np.inf
        e_log[lim] = special.digamma(lam) - np.log(s)

    return log_int, e_w, e_inv, e_log
