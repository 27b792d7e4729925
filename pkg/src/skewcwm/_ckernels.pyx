# cython: language_level=3
"""Compiled kernels: log K_nu(x) and fused GIG moment evaluation.

``log_kv``: K_mu, K_{mu+1} for |mu| <= 1/2 come from Temme's series (x < 2)
or Steed's continued fraction (x >= 2); higher orders follow by upward
recurrence on the ratio K_{m+1}/K_m, accumulated in log scale.

``gig_terms``: the E-step needs K at three neighbouring orders plus the
order derivative. These come together from one trapezoidal sum of
K_nu(x) = int_0^inf cosh(nu t) exp(-x cosh t) dt, which converges
geometrically in the node spacing because the integrand is analytic in a
strip. All hyperbolic factors are advanced by rotation recurrences with
positive terms, so one exp per node suffices and nothing cancels.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, expm1, sqrt, fabs, sinh, cosh, sin, cos, asinh, floor, lgamma, INFINITY, NAN
from scipy.special.cython_special cimport psi

cnp.import_array()

cdef double EPS = 1e-16
cdef double LOG2 = 0.6931471805599453
cdef double PI = 3.141592653589793
cdef int MAXIT = 100000

# Taylor coefficients of 1/Gamma(1+z) about z = 0.
cdef double RGAMMA[21]
RGAMMA[:] = [
    1.0,
    0.5772156649015328606065,
    -0.655878071520253881077,
    -0.042002635034095235529,
    0.1665386113822914895017,
    -0.04219773455554433674821,
    -0.009621971527876973562115,
    0.007218943246663099542395,
    -0.001165167591859065112114,
    -0.0002152416741149509728157,
    0.0001280502823881161861532,
    -0.00002013485478078823865569,
    -0.000001250493482142670657345,
    0.000001133027231981695882374,
    -2.05633841697760710345e-7,
    6.116095104481415817862e-9,
    5.002007644469222930056e-9,
    -1.181274570487020144588e-9,
    1.043426711691100510492e-10,
    7.78226343990507125405e-12,
    -3.696805618642205708188e-12,
]


cdef inline void _temme(double xmu, double x, double* lk0, double* lk1) noexcept nogil:
    cdef double xmu2 = xmu * xmu
    cdef double gam1 = 0.0, gam2 = 0.0, pw = 1.0
    cdef double gampl, gammi, x2, pimu, fact, d, e, fact2, ff, s, s1, p, q, c, dl, dl1
    cdef int k, i

    for k in range(10):
        gam2 += RGAMMA[2 * k] * pw
        gam1 -= RGAMMA[2 * k + 1] * pw
        pw *= xmu2
    gam2 += RGAMMA[20] * pw
    gampl = gam2 - xmu * gam1
    gammi = gam2 + xmu * gam1

    x2 = 0.5 * x
    pimu = PI * xmu
    fact = 1.0 if fabs(pimu) < EPS else pimu / sin(pimu)
    d = -log(x2)
    e = xmu * d
    fact2 = 1.0 if fabs(e) < EPS else sinh(e) / e
    ff = fact * (gam1 * cosh(e) + gam2 * fact2 * d)
    s = ff
    e = exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = 1.0
    d = x2 * x2
    s1 = p
    for i in range(1, MAXIT):
        ff = (i * ff + p + q) / (i * i - xmu2)
        c *= d / i
        p /= (i - xmu)
        q /= (i + xmu)
        dl = c * ff
        s += dl
        dl1 = c * (p - i * ff)
        s1 += dl1
        if fabs(dl) < fabs(s) * EPS:
            break
    lk0[0] = log(s)
    lk1[0] = log(s1) + LOG2 - log(x)


cdef inline void _steed(double xmu, double x, double* lk0, double* lk1) noexcept nogil:
    cdef double xmu2 = xmu * xmu
    cdef double b, d, h, delh, q1, q2, a1, q, c, a, s, qnew, dels
    cdef int i

    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - xmu2
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if fabs(dels / s) < EPS:
            break
    h = a1 * h
    lk0[0] = 0.5 * log(PI / (2.0 * x)) - x - log(s)
    lk1[0] = lk0[0] + log((xmu + x + 0.5 - h) / x)


cdef void _log_kv_run(double nu0, double x, int n, double* out) noexcept nogil:
    """out[k] = log K_{nu0 + k}(x) for k < n; requires nu0 >= 0, x > 0."""
    cdef int nl = <int>(nu0 + 0.5)
    cdef double xmu = nu0 - nl
    cdef double lk0, lk1, r, L
    cdef int j

    if x < 2.0:
        _temme(xmu, x, &lk0, &lk1)
    else:
        _steed(xmu, x, &lk0, &lk1)
    if nl == 0:
        out[0] = lk0
        if n > 1:
            out[1] = lk1
        if n <= 2:
            return
    L = lk0
    r = exp(lk1 - lk0)
    for j in range(nl + n - 1):
        if j >= nl:
            out[j - nl] = L
        L += log(r)
        r = 2.0 * (xmu + j + 1) / x + 1.0 / r
    out[n - 1] = L


cdef inline double _log_kv(double nu, double x) noexcept nogil:
    cdef double out
    if not (x > 0.0):
        return NAN
    if x == INFINITY:
        return -INFINITY
    _log_kv_run(fabs(nu), x, 1, &out)
    return out


cdef inline void _log_k3(double lam, double z, double* km, double* k0, double* kp) noexcept nogil:
    """log K at orders lam - 1, lam, lam + 1."""
    cdef double buf[3]
    cdef double one
    if lam >= 1.0:
        _log_kv_run(lam - 1.0, z, 3, buf)
        km[0] = buf[0]
        k0[0] = buf[1]
        kp[0] = buf[2]
    elif lam <= -1.0:
        _log_kv_run(-lam - 1.0, z, 3, buf)
        kp[0] = buf[0]
        k0[0] = buf[1]
        km[0] = buf[2]
    elif lam >= 0.0:
        _log_kv_run(lam, z, 2, buf)
        k0[0] = buf[0]
        kp[0] = buf[1]
        _log_kv_run(1.0 - lam, z, 1, &one)
        km[0] = one
    else:
        _log_kv_run(-lam, z, 2, buf)
        k0[0] = buf[0]
        km[0] = buf[1]
        _log_kv_run(1.0 + lam, z, 1, &one)
        kp[0] = one


cdef double QUAD_LOGTOL = 40.0
cdef double QUAD_XMIN = 1e-3
cdef double QUAD_XMAX = 1e5
cdef double TWO_PI = 6.283185307179586


# Candidate strip half-widths d for the node spacing, with 1 - cos d and
# -log cos d precomputed.
cdef double QD[4]
cdef double QOMC[4]
cdef double QNLC[4]
QD[:] = [1.3, 1.0, 0.7, 0.45]
for _k in range(4):
    QOMC[_k] = 1.0 - cos(QD[_k])
    QNLC[_k] = -log(cos(QD[_k]))


cdef inline double _quad_step(double x, double numax) noexcept nogil:
    """Node spacing for relative error about exp(-QUAD_LOGTOL).

    The discretisation error for strip half-width d behaves like
    exp(-2 pi d / h) times the integrand's growth inside the strip, which is
    bounded by exp(x (1 - cos d)) cos(d)^(-numax - 1/2).
    """
    cdef double best = 0.0, d, d2, h, pen
    cdef int k
    for k in range(4):
        pen = QUAD_LOGTOL + 2.0 + x * QOMC[k] + (numax + 0.5) * QNLC[k]
        h = TWO_PI * QD[k] / pen
        if h > best:
            best = h
    d2 = 2.0 * QUAD_LOGTOL / x
    if d2 < 0.2025:
        # series for 1 - cos d and -log cos d, ample for choosing a step
        d = sqrt(d2)
        pen = QUAD_LOGTOL + 2.0 + x * (0.5 * d2 - d2 * d2 / 24.0) + (numax + 0.5) * (0.5 * d2 + d2 * d2 / 12.0)
        h = TWO_PI * d / pen
        if h > best:
            best = h
    return best


cdef inline void _cosh_sinh(double u, double* c, double* s) noexcept nogil:
    """cosh u and sinh u for u >= 0 from a single expm1."""
    cdef double e = expm1(u)
    cdef double inv = 1.0 / (1.0 + e)
    s[0] = 0.5 * (e + e * inv)
    c[0] = s[0] + inv


cdef void _quad(double nu, double x, int want, double* out) noexcept nogil:
    """Trapezoidal Bessel sums for nu >= 0 and QUAD_XMIN <= x <= QUAD_XMAX.

    out[1] = log K_nu(x) always. With want >= 1 also out[0], out[2] = log K
    at orders |nu - 1| and nu + 1; with want >= 2 also out[3], out[4] =
    d/ds log K_s(x) at s = nu and s = nu + 1.
    """
    cdef double numax = nu + 1.0 if want >= 1 else nu
    cdef double h = _quad_step(x, numax)
    cdef double ch, sh, cnh, snh, cmh, smh
    _cosh_sinh(0.5 * h, &ch, &sh)
    _cosh_sinh(nu * h, &cnh, &snh)
    _cosh_sinh(fabs(nu - 1.0) * h, &cmh, &smh)
    cdef double c2 = 1.0, s2 = 0.0, cn = 1.0, sn = 0.0, cm = 1.0, sm = 0.0
    cdef double sum_m = 0.5, sum_0 = 0.5, sum_p = 0.5, der_0 = 0.0, der_p = 0.0
    cdef double tmp, C, S, g, t, cp, term, last = 0.5
    cdef int j = 0
    while j < 100000:
        j += 1
        tmp = c2 * ch + s2 * sh
        s2 = s2 * ch + c2 * sh
        c2 = tmp
        tmp = cn * cnh + sn * snh
        sn = sn * cnh + cn * snh
        cn = tmp
        g = exp(-2.0 * x * s2 * s2)
        if want >= 1:
            tmp = cm * cmh + sm * smh
            sm = sm * cmh + cm * smh
            cm = tmp
            C = 1.0 + 2.0 * s2 * s2
            S = 2.0 * s2 * c2
            cp = cn * C + sn * S
            term = g * cp
            sum_m += g * cm
            sum_0 += g * cn
            sum_p += term
            if want >= 2:
                t = j * h
                der_0 += t * g * sn
                der_p += t * g * (sn * C + cn * S)
            if term < last and term < 1e-17 * sum_p:
                break
        else:
            term = g * cn
            sum_0 += term
            if term < last and term < 1e-17 * sum_0:
                break
        last = term
    tmp = log(h) - x
    out[1] = log(sum_0) + tmp
    if want >= 1:
        out[0] = log(sum_m) + tmp
        out[2] = log(sum_p) + tmp
    if want >= 2:
        out[3] = der_0 / sum_0
        out[4] = der_p / sum_p


cdef void _k3_deriv(double lam, double z, int level, double* km, double* k0, double* kp, double* dk) noexcept nogil:
    """log K at orders lam - 1, lam, lam + 1 (level >= 1) and d/dlam log K_lam(z) (level 2).

    At level 0 only ``k0`` is filled.
    """
    cdef double nu = fabs(lam)
    cdef double sgn = 1.0 if lam >= 0.0 else -1.0
    cdef double q[5]
    cdef double mu, L, Lprev, r, rprev, D, Dprev, Dnext, nuk, h
    cdef int n, k
    if z < QUAD_XMIN or z > QUAD_XMAX:
        if level == 0:
            k0[0] = _log_kv(lam, z)
            return
        _log_k3(lam, z, km, k0, kp)
        if level >= 2:
            h = 1e-6 * (nu if nu > 1.0 else 1.0)
            dk[0] = (_log_kv(lam + h, z) - _log_kv(lam - h, z)) / (2.0 * h)
        return
    if nu <= 2.5 or level == 0:
        if level == 0 and nu > 2.5:
            k0[0] = _log_kv(lam, z)
            return
        _quad(nu, z, level, q)
        k0[0] = q[1]
        if level == 0:
            return
        if lam >= 0.0:
            km[0] = q[0]
            kp[0] = q[2]
        else:
            km[0] = q[2]
            kp[0] = q[0]
        k0[0] = q[1]
        dk[0] = sgn * q[3]
        return
    # Fractional base mu in [0, 1), then upward recurrence in log scale with
    # the order derivative carried along:
    # D_{k+1} = D_{k-1} / (r_{k-1} r_k) + (2 / z) (1 + nu_k D_k) / r_k.
    n = <int>floor(nu)
    mu = nu - n
    _quad(mu, z, 2, q)
    Lprev = q[1]
    L = q[2]
    Dprev = q[3]
    D = q[4]
    rprev = exp(L - Lprev)
    for k in range(1, n + 1):
        nuk = mu + k
        r = 2.0 * nuk / z + 1.0 / rprev
        Dnext = Dprev / (rprev * r) + (2.0 / z) * (1.0 + nuk * D) / r
        if k == n - 1:
            km[0] = L
        Lprev = L
        L = L + log(r)
        Dprev = D
        D = Dnext
        rprev = r
    # Loop exit: Lprev = log K_nu, L = log K_{nu+1}, Dprev = D at nu.
    k0[0] = Lprev
    if n == 1:
        km[0] = q[1]
    if lam >= 0.0:
        kp[0] = L
    else:
        kp[0] = km[0]
        km[0] = L
    dk[0] = sgn * Dprev


cpdef double log_kv_scalar(double nu, double x):
    """log K_nu(x) for one order and argument (NaN unless x > 0)."""
    return _log_kv(nu, x)


def log_kv(double[::1] nu, double[::1] x):
    """Elementwise log K_nu(x) over two equal-length contiguous arrays."""
    cdef Py_ssize_t i, n = nu.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _log_kv(nu[i], x[i])
    return out


def gig_terms(double lam, double a, double[::1] b, int level=2):
    """Log-normaliser and moments of GIG(a, b_i, lam) for each b_i.

    Returns ``(log_int, e_w, e_inv_w, e_log_w)`` where ``log_int`` is
    ``log int_0^inf w^(lam-1) exp(-(a w + b/w)/2) dw``. ``level`` 0 fills only
    ``log_int``, 1 adds E[W] and E[1/W], 2 adds E[log W] (others left NaN).
    ``a == 0`` (lam < 0) and ``b == 0`` (lam > 0) use the inverse-gamma and
    gamma limits.
    """
    cdef Py_ssize_t i, n = b.shape[0]
    log_int = np.empty(n)
    e_w = np.empty(n)
    e_inv = np.empty(n)
    e_log = np.empty(n)
    cdef double[::1] li = log_int, ew = e_w, ei = e_inv, el = e_log
    cdef double bi, z, leta, km, k0, kp, dk, s
    cdef double psi_neg = NAN, psi_pos = NAN
    if a == 0.0 and lam < 0.0:
        psi_neg = psi(-lam)
    if lam > 0.0:
        psi_pos = psi(lam)

    with nogil:
        for i in range(n):
            bi = b[i]
            if a > 0.0 and bi > 0.0:
                z = sqrt(a * bi)
                leta = 0.5 * (log(bi) - log(a))
                _k3_deriv(lam, z, level, &km, &k0, &kp, &dk)
                li[i] = LOG2 + lam * leta + k0
                if level == 0:
                    ew[i] = NAN
                    ei[i] = NAN
                    el[i] = NAN
                    continue
                ew[i] = exp(leta + kp - k0)
                ei[i] = exp(km - k0 - leta)
                el[i] = leta + dk if level >= 2 else NAN
            elif a == 0.0 and bi > 0.0 and lam < 0.0:
                s = 0.5 * bi
                li[i] = lgamma(-lam) + lam * log(s)
                ew[i] = s / (-lam - 1.0) if lam < -1.0 else INFINITY
                ei[i] = -lam / s
                el[i] = log(s) - psi_neg
            elif bi == 0.0 and a > 0.0 and lam > 0.0:
                s = 0.5 * a
                li[i] = lgamma(lam) - lam * log(s)
                ew[i] = lam / s
                ei[i] = s / (lam - 1.0) if lam > 1.0 else INFINITY
                el[i] = psi_pos - log(s)
            else:
                li[i] = NAN
                ew[i] = NAN
                ei[i] = NAN
                el[i] = NAN
    return log_int, e_w, e_inv, e_log
