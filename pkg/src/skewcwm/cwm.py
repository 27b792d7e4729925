"""EM estimation for cluster-weighted models with normal or skewed blocks.

Each of the ``G`` components factorises as ``p(x | phi_g) p(y | x, theta_g)``
where both factors are one of the families in :mod:`skewcwm.dists` and the
response location is ``B_g' x*`` with ``x* = (1, x')'``. The same engine
fits finite mixtures of regressions when given an :class:`FmrSpec`; the
covariate block is then simply switched off.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize, special

from . import matcore
from ._common import (
    CwmParams,
    CwmSpec,
    DatasetXY,
    EMControls,
    FitReport,
    FmrParams,
    FmrSpec,
    bic,
    count_params,
)
from .dists import DistKind, Family, block_terms
from .specfun import d_log_bessel_k_dorder, log_bessel_k

__all__ = [
    "EStepCache",
    "joint_log_density",
    "observed_loglik",
    "e_step",
    "m_step",
    "fit",
    "update_nu",
    "update_gh",
    "update_gamma",
    "update_kappa",
    "ConcResult",
]

NU_BOUNDS = (2.001, 400.0)
GAMMA_BOUNDS = (1e-3, 400.0)
#: A variance-gamma block of dimension q is kept at gamma >= q/2 + GAMMA_MARGIN,
#: where its density is bounded.
GAMMA_MARGIN = 0.05
OMEGA_BOUNDS = (1e-3, 1e3)
LAMBDA_MAX = 100.0
Z_FLOOR = 1e-300


# --------------------------------------------------------------------------
# concentration updates


class ConcResult(NamedTuple):
    value: float
    flagged: bool


def _nu_residual(nu, target):
    h = 0.5 * nu
    return math.log(h) + 1.0 - special.digamma(h) - target


def update_nu(b_plus_c_avg: float) -> ConcResult:
    """Skew-t degrees of freedom from the weighted average of ``E[1/W] + E[log W]``.

    Solves ``log(nu/2) + 1 - digamma(nu/2) = avg`` on ``[2.001, 400]``. The
    left side decreases in ``nu``, so when there is no sign change the
    nearest bound is returned with ``flagged=True``.
    """
    if not np.isfinite(b_plus_c_avg):
        raise ValueError("average must be finite")
    lo, hi = NU_BOUNDS
    f_lo = _nu_residual(lo, b_plus_c_avg)
    f_hi = _nu_residual(hi, b_plus_c_avg)
    if f_lo <= 0:
        return ConcResult(lo, True)
    if f_hi >= 0:
        return ConcResult(hi, True)
    root = optimize.brentq(_nu_residual, lo, hi, args=(b_plus_c_avg,), xtol=1e-12, rtol=4 * np.finfo(float).eps)
    return ConcResult(root, False)


def _gamma_residual(g, target):
    return math.log(g) + 1.0 - special.digamma(g) + target


def min_gamma(dim: int) -> float:
    """Smallest variance-gamma shape allowed for a block of dimension ``dim``.

    For shapes up to ``dim / 2`` the density is infinite at the location.
    Up to ``(dim + 1) / 2`` it stays finite but has no upper bound as the
    scatter shrinks towards rank ``dim - 1`` along the skewness direction,
    so one observation placed at the location can still drive the
    likelihood up without limit. The floor sits just above that.
    """
    return 0.5 * (dim + 1) + GAMMA_MARGIN


def update_gamma(abar: float, cbar: float, lower: float | None = None) -> ConcResult:
    """Variance-gamma shape: root of ``log g + 1 - digamma(g) + cbar - abar``.

    The search interval is ``[lower, 400]`` with ``lower`` defaulting to
    ``1e-3``. The objective this root maximises is concave in ``g``, so a
    root outside the interval is replaced by the nearer bound (flagged).
    """
    target = cbar - abar
    if not np.isfinite(target):
        raise ValueError("averages must be finite")
    lo, hi = GAMMA_BOUNDS
    if lower is not None:
        lo = max(lo, float(lower))
    if _gamma_residual(lo, target) <= 0:
        return ConcResult(lo, True)
    if _gamma_residual(hi, target) >= 0:
        return ConcResult(hi, True)
    root = optimize.brentq(_gamma_residual, lo, hi, args=(target,), xtol=1e-12, rtol=4 * np.finfo(float).eps)
    return ConcResult(root, False)


def update_kappa(abar: float) -> float:
    """NIG concentration: the closed form ``1 / abar``."""
    if not abar > 0:
        raise ValueError(f"abar must be positive, got {abar}")
    return 1.0 / abar


def gh_objective(lam, omega, abar, bbar, cbar) -> float:
    """Per-observation negative expected log mixing density of GH (up to a constant).

    ``q = log K_lam(omega) - lam * cbar + omega (abar + bbar) / 2``; the
    complete-data log-likelihood of the mixing weights is ``-T q`` minus
    terms free of ``(lam, omega)``.
    """
    return log_bessel_k(lam, omega) - lam * cbar + 0.5 * omega * (abar + bbar)


def _log_k_ratio(lam, omega):
    return math.exp(log_bessel_k(lam + 1.0, omega) - log_bessel_k(lam, omega))


def update_gh(lambda_prev, omega_prev, abar, bbar, cbar) -> tuple:
    """One safeguarded update of the GH index and concentration.

    The index follows the fixed-point map
    ``lam <- cbar * lam / d/ds log K_s(omega)`` (its fixed points are the
    stationary points in ``lam``). The step is limited to a factor of five in
    magnitude and halved back towards ``lambda_prev`` until ``q`` does not
    increase. ``omega`` then takes one Newton step on the convex map
    ``s -> q(lam, s)``, again halved until ``q`` does not increase, and is
    clamped to ``[1e-3, 1e3]``.

    Returns
    -------
    lam, omega : float
    flagged : bool
        True when a safeguard had to intervene (non-finite step, clamp, or
        no improving step found).
    """
    if not omega_prev > 0:
        raise ValueError("omega_prev must be positive")
    flagged = False
    q0 = gh_objective(lambda_prev, omega_prev, abar, bbar, cbar)

    deriv = d_log_bessel_k_dorder(lambda_prev, omega_prev)
    if abs(lambda_prev) > 1e-4:
        lam_new = cbar * lambda_prev / deriv if deriv != 0 else math.nan
    else:
        # d/ds log K_s is odd in s; use its slope at zero (L'Hopital).
        h = 1e-3
        d2 = 2.0 * (log_bessel_k(h, omega_prev) - log_bessel_k(0.0, omega_prev)) / (h * h)
        lam_new = cbar / d2
    if not np.isfinite(lam_new):
        lam_new, flagged = lambda_prev, True
    cap = 5.0 * max(abs(lambda_prev), 0.2)
    if abs(lam_new) > cap:
        lam_new, flagged = math.copysign(cap, lam_new), True
    lam_new = float(np.clip(lam_new, -LAMBDA_MAX, LAMBDA_MAX))
    lam, q = _backtrack(lambda s: gh_objective(s, omega_prev, abar, bbar, cbar), lambda_prev, lam_new, q0)
    if lam is None:
        lam, q, flagged = lambda_prev, q0, True

    R = _log_k_ratio(lam, omega_prev)
    grad = lam / omega_prev - R + 0.5 * (abar + bbar)
    hess = -lam / omega_prev**2 - R * R + (2.0 * lam + 1.0) * R / omega_prev + 1.0
    step = grad / hess if hess > 0 else math.nan
    if not np.isfinite(step):
        return lam, omega_prev, True
    omega_new = float(np.clip(omega_prev - step, *OMEGA_BOUNDS))
    if omega_new != omega_prev - step:
        flagged = True
    omega, _ = _backtrack(lambda s: gh_objective(lam, s, abar, bbar, cbar), omega_prev, omega_new, q)
    if omega is None:
        omega, flagged = omega_prev, True
    return lam, omega, flagged


def _backtrack(obj, start, target, f_start, max_halvings=40):
    """Move from ``start`` towards ``target`` until ``obj`` does not increase."""
    t = target
    for _ in range(max_halvings):
        f = obj(t)
        if np.isfinite(f) and f <= f_start:
            return t, f
        t = 0.5 * (start + t)
    return None, None


# --------------------------------------------------------------------------
# E-step


class EStepCache(NamedTuple):
    """Responsibilities and latent-weight expectations at the current parameters.

    ``a, b, c`` hold ``E[W]``, ``E[1/W]``, ``E[log W]`` for the covariate
    block and ``k, m, n`` the same for the response block, each (N, G). They
    are ``None`` for normal blocks; ``c``/``n`` are also ``None`` for NIG,
    whose update does not use them. ``loglik`` is the observed-data
    log-likelihood at the parameters the cache was computed from.
    """

    z: np.ndarray
    a: np.ndarray | None
    b: np.ndarray | None
    c: np.ndarray | None
    k: np.ndarray | None
    m: np.ndarray | None
    n: np.ndarray | None
    loglik: float
    log_joint: np.ndarray


def _moment_level(family: Family) -> int:
    if family is Family.N:
        return 0
    return 1 if family is Family.NIG else 2


class DegenerateScatterError(RuntimeError):
    """A scatter matrix is singular, or numerically so relative to its own scale."""


#: Smallest eigenvalue allowed for the correlation matrix of a scatter.
#: Skewed blocks can approach a rank-deficient scatter whose missing
#: direction is carried entirely by ``W alpha``; the likelihood stays finite
#: along that path, so it is cut off here rather than by a failed Cholesky.
#: The test is invariant to rescaling individual variables.
SCATTER_MIN_CORR_EIG = 1e-6


def _chol(scatter, diag):
    sd = np.sqrt(np.diag(scatter))
    if scatter.shape[0] > 1 and np.all(sd > 0):
        corr_eig = np.linalg.eigvalsh(scatter / np.outer(sd, sd))[0]
        if not corr_eig >= SCATTER_MIN_CORR_EIG:
            raise DegenerateScatterError(f"scatter is numerically singular (correlation eigenvalue {corr_eig:.1e})")
    try:
        return np.linalg.cholesky(scatter)
    except np.linalg.LinAlgError:
        pass
    try:
        L, _ = matcore.cholesky(scatter, regularize=True)
    except np.linalg.LinAlgError:
        raise DegenerateScatterError("scatter matrix is not positive definite") from None
    if diag is not None:
        diag["regularized"] = diag.get("regularized", 0) + 1
    return L


def _check(spec, params, data):
    if data.d != spec.d or data.p != spec.p:
        raise ValueError(f"data dims (d={data.d}, p={data.p}) do not match spec (d={spec.d}, p={spec.p})")
    if params.n_groups != spec.n_groups:
        raise ValueError("parameter set has the wrong number of groups")
    if spec.has_covariates != params.has_covariates:
        raise ValueError("parameters do not match the model type")


def _component_terms(spec, params, data, moments: bool, diag=None):
    """Per-group log joint densities (without log pi) and latent moments."""
    G, N = spec.n_groups, data.n
    xs = data.design
    log_comp = np.empty((N, G))
    out = {}
    y_level = _moment_level(spec.y_family) if moments else 0
    x_level = _moment_level(spec.x_family) if (moments and spec.has_covariates) else 0
    for key in "abckmn":
        out[key] = None
    if y_level:
        for key in "km" + ("n" if y_level > 1 else ""):
            out[key] = np.empty((N, G))
    if x_level:
        for key in "ab" + ("c" if x_level > 1 else ""):
            out[key] = np.empty((N, G))

    for g in range(G):
        resid = data.y - xs @ params.beta[g]
        ty = block_terms(params.y_kinds[g], resid, _chol(params.sigma_y[g], diag), params.alpha_y[g], y_level)
        lg = ty.log_dens
        if y_level:
            out["k"][:, g], out["m"][:, g] = ty.e_w, ty.e_inv_w
            if y_level > 1:
                out["n"][:, g] = ty.e_log_w
        if spec.has_covariates:
            tx = block_terms(
                params.x_kinds[g], data.x - params.mu[g], _chol(params.sigma_x[g], diag), params.alpha_x[g], x_level
            )
            lg = lg + tx.log_dens
            if x_level:
                out["a"][:, g], out["b"][:, g] = tx.e_w, tx.e_inv_w
                if x_level > 1:
                    out["c"][:, g] = tx.e_log_w
        log_comp[:, g] = lg
    return log_comp, out


def _normalise(log_comp, weights):
    log_joint = log_comp + np.log(weights)
    lse = special.logsumexp(log_joint, axis=1)
    z = np.exp(log_joint - lse[:, None])
    z /= z.sum(axis=1, keepdims=True)
    return z, float(lse.sum()), log_joint


def joint_log_density(spec, params, x, y, g: int) -> float:
    """``log p(x | phi_g) + log p(y | x, theta_g)`` for one observation.

    For an FMR spec only the response term is returned.
    """
    data = DatasetXY(np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float)))
    _check(spec, params, data)
    if not 0 <= g < spec.n_groups:
        raise IndexError(f"group index {g} out of range")
    log_comp, _ = _component_terms(spec, params, data, moments=False)
    return float(log_comp[0, g])


def observed_loglik(spec, params, data: DatasetXY) -> float:
    """Observed-data log-likelihood ``sum_i log sum_g pi_g p_g(x_i, y_i)``."""
    _check(spec, params, data)
    log_comp, _ = _component_terms(spec, params, data, moments=False)
    return float(special.logsumexp(log_comp + np.log(params.weights), axis=1).sum())


def e_step(spec, params, data: DatasetXY, diagnostics: dict | None = None) -> EStepCache:
    """Responsibilities and conditional expectations of the latent weights."""
    _check(spec, params, data)
    log_comp, mom = _component_terms(spec, params, data, moments=True, diag=diagnostics)
    z, ll, log_joint = _normalise(log_comp, params.weights)
    return EStepCache(z=z, loglik=ll, log_joint=log_joint, **mom)


# --------------------------------------------------------------------------
# M-step


def _sym(s):
    return 0.5 * (s + s.T)


def _x_update(x, zg, T, a, b, alpha_prev):
    """Location, skewness and scatter of a skewed covariate block."""
    abar = zg @ a / T
    bbar = zg @ b / T
    den = abar * bbar - 1.0
    if den > 1e-12 * abar * bbar:
        mu = ((zg * (abar * b - 1.0)) @ x) / (T * den)
        alpha = ((zg * (bbar - b)) @ x) / (T * den)
    else:
        alpha = alpha_prev
        mu = ((zg * b) @ x - T * alpha) / (T * bbar)
    u = x - mu
    s = zg @ u
    sigma = (u * (zg * b)[:, None]).T @ u - np.outer(s, alpha) - np.outer(alpha, s) + T * abar * np.outer(alpha, alpha)
    return mu, _sym(sigma / T), alpha


def _x_update_normal(x, zg, T):
    mu = zg @ x / T
    u = x - mu
    return mu, _sym((u * zg[:, None]).T @ u / T)


def _solve_pd(P, R, diag):
    try:
        return linalg.solve(P, R, assume_a="pos", check_finite=False)
    except (linalg.LinAlgError, ValueError):
        if diag is not None:
            diag["singular_gram"] = diag.get("singular_gram", 0) + 1
        return np.linalg.lstsq(P, R, rcond=None)[0]


def _y_update(xs, y, zg, T, k, m, diag):
    """Regression matrix, skewness and scatter of a skewed response block."""
    kbar = zg @ k / T
    mz = zg * m
    s = zg @ xs
    sy = zg @ y
    P = (xs * mz[:, None]).T @ xs - np.outer(s, s) / (T * kbar)
    R = (xs * mz[:, None]).T @ y - np.outer(s, sy) / (T * kbar)
    beta = _solve_pd(_sym(P), R, diag)
    alpha = (sy - beta.T @ s) / (T * kbar)
    r = y - xs @ beta
    sr = zg @ r
    sigma = (r * mz[:, None]).T @ r - np.outer(sr, alpha) - np.outer(alpha, sr) + T * kbar * np.outer(alpha, alpha)
    return beta, _sym(sigma / T), alpha


def _y_update_normal(xs, y, zg):
    w = np.sqrt(zg)[:, None]
    beta = np.linalg.lstsq(xs * w, y * w, rcond=None)[0]
    r = y - xs @ beta
    T = zg.sum()
    return beta, _sym((r * zg[:, None]).T @ r / T)


def _conc_update(kind: DistKind, zg, T, a, b, c, label, diag, dim) -> DistKind:
    fam = kind.family
    if fam is Family.N:
        return kind
    if fam is Family.NIG:
        return kind.updated(kappa=update_kappa(zg @ a / T))
    if fam is Family.ST:
        res = update_nu(zg @ (b + c) / T)
        flagged, new = res.flagged, kind.updated(nu=res.value)
    elif fam is Family.VG:
        res = update_gamma(zg @ a / T, zg @ c / T, lower=min_gamma(dim))
        flagged, new = res.flagged, kind.updated(gamma=res.value)
    else:
        lam, omega, flagged = update_gh(kind.lam, kind.omega, zg @ a / T, zg @ b / T, zg @ c / T)
        new = kind.updated(lam=lam, omega=omega)
    if flagged and diag is not None:
        diag.setdefault("conc_flags", set()).add(label)
    return new


class CollapseError(RuntimeError):
    """A component's effective size fell below the minimum for a full scatter."""

    def __init__(self, group, size):
        super().__init__(f"component {group} collapsed (effective size {size:.3g})")
        self.group = group
        self.size = size


def _min_size(spec, controls):
    if controls is not None and controls.min_group_size is not None:
        return controls.min_group_size
    return spec.d + spec.p + 2


def m_step(spec, data: DatasetXY, cache: EStepCache, prev, controls: EMControls | None = None, diagnostics=None):
    """Parameter update given an E-step cache.

    Raises
    ------
    CollapseError
        If some ``T_g = sum_i z_ig`` is below ``d + p + 2``.
    """
    return _m_step(spec, data, cache.z, cache, prev, controls, diagnostics, update_conc=True)


def initial_params(spec, data: DatasetXY, init_z, controls: EMControls | None = None, diagnostics=None):
    """Parameters implied by starting responsibilities.

    Skewness starts at zero, concentrations at :meth:`DistKind.default`, and
    every block is estimated as if it were normal.
    """
    z = np.asarray(init_z, dtype=float)
    if z.shape != (data.n, spec.n_groups):
        raise ValueError(f"init_z must have shape {(data.n, spec.n_groups)}, got {z.shape}")
    if np.any(z < 0) or not np.allclose(z.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("init_z must be row-stochastic")
    return _m_step(spec, data, z, None, None, controls, diagnostics, update_conc=False)


def _m_step(spec, data, z, cache, prev, controls, diag, update_conc):
    G, N = spec.n_groups, data.n
    xs = data.design
    T = z.sum(axis=0)
    min_size = _min_size(spec, controls)
    small = np.flatnonzero(T < min_size)
    if small.size:
        raise CollapseError(int(small[0]), float(T[small[0]]))
    weights = T / N

    d, p = spec.d, spec.p
    beta = np.empty((G, d + 1, p))
    sigma_y = np.empty((G, p, p))
    alpha_y = np.zeros((G, p))
    y_kinds = []
    if spec.has_covariates:
        mu = np.empty((G, d))
        sigma_x = np.empty((G, d, d))
        alpha_x = np.zeros((G, d))
        x_kinds = []

    y_skew = spec.y_family.skewed and cache is not None
    x_skew = spec.has_covariates and spec.x_family.skewed and cache is not None
    for g in range(G):
        zg = z[:, g]
        if y_skew:
            beta[g], sigma_y[g], alpha_y[g] = _y_update(xs, data.y, zg, T[g], cache.k[:, g], cache.m[:, g], diag)
        else:
            beta[g], sigma_y[g] = _y_update_normal(xs, data.y, zg)
        ky = prev.y_kinds[g] if prev is not None else _start_kind(spec.y_family, p)
        if update_conc and spec.y_family.skewed:
            ky = _conc_update(ky, zg, T[g], cache.k[:, g], cache.m[:, g], _col(cache.n, g), f"y{g}", diag, data.p)
        y_kinds.append(ky)

        if spec.has_covariates:
            if x_skew:
                mu[g], sigma_x[g], alpha_x[g] = _x_update(
                    data.x, zg, T[g], cache.a[:, g], cache.b[:, g], prev.alpha_x[g]
                )
            else:
                mu[g], sigma_x[g] = _x_update_normal(data.x, zg, T[g])
            kx = prev.x_kinds[g] if prev is not None else _start_kind(spec.x_family, d)
            if update_conc and spec.x_family.skewed:
                kx = _conc_update(kx, zg, T[g], cache.a[:, g], cache.b[:, g], _col(cache.c, g), f"x{g}", diag, data.d)
            x_kinds.append(kx)

    if spec.has_covariates:
        return CwmParams(
            weights, beta, sigma_y, alpha_y, tuple(y_kinds), mu=mu, sigma_x=sigma_x, alpha_x=alpha_x,
            x_kinds=tuple(x_kinds),
        )
    return FmrParams(weights, beta, sigma_y, alpha_y, tuple(y_kinds))


def _start_kind(family, dim):
    kind = DistKind.default(family)
    if kind.family is Family.VG and kind.gamma < min_gamma(dim):
        kind = kind.updated(gamma=min_gamma(dim) + 1.0)
    return kind


def _col(arr, g):
    return None if arr is None else arr[:, g]


# --------------------------------------------------------------------------
# driver


def _converged(trace, controls):
    if len(trace) < 2:
        return False
    cur, prev = trace[-1], trace[-2]
    scale = max(abs(cur), 1e-300)
    if controls.criterion == "relative":
        return abs(cur - prev) < controls.tol * scale
    if len(trace) < 3:
        return False
    l0 = trace[-3]
    den = (prev - l0)
    if den == 0:
        return True
    acc = (cur - prev) / den
    if not 0 <= acc < 1:
        return False
    l_inf = prev + (cur - prev) / (1.0 - acc)
    return abs(l_inf - cur) < controls.tol * scale


def fit(
    spec,
    data: DatasetXY,
    init_z=None,
    controls: EMControls | None = None,
    init_params=None,
) -> FitReport:
    """Run EM from starting responsibilities ``init_z`` (N, G).

    The loop alternates E and M steps and stops on the rule in
    ``controls`` (relative change below ``1e-8`` or 1000 iterations by
    default). A component whose effective size falls below ``d + p + 2``
    ends the run with ``collapsed=True``.

    Pass ``init_params`` instead of ``init_z`` to continue from a known
    parameter set, for example a fit obtained under a looser tolerance.
    """
    controls = controls or EMControls()
    if (init_z is None) == (init_params is None):
        raise ValueError("give exactly one of init_z and init_params")
    if data.d != spec.d or data.p != spec.p:
        raise ValueError(f"data dims (d={data.d}, p={data.p}) do not match spec (d={spec.d}, p={spec.p})")
    diag: dict = {}
    k = count_params(spec)
    run = _EMRun(spec, data, controls, diag)
    try:
        if init_params is None:
            init_params = initial_params(spec, data, init_z, controls, diag)
        run.start(init_params)
        if controls.accelerate:
            run.loop_squarem()
        else:
            run.loop_plain()
    except CollapseError as exc:
        return _collapsed(spec, k, run.trace, run.n_iter, diag, exc)
    except _NonFinite:
        diag["nonfinite_loglik"] = True
        return _collapsed(spec, k, run.trace, run.n_iter, diag, None)
    except DegenerateScatterError:
        diag["degenerate_scatter"] = True
        return _collapsed(spec, k, run.trace, run.n_iter, diag, None)

    if "conc_flags" in diag:
        diag["conc_flags"] = sorted(diag["conc_flags"])
    trace = run.trace
    return FitReport(
        spec=spec,
        params=run.params,
        loglik_trace=trace,
        z_final=run.cache.z,
        map_labels=np.argmax(run.cache.z, axis=1) + 1,
        bic=bic(trace[-1], k, data.n),
        n_params=k,
        converged=run.converged,
        n_iter=run.n_iter,
        diagnostics=diag,
    )


class _NonFinite(RuntimeError):
    pass


class _EMRun:
    """Mutable state of one EM run: current parameters, their E-step, the trace."""

    def __init__(self, spec, data, controls, diag):
        self.spec, self.data, self.controls, self.diag = spec, data, controls, diag
        self.trace: list = []
        self.n_iter = 0
        self.converged = False
        self.params = None
        self.cache = None

    def _evaluate(self, params):
        cache = e_step(self.spec, params, self.data, self.diag)
        if not np.isfinite(cache.loglik):
            raise _NonFinite()
        return cache

    def _accept(self, params, cache):
        """Record a new iterate; return True when the run should stop."""
        self.params, self.cache = params, cache
        self.trace.append(cache.loglik)
        if _converged(self.trace, self.controls):
            self.converged = True
            return True
        return self.n_iter >= self.controls.max_iter

    def start(self, params):
        self.stop = self._accept(params, self._evaluate(params))

    def _em_step(self):
        new = m_step(self.spec, self.data, self.cache, self.params, self.controls, self.diag)
        self.n_iter += 1
        return self._accept(new, self._evaluate(new))

    def loop_plain(self):
        stop = self.stop
        while not stop:
            stop = self._em_step()

    def loop_squarem(self):
        step_max = 1.0
        stop = self.stop
        while not stop:
            p0 = self.params
            if self._em_step():
                return
            p1 = self.params
            if self._em_step():
                return
            p2, ll2 = self.params, self.cache.loglik
            v0, v1, v2 = _pack(p0), _pack(p1), _pack(p2)
            r = v1 - v0
            v = v2 - 2.0 * v1 + v0
            nr, nv = np.linalg.norm(r), np.linalg.norm(v)
            if nv == 0.0 or not np.isfinite(nv):
                continue
            alpha = max(-nr / nv, -step_max)
            if alpha <= -step_max:
                step_max *= 4.0
            if alpha >= -1.0:
                continue
            accepted = False
            while alpha < -1.0:
                cand = _unpack(v0 - 2.0 * alpha * r + alpha * alpha * v, p0)
                if cand is not None:
                    try:
                        cache = self._evaluate(cand)
                    except (_NonFinite, DegenerateScatterError):
                        cache = None
                    if cache is not None and cache.loglik >= ll2:
                        accepted = True
                        break
                alpha = 0.5 * (alpha - 1.0)
            if not accepted:
                step_max = max(1.0, step_max / 4.0)
                continue
            self.diag["extrapolations"] = self.diag.get("extrapolations", 0) + 1
            self.n_iter += 1
            stop = self._accept(cand, cache)


# -- unconstrained coordinates for extrapolation ---------------------------

_CONC_FIELDS = {
    Family.N: (),
    Family.ST: (("nu", True, NU_BOUNDS),),
    Family.GH: (("omega", True, OMEGA_BOUNDS), ("lam", False, (-LAMBDA_MAX, LAMBDA_MAX))),
    Family.VG: (("gamma", True, GAMMA_BOUNDS),),  # lower bound raised per block in _kinds_unvec
    Family.NIG: (("kappa", True, (1e-8, 1e8)),),
}


def _chol_vec(sigmas):
    out = []
    for s in sigmas:
        try:
            L = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise DegenerateScatterError("scatter matrix is not positive definite") from None
        i, j = np.tril_indices(L.shape[0])
        vals = L[i, j].copy()
        vals[i == j] = np.log(vals[i == j])
        out.append(vals)
    return np.concatenate(out)


def _chol_unvec(vec, G, dim):
    i, j = np.tril_indices(dim)
    m = len(i)
    out = np.empty((G, dim, dim))
    for g in range(G):
        L = np.zeros((dim, dim))
        vals = vec[g * m:(g + 1) * m].copy()
        vals[i == j] = np.exp(vals[i == j])
        L[i, j] = vals
        out[g] = L @ L.T
    return out, G * m


def _kinds_vec(kinds):
    vals = []
    for kd in kinds:
        for name, logged, _ in _CONC_FIELDS[kd.family]:
            v = getattr(kd, name)
            vals.append(math.log(v) if logged else v)
    return vals


def _kinds_unvec(vec, kinds, dim):
    out, pos = [], 0
    for kd in kinds:
        upd = {}
        for name, logged, (lo, hi) in _CONC_FIELDS[kd.family]:
            if name == "gamma":
                lo = max(lo, min_gamma(dim))
            v = vec[pos]
            pos += 1
            v = math.exp(min(v, 700.0)) if logged else v
            upd[name] = float(np.clip(v, lo, hi))
        out.append(kd.updated(**upd) if upd else kd)
    return tuple(out), pos


def _pack(params) -> np.ndarray:
    parts = [np.log(params.weights), params.beta.ravel(), params.alpha_y.ravel(), _chol_vec(params.sigma_y)]
    conc = _kinds_vec(params.y_kinds)
    if params.has_covariates:
        parts += [params.mu.ravel(), params.alpha_x.ravel(), _chol_vec(params.sigma_x)]
        conc += _kinds_vec(params.x_kinds)
    parts.append(np.asarray(conc, dtype=float))
    return np.concatenate(parts)


def _unpack(vec, template):
    """Parameters from packed coordinates, or None if they are not usable."""
    if not np.all(np.isfinite(vec)):
        return None
    G = template.n_groups
    dp1, p = template.beta.shape[1:]
    pos = 0

    def take(n):
        nonlocal pos
        out = vec[pos:pos + n]
        pos += n
        return out

    lw = take(G)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    if np.any(w <= 0):
        return None
    beta = take(G * dp1 * p).reshape(G, dp1, p)
    alpha_y = take(G * p).reshape(G, p)
    sigma_y, used = _chol_unvec(vec[pos:], G, p)
    pos += used
    if template.has_covariates:
        d = template.mu.shape[1]
        mu = take(G * d).reshape(G, d)
        alpha_x = take(G * d).reshape(G, d)
        sigma_x, used = _chol_unvec(vec[pos:], G, d)
        pos += used
    y_kinds, used = _kinds_unvec(vec[pos:], template.y_kinds, p)
    pos += used
    if template.has_covariates:
        x_kinds, used = _kinds_unvec(vec[pos:], template.x_kinds, d)
        return CwmParams(w, beta, sigma_y, alpha_y, y_kinds, mu=mu, sigma_x=sigma_x, alpha_x=alpha_x, x_kinds=x_kinds)
    return FmrParams(w, beta, sigma_y, alpha_y, y_kinds)


def _collapsed(spec, k, trace, n_iter, diag, exc):
    if exc is not None:
        diag["collapse_group"] = exc.group
        diag["collapse_size"] = exc.size
    if "conc_flags" in diag:
        diag["conc_flags"] = sorted(diag["conc_flags"])
    return FitReport(
        spec=spec, params=None, loglik_trace=trace, z_final=None, map_labels=None, bic=-math.inf,
        n_params=k, converged=False, n_iter=n_iter, collapsed=True, diagnostics=diag,
    )
