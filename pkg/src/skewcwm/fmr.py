"""Finite mixtures of regressions with fixed covariates.

The FMR engine is the CWM engine with the covariate block switched off: the
E-step uses only the conditional response density and the M-step is the
response branch of :func:`skewcwm.cwm.m_step`. Sharing one code path keeps
CWM/FMR comparisons about covariate modelling and nothing else.
"""

from __future__ import annotations

from . import cwm
from ._common import DatasetXY, EMControls, FitReport, FmrParams, FmrSpec
from .dists import Family

__all__ = ["FmrParams", "FmrSpec", "fmr_observed_loglik", "fmr_fit"]


def _spec_for(params: FmrParams, data: DatasetXY) -> FmrSpec:
    if params.has_covariates:
        raise TypeError("expected FMR parameters, got a CWM parameter set")
    return FmrSpec(params.y_kinds[0].family, params.n_groups, data.d, data.p)


def fmr_observed_loglik(params: FmrParams, data: DatasetXY) -> float:
    """``sum_i log sum_g pi_g p(y_i | x_i, theta_g)``."""
    return cwm.observed_loglik(_spec_for(params, data), params, data)


def fmr_fit(
    y_kind,
    n_groups: int,
    data: DatasetXY,
    init_z,
    controls: EMControls | None = None,
) -> FitReport:
    """Fit an FMR by EM from starting responsibilities ``init_z``.

    Parameters
    ----------
    y_kind : Family or str
        Family of the conditional response density, e.g. ``"ST"``.
    n_groups : int
    data : DatasetXY
    init_z : ndarray, shape (N, n_groups)
    controls : EMControls, optional

    Returns
    -------
    FitReport
        ``params`` is an :class:`FmrParams`; collapse and convergence are
        reported exactly as for :func:`skewcwm.cwm.fit`.
    """
    spec = FmrSpec(Family(getattr(y_kind, "family", y_kind)), n_groups, data.d, data.p)
    return cwm.fit(spec, data, init_z, controls)
