"""Cluster-weighted models with normal and skewed covariate/response densities.

Typical use::

    from skewcwm import DatasetXY, parse_model, run_protocol
    spec = parse_model("GH-ST", 2, data.d, data.p)
    report = run_protocol(spec, data, rng=np.random.default_rng(0))
"""

from ._backend import BACKEND
from ._common import (
    ALL_CWM_NAMES,
    ALL_FMR_NAMES,
    ALL_MODEL_NAMES,
    CwmParams,
    CwmSpec,
    DatasetXY,
    EMControls,
    FitReport,
    FmrParams,
    FmrSpec,
    bic,
    canonical_labels,
    count_params,
    parse_model,
)
from .cwm import e_step, fit, m_step, observed_loglik
from .dists import ComponentBlock, DistKind, Family, log_density
from .fmr import fmr_fit, fmr_observed_loglik
from .toolkit import (
    PRESETS,
    AllFitsFailedError,
    SelectionGrid,
    adjusted_rand_index,
    fit_grid,
    init_labels,
    preset,
    protocol_inits,
    run_protocol,
    selection_study,
    simulate_cwm,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ALL_CWM_NAMES", "ALL_FMR_NAMES", "ALL_MODEL_NAMES", "CwmParams", "CwmSpec", "DatasetXY",
    "EMControls", "FitReport", "FmrParams", "FmrSpec", "bic", "canonical_labels", "count_params", "parse_model",
    "e_step", "fit", "m_step", "observed_loglik", "ComponentBlock", "DistKind", "Family", "log_density",
    "fmr_fit", "fmr_observed_loglik", "PRESETS", "AllFitsFailedError", "SelectionGrid", "adjusted_rand_index",
    "fit_grid", "init_labels", "preset", "protocol_inits", "run_protocol", "selection_study", "simulate_cwm",
]
