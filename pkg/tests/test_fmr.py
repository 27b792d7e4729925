import math

import numpy as np
import pytest
from scipy import stats

from skewcwm import DatasetXY, EMControls, FmrParams, fmr_fit, fmr_observed_loglik, init_labels, preset, simulate_cwm
from skewcwm.dists import DistKind

import oracles


@pytest.fixture(scope="module")
def data():
    spec, params = preset("table3-nst")
    return simulate_cwm(spec, params, 300, np.random.default_rng(11))


def test_single_normal_group_is_least_squares(data):
    rep = fmr_fit("N", 1, data, np.ones((data.n, 1)))
    coef, resid_cov = oracles.ols(data.design, data.y)
    assert rep.params.beta[0] == pytest.approx(coef, abs=1e-8)
    assert rep.params.sigma_y[0] == pytest.approx(resid_cov, abs=1e-8)
    assert rep.n_params == 11
    ref = stats.multivariate_normal(cov=resid_cov).logpdf(data.y - data.design @ coef).sum()
    assert rep.loglik == pytest.approx(ref, rel=1e-12)


def test_loglik_ignores_covariate_density(data):
    params = FmrParams(
        np.array([0.4, 0.6]),
        np.zeros((2, 4, 2)),
        np.stack([np.eye(2), 2 * np.eye(2)]),
        np.zeros((2, 2)),
        (DistKind.normal(), DistKind.normal()),
    )
    ref = np.log(
        0.4 * stats.multivariate_normal(cov=np.eye(2)).pdf(data.y)
        + 0.6 * stats.multivariate_normal(cov=2 * np.eye(2)).pdf(data.y)
    ).sum()
    assert fmr_observed_loglik(params, data) == pytest.approx(ref, rel=1e-12)
    shifted = DatasetXY(data.x + 100.0, data.y)
    assert fmr_observed_loglik(params, shifted) == pytest.approx(ref, rel=1e-12)


def test_rejects_cwm_params(data):
    _, params = preset("table3-nst")
    with pytest.raises(TypeError):
        fmr_observed_loglik(params, data)


@pytest.mark.parametrize("family", ["ST", "GH", "VG", "NIG"])
def test_skewed_fit_monotone(data, family):
    z0 = init_labels(data, 2, "kmeans-hard", np.random.default_rng(2))
    rep = fmr_fit(family, 2, data, z0, EMControls(tol=1e-6, max_iter=300))
    assert np.all(np.diff(rep.loglik_trace) >= -1e-8)
    assert rep.spec.name == f"FMR-{family}"
    assert rep.ok
    assert not rep.params.has_covariates
    assert math.isfinite(rep.bic)


def test_accepts_dist_kind(data):
    z0 = init_labels(data, 2, "kmeans-hard", np.random.default_rng(2))
    rep = fmr_fit(DistKind.skew_t(5.0), 2, data, z0, EMControls(tol=1e-4))
    assert rep.spec.name == "FMR-ST"
