import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from skewcwm import (
    CwmSpec,
    DatasetXY,
    EMControls,
    count_params,
    cwm,
    fit,
    init_labels,
    observed_loglik,
    parse_model,
    preset,
    simulate_cwm,
)
import oracles


@pytest.fixture(scope="module")
def small_data():
    spec, params = preset("table1-stn")
    return simulate_cwm(spec, params, 300, np.random.default_rng(7))


def _xy(rng, n=120, d=2, p=2):
    mix = np.triu(np.full((d, d), 0.4)) + 0.6 * np.eye(d)
    x = rng.standard_normal((n, d)) @ mix
    y = 1.0 + x @ np.ones((d, p)) + 0.5 * rng.standard_normal((n, p))
    return DatasetXY(x, y)


class TestConcentrationUpdates:
    def test_nu_root_and_flags(self):
        nu = 9.0
        target = math.log(nu / 2) + 1 - special.digamma(nu / 2)
        res = cwm.update_nu(target)
        assert res.value == pytest.approx(nu, rel=1e-10) and not res.flagged
        assert cwm.update_nu(10.0) == (cwm.NU_BOUNDS[0], True)
        assert cwm.update_nu(0.0) == (cwm.NU_BOUNDS[1], True)
        with pytest.raises(ValueError):
            cwm.update_nu(math.nan)

    def test_gamma_root_and_bound(self):
        g = 3.0
        target = math.log(g) + 1 - special.digamma(g)
        res = cwm.update_gamma(abar=target + 0.2, cbar=0.2)
        assert res.value == pytest.approx(g, rel=1e-10) and not res.flagged
        low = cwm.update_gamma(abar=target + 0.2, cbar=0.2, lower=cwm.min_gamma(8))
        assert low == (4.55, True)

    def test_min_gamma(self):
        assert cwm.min_gamma(3) == pytest.approx(2.05)
        assert cwm.min_gamma(1) == pytest.approx(1.05)

    def test_kappa(self):
        assert cwm.update_kappa(0.25) == 4.0
        with pytest.raises(ValueError):
            cwm.update_kappa(0.0)

    @settings(max_examples=40, deadline=None)
    @given(
        lam=st.floats(-3, 3),
        omega=st.floats(0.2, 20),
        abar=st.floats(0.1, 5),
        bbar=st.floats(0.1, 5),
        cbar=st.floats(-2, 2),
    )
    def test_gh_update_never_increases_objective(self, lam, omega, abar, bbar, cbar):
        # Jensen forces abar * bbar >= 1 for real moments; keep the inputs consistent.
        bbar = max(bbar, 1.0 / abar)
        q0 = cwm.gh_objective(lam, omega, abar, bbar, cbar)
        lam1, omega1, _ = cwm.update_gh(lam, omega, abar, bbar, cbar)
        assert cwm.OMEGA_BOUNDS[0] <= omega1 <= cwm.OMEGA_BOUNDS[1]
        assert cwm.gh_objective(lam1, omega1, abar, bbar, cbar) <= q0 + 1e-12


class TestCountParams:
    def test_examples(self):
        assert count_params(parse_model("N-N", 2, 3, 2)) == 41
        assert count_params(parse_model("GH-GH", 2, 3, 2)) == 59
        assert count_params(parse_model("FMR-N", 1, 3, 2)) == 11

    def test_override(self):
        spec = parse_model("ST-NIG", 1, 1, 1)
        assert count_params(spec, n_groups=2, d=3, p=2) == count_params(parse_model("ST-NIG", 2, 3, 2))

    def test_parse_errors(self):
        for bad in ("GH", "XX-N", "FMR-QQ"):
            with pytest.raises(ValueError):
                parse_model(bad, 2, 3, 2)


class TestNormalReduction:
    def test_single_group_is_least_squares(self, rng):
        data = _xy(rng, n=150, d=3, p=2)
        rep = fit(CwmSpec("N", "N", 1, 3, 2), data, np.ones((data.n, 1)))
        coef, resid_cov = oracles.ols(data.design, data.y)
        p = rep.params
        assert p.beta[0] == pytest.approx(coef, abs=1e-8)
        assert p.sigma_y[0] == pytest.approx(resid_cov, abs=1e-8)
        assert p.mu[0] == pytest.approx(data.x.mean(axis=0), abs=1e-8)
        assert p.sigma_x[0] == pytest.approx(np.cov(data.x.T, bias=True), abs=1e-8)
        assert rep.converged and rep.n_iter <= 3


class TestFit:
    @pytest.mark.parametrize("name", ["ST-N", "GH-VG", "NIG-ST", "VG-GH", "FMR-NIG"])
    def test_trace_monotone(self, small_data, name):
        spec = parse_model(name, 2, small_data.d, small_data.p)
        z0 = init_labels(small_data, 2, "kmeans-hard", np.random.default_rng(1))
        rep = fit(spec, small_data, z0, EMControls(tol=1e-6, max_iter=200))
        assert rep.ok
        assert np.all(np.diff(rep.loglik_trace) >= -1e-8)
        assert rep.loglik == pytest.approx(observed_loglik(spec, rep.params, small_data), rel=1e-10)

    def test_accelerated_trace_monotone_and_faster(self, small_data):
        # The likelihood is flat in the tail parameter here, so compare the
        # accelerated run at a tight tolerance with a plain run on a budget.
        spec = parse_model("ST-N", 2, small_data.d, small_data.p)
        z0 = init_labels(small_data, 2, "kmeans-hard", np.random.default_rng(1))
        plain = fit(spec, small_data, z0, EMControls(tol=1e-14, max_iter=2000))
        fast = fit(spec, small_data, z0, EMControls(tol=1e-12, max_iter=2000, accelerate=True))
        assert np.all(np.diff(fast.loglik_trace) >= -1e-8)
        assert fast.converged and not plain.converged
        assert fast.loglik >= plain.loglik
        assert fast.n_iter < plain.n_iter
        assert fast.diagnostics["extrapolations"] > 0

    def test_recovers_known_partition(self, small_data):
        spec = parse_model("ST-N", 2, small_data.d, small_data.p)
        z0 = init_labels(small_data, 2, "kmeans-hard", np.random.default_rng(1))
        rep = fit(spec, small_data, z0, EMControls(tol=1e-7, accelerate=True))
        from skewcwm import adjusted_rand_index

        assert adjusted_rand_index(small_data.labels, rep.map_labels) > 0.95
        assert rep.z_final.sum(axis=1) == pytest.approx(np.ones(small_data.n))

    def test_collapse_reported(self, small_data):
        spec = parse_model("N-N", 3, small_data.d, small_data.p)
        z0 = np.full((small_data.n, 3), 1e-6)
        z0[:, 0] = 1.0
        z0[:3, 2] = 1.0
        z0 /= z0.sum(axis=1, keepdims=True)
        rep = fit(spec, small_data, z0)
        assert rep.collapsed and not rep.ok
        assert rep.bic == -math.inf
        assert rep.diagnostics["collapse_group"] == 1

    def test_continue_from_params(self, small_data):
        spec = parse_model("NIG-N", 2, small_data.d, small_data.p)
        z0 = init_labels(small_data, 2, "kmeans-hard", np.random.default_rng(1))
        loose = fit(spec, small_data, z0, EMControls(tol=1e-4))
        tight = fit(spec, small_data, init_params=loose.params, controls=EMControls(tol=1e-8))
        assert tight.loglik >= loose.loglik - 1e-8
        with pytest.raises(ValueError):
            fit(spec, small_data, z0, init_params=loose.params)
        with pytest.raises(ValueError):
            fit(spec, small_data)

    def test_dimension_mismatch(self, small_data):
        with pytest.raises(ValueError):
            fit(parse_model("N-N", 2, 2, 2), small_data, np.ones((small_data.n, 2)) / 2)

    def test_vg_shape_respects_bound(self, small_data):
        spec = parse_model("VG-VG", 2, small_data.d, small_data.p)
        z0 = init_labels(small_data, 2, "kmeans-hard", np.random.default_rng(3))
        rep = fit(spec, small_data, z0, EMControls(tol=1e-6, accelerate=True))
        assert rep.ok
        assert all(k.gamma >= cwm.min_gamma(3) - 1e-12 for k in rep.params.x_kinds)
        assert all(k.gamma >= cwm.min_gamma(2) - 1e-12 for k in rep.params.y_kinds)

    def test_joint_density_consistent(self, small_data):
        spec = parse_model("GH-NIG", 2, small_data.d, small_data.p)
        z0 = init_labels(small_data, 2, "kmeans-hard", np.random.default_rng(1))
        rep = fit(spec, small_data, z0, EMControls(tol=1e-4))
        i = 5
        mix = sum(
            rep.params.weights[g] * math.exp(cwm.joint_log_density(spec, rep.params, small_data.x[i], small_data.y[i], g))
            for g in range(2)
        )
        one = DatasetXY(small_data.x[i : i + 1], small_data.y[i : i + 1])
        assert math.log(mix) == pytest.approx(observed_loglik(spec, rep.params, one), rel=1e-10)



def test_near_singular_scatter_is_degenerate():
    with pytest.raises(cwm.DegenerateScatterError):
        cwm._chol(np.array([[1.0, 1.0 - 1e-8], [1.0 - 1e-8, 1.0]]), {})
    # Rescaling one variable does not change the verdict.
    scaled = np.array([[1e6, 1e3 * 0.9], [1e3 * 0.9, 1.0]])
    assert cwm._chol(scaled, {}) @ cwm._chol(scaled, {}).T == pytest.approx(scaled)
