import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adstm.state_space import (GibbsConfig, Priors, StateSpaceModel, backward_sample, build_G, compute_mse, ffbs,
                               fit_data_driven_G, forward_filter, gibbs_update_sigma2, gibbs_update_W,
                               kalman_step, predict, run_gibbs, sigma2_posterior, w_posterior)

from oracles import moments_within, scalar_two_step_model, scalar_two_step_posterior


def random_walk_model(rng, d=2, T=60, sigmas=(0.1,), rows=6, W=None):
    """Random-walk states observed by several sources through random matrices."""
    W = np.diag(np.full(d, 0.05)) if W is None else W
    L = np.linalg.cholesky(W)
    theta = np.zeros((T + 1, d))
    for t in range(1, T + 1):
        theta[t] = theta[t - 1] + L @ rng.standard_normal(d)
    ys, Hs, rs = [], [], []
    for t in range(1, T + 1):
        H = rng.standard_normal((rows * len(sigmas), d))
        src = np.repeat(np.arange(len(sigmas)), rows)
        ys.append(H @ theta[t] + np.asarray(sigmas)[src] * rng.standard_normal(len(src)))
        Hs.append(H)
        rs.append(src)
    model = StateSpaceModel(ys, Hs, rs, np.zeros(d), 10 * np.eye(d), len(sigmas))
    return model, [np.eye(d)] * T, theta


class TestBuildG:
    def test_scalar(self):
        assert np.array_equal(build_G(np.eye(1)), [[1, 1], [0, 1]])

    def test_bias_accumulates(self, rng):
        G = build_G(np.eye(3))
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        out = predict(np.r_[a, b], G, 5)
        assert np.allclose(out[1], np.r_[a + b, b])
        assert np.allclose(out[5], np.r_[a + 5 * b, b])

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            build_G(np.zeros((2, 3)))


class TestKalman:
    def test_scalar_hand_example(self):
        one = np.eye(1)
        fs = kalman_step(np.zeros(1), one, one, one, [1.0], [1.0], one)
        assert abs(fs.c_pred[0, 0] - 2.0) <= 1e-12
        assert abs(fs.m_filt[0] - 2.0 / 3.0) <= 1e-12
        assert abs(fs.c_filt[0, 0] - 2.0 / 3.0) <= 1e-12

    def test_empty_observation(self, rng):
        G = rng.standard_normal((3, 3))
        fs = kalman_step(np.ones(3), np.eye(3), G, np.zeros((0, 3)), [], np.zeros(0), np.eye(3))
        assert np.array_equal(fs.m_filt, fs.m_pred) and np.array_equal(fs.c_filt, fs.c_pred)

    def test_perfect_observation_limit(self, rng):
        F = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        y = rng.standard_normal(3)
        fs = kalman_step(np.zeros(3), np.eye(3), np.eye(3), F, y, np.full(3, 1e-12), np.eye(3))
        assert np.allclose(fs.m_filt, np.linalg.solve(F, y), atol=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 12))
    def test_information_equals_innovation(self, seed, n):
        rng = np.random.default_rng(seed)
        d = 4
        A = rng.standard_normal((d, d))
        C = A @ A.T + np.eye(d)
        F = rng.standard_normal((n, d))
        V = rng.uniform(0.1, 2.0, n)
        args = (rng.standard_normal(d), C, rng.standard_normal((d, d)) / 2, F, rng.standard_normal(n), V,
                0.3 * np.eye(d))
        a = kalman_step(*args, form="innovation")
        b = kalman_step(*args, form="information")
        assert np.allclose(a.m_filt, b.m_filt, atol=1e-9) and np.allclose(a.c_filt, b.c_filt, atol=1e-9)

    def test_information_needs_diagonal(self):
        one = np.eye(1)
        with pytest.raises(ValueError):
            kalman_step(np.zeros(1), one, one, one, [1.0], one, one, form="information")

    def test_covariances_stay_psd(self, rng):
        model, Gs, _ = random_walk_model(rng, d=5, T=30, sigmas=(0.05, 0.3))
        for fs in forward_filter(model, Gs, 1e-4 * np.eye(5), [0.0025, 0.09]):
            for C in (fs.c_pred, fs.c_filt):
                assert np.array_equal(C, C.T)
                assert np.linalg.eigvalsh(C).min() >= -1e-8 * np.trace(C)


class TestFFBS:
    def test_two_step_moments(self):
        model, Gs, W, V = scalar_two_step_model()
        filtered = forward_filter(model, Gs, W, V)
        rng = np.random.default_rng(7)
        draws = np.array([backward_sample(filtered, Gs, model.m0, model.C0, rng)[:, 0] for _ in range(20000)])
        ok, worst = moments_within(draws, *scalar_two_step_posterior())
        assert ok, worst

    def test_single_step(self):
        model, Gs, W, V = scalar_two_step_model()
        model.y, model.obs_matrix, model.row_source = model.y[:1], model.obs_matrix[:1], model.row_source[:1]
        fs = forward_filter(model, Gs[:1], W, V)[0]
        rng = np.random.default_rng(3)
        draws = np.array([backward_sample([fs], Gs[:1], model.m0, model.C0, rng)[1] for _ in range(20000)])
        ok, worst = moments_within(draws, fs.m_filt, fs.c_filt)
        assert ok, worst

    def test_zero_state_noise_collapses(self, rng):
        model, Gs, W, V = scalar_two_step_model()
        theta = ffbs(model, Gs, 1e-14 * W, V, rng)
        assert theta[1, 0] == pytest.approx(theta[2, 0] / 0.9, abs=1e-5)
        assert theta[0, 0] == pytest.approx(theta[1, 0] / 0.9, abs=1e-5)

    def test_shape(self, rng):
        model, Gs, _ = random_walk_model(rng, d=3, T=7)
        assert ffbs(model, Gs, 0.05 * np.eye(3), [0.01], rng).shape == (8, 3)


class TestConjugate:
    def test_sigma2_hand_example(self):
        assert sigma2_posterior([np.array([1.0, 1.0])], 1.0, 1.0) == (2.0, 2.0)

    def test_sigma2_no_observations(self):
        assert sigma2_posterior([], 0.3, 0.7) == (0.3, 0.7)

    def test_sigma2_draw_distribution(self):
        rng = np.random.default_rng(1)
        draws = np.array([gibbs_update_sigma2([np.ones(2)], 1.0, 1.0, rng) for _ in range(40000)])
        # IG(2, 2) has mean 2 and median 2 / gamma.ppf(0.5, 2)
        assert np.median(draws) == pytest.approx(2.0 / 1.678346990016661, rel=0.02)

    def test_w_zero_residuals(self):
        phi = np.diag([1.0, 2.0])
        theta = np.ones((4, 2))
        scale, df = w_posterior(theta, [np.eye(2)] * 3, phi, 5)
        assert np.array_equal(scale, phi) and df == 8

    def test_w_no_steps(self):
        phi = np.eye(2)
        scale, df = w_posterior(np.ones((1, 2)), [], phi, 4)
        assert np.array_equal(scale, phi) and df == 4

    def test_w_scale_accumulates_residuals(self):
        theta = np.array([[0.0, 0.0], [1.0, 2.0]])
        scale, df = w_posterior(theta, [np.eye(2)], np.zeros((2, 2)), 3)
        assert np.array_equal(scale, [[1, 2], [2, 4]]) and df == 4

    def test_w_recovery(self):
        rng = np.random.default_rng(21)
        W = np.diag([0.02, 0.1, 0.5])
        T = 500
        theta = np.vstack([np.zeros(3), np.cumsum(rng.standard_normal((T, 3)) * np.sqrt(np.diag(W)), 0)])
        d = 3
        phi, nu = 0.01 * np.eye(d), d + 2
        scale, df = w_posterior(theta, [np.eye(d)] * T, phi, nu)
        post_mean = scale / (df - d - 1)
        assert np.all(np.abs(np.diag(post_mean) / np.diag(W) - 1) <= 0.15)
        draws = np.array([gibbs_update_W(theta, [np.eye(d)] * T, phi, nu, rng) for _ in range(2000)])
        assert np.allclose(np.diag(draws.mean(0)), np.diag(post_mean), rtol=0.03)

    def test_w_rejects_singular_scale(self, rng):
        with pytest.raises(ValueError):
            gibbs_update_W(np.zeros((3, 2)), [np.eye(2)] * 2, np.zeros((2, 2)), 4, rng)

    def test_source_noise_separation(self):
        rng = np.random.default_rng(4)
        model, Gs, _ = random_walk_model(rng, d=2, T=80, sigmas=(0.05, 0.3))
        draws = run_gibbs(model, GibbsConfig(seed=0, iters=150, burn_in=50), Priors.default(2, 2), Gs=Gs)
        sd = np.sqrt(draws.sigma2)
        m, s = sd.mean(0), sd.std(0)
        assert m[1] - m[0] >= 3 * max(s)
        assert m[0] == pytest.approx(0.05, rel=0.2) and m[1] == pytest.approx(0.3, rel=0.2)


class TestGibbs:
    def test_single_iteration(self, rng):
        model, Gs, _ = random_walk_model(rng, d=2, T=5)
        draws = run_gibbs(model, GibbsConfig(seed=0, iters=1, burn_in=0), Priors.default(2, 1), Gs=Gs)
        assert draws.n_draws == 1 and draws.theta.shape == (1, 6, 2) and draws.sigma2.shape == (1, 1)
        assert draws.w.shape == (1, 2, 2)

    def test_deterministic_per_seed(self, rng):
        model, Gs, _ = random_walk_model(rng, d=2, T=5)
        cfg = GibbsConfig(seed=9, iters=4, burn_in=1)
        a = run_gibbs(model, cfg, Priors.default(2, 1), Gs=Gs)
        b = run_gibbs(model, cfg, Priors.default(2, 1), Gs=Gs)
        assert np.array_equal(a.theta, b.theta) and np.array_equal(a.sigma2, b.sigma2)

    def test_tracks_states(self, rng):
        model, Gs, theta = random_walk_model(rng, d=2, T=40, sigmas=(0.1,))
        draws = run_gibbs(model, GibbsConfig(seed=0, iters=60, burn_in=20), Priors.default(2, 1), Gs=Gs)
        assert np.sqrt(np.mean((draws.theta_mean[1:] - theta[1:]) ** 2)) < 0.1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GibbsConfig(seed=None)
        with pytest.raises(ValueError):
            GibbsConfig(seed=0, iters=5, burn_in=5)

    def test_needs_transitions(self, rng):
        model, Gs, _ = random_walk_model(rng, d=2, T=5)
        with pytest.raises(ValueError):
            run_gibbs(model, GibbsConfig(seed=0, iters=2, burn_in=0), Priors.default(2, 1))
        with pytest.raises(ValueError):
            run_gibbs(model, GibbsConfig(seed=0, iters=2, burn_in=0), Priors.default(2, 1), Gs=Gs[:2])

    def test_learned_transition(self, rng):
        model, _, _ = random_walk_model(rng, d=2, T=40)
        draws = run_gibbs(model, GibbsConfig(seed=0, iters=30, burn_in=10), Priors.default(2, 1), learn_G=True)
        assert draws.G.shape == (20, 2, 2) and np.all(np.isfinite(draws.G_mean))


class TestDataDrivenG:
    def test_rotation_recovered(self):
        def rot(a):
            return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])

        G = np.zeros((4, 4))
        G[:2, :2], G[2:, 2:] = rot(0.3), rot(1.1)
        theta = [np.array([1.0, 0.2, -0.5, 0.7])]
        for _ in range(199):
            theta.append(G @ theta[-1])
        est = fit_data_driven_G(np.array(theta), np.eye(4))
        assert np.linalg.norm(est - G) <= 1e-6

    def test_underdetermined_warns(self, rng):
        with pytest.warns(RuntimeWarning):
            est = fit_data_driven_G(rng.standard_normal((2, 3)), np.eye(3))
        assert est.shape == (3, 3)

    def test_needs_two_states(self):
        with pytest.raises(ValueError):
            fit_data_driven_G(np.ones((1, 3)), np.eye(3))

    def test_noise_draw_stays_bounded(self, rng):
        # nearly rank-deficient trajectory: weak directions must not amplify the noise draw
        theta = np.outer(np.linspace(1, 2, 30), [1.0, 1.0, 1.0]) + 1e-6 * rng.standard_normal((30, 3))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            est = fit_data_driven_G(theta, 1e-4 * np.eye(3), rng)
        assert np.linalg.norm(est, 2) < 5


class TestPredict:
    def test_zero_horizon(self, rng):
        th = rng.standard_normal(4)
        out = predict(th, np.eye(4), 0)
        assert len(out) == 1 and np.array_equal(out[0], th)

    def test_zero_flow_no_bias_constant(self, rng):
        a = rng.standard_normal(3)
        out = predict(np.r_[a, np.zeros(3)], build_G(np.eye(3)), 4)
        assert all(np.array_equal(o[:3], a) for o in out)

    def test_callable_supplier(self):
        out = predict(np.ones(1), lambda j: np.array([[float(j)]]), 3)
        assert [o[0] for o in out] == [1.0, 1.0, 2.0, 6.0]

    def test_negative_horizon(self):
        with pytest.raises(ValueError):
            predict(np.ones(1), np.eye(1), -1)


class TestMSE:
    def test_identical(self, rng):
        x = rng.random((5, 5))
        assert compute_mse(x, x) == 0.0

    def test_offset(self, rng):
        x = rng.random((5, 5))
        assert compute_mse(x + 0.3, x) == pytest.approx(0.09)

    def test_masked_reference(self):
        ref = np.array([[1.0, np.nan], [1.0, 1.0]])
        assert compute_mse(np.array([[2.0, 100.0], [1.0, 1.0]]), ref) == pytest.approx(1.0 / 3.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_mse(np.zeros((2, 2)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            compute_mse(np.zeros((2, 2)), np.full((2, 2), np.nan))
