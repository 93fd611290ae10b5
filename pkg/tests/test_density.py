import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from cloglogbart.density import (MixtureState, _stick_weight_matrix,
                                 conditional_density, conditional_mean,
                                 fit_density, stick_weights, update_assignments,
                                 update_components, update_sticks)
from cloglogbart.errors import DomainError
from cloglogbart.ordinal import OrdinalParams
from cloglogbart.special import sample_log_gamma


class TestStickWeights:
    def test_first_weight_at_zero_break(self):
        params = OrdinalParams(np.zeros(4))
        w = stick_weights(params, 0.0, 5)
        assert w[0] == pytest.approx(1 - math.exp(-1), rel=1e-12)
        assert w[0] == pytest.approx(0.6321206, abs=1e-7)

    def test_geometric_decay_for_flat_breaks(self):
        params = OrdinalParams(np.zeros(5))
        w = stick_weights(params, 0.0, 6)
        for k in range(5):
            assert w[k] == pytest.approx((1 - math.exp(-1)) * math.exp(-k), rel=1e-9)
        assert w[1] == pytest.approx(0.2325442, abs=1e-7)

    def test_simplex_to_machine_precision_and_nonnegative(self):
        # remainder absorption: any departure from one is rounding in the
        # partial sum (at most a few ulps)
        rng = np.random.default_rng(0)
        for _ in range(200):
            K = int(rng.integers(2, 30))
            gamma = rng.normal(0, 2, K - 1)
            R = rng.normal(0, 2, (7, K - 1))
            w = _stick_weight_matrix(gamma, R)
            np.testing.assert_allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-14)
            assert np.all(w >= 0)

    def test_single_component_truncation(self):
        params = OrdinalParams(np.zeros(3))
        np.testing.assert_array_equal(stick_weights(params, 0.0, 1), [1.0])

    def test_break_proportions_are_beta_one_alpha(self):
        # Dirichlet-process connection: with gamma ~ log Gam(1,1) the break
        # V = 1 - exp(-e^{gamma+r}) is Beta(1, e^{-r}), equivalently the
        # surviving fraction is Beta(e^{-r}, 1)
        rng = np.random.default_rng(5)
        n = 100_000
        for r in (-1.0, 0.0, 1.0):
            gam = sample_log_gamma(np.ones(n), 1.0, rng)
            surviving = np.exp(-np.exp(gam + r))
            alpha = math.exp(-r)
            p = scipy.stats.kstest(surviving, lambda u: u**alpha).pvalue
            assert p > 0.01


class TestUpdateAssignments:
    def test_single_component_always_one(self):
        rng = np.random.default_rng(0)
        state = MixtureState(rng.random((20, 1)), rng.normal(0, 1, 20), K_max=1)
        state.C[:] = 1
        update_assignments(state, None, np.random.default_rng(1))
        assert np.all(state.C == 1)

    def test_dominant_component_wins(self):
        rng = np.random.default_rng(1)
        n = 50
        X = rng.random((n, 1))
        y = np.zeros(n)
        state = MixtureState(X, y, K_max=2, n_trees=1, standardize=False)
        state.mu = np.array([0.0, 50.0])
        state.sigma = np.array([1.0, 1.0])
        update_assignments(state, None, np.random.default_rng(2))
        assert np.all(state.C == 1)

    def test_assignment_probabilities_normalized(self):
        rng = np.random.default_rng(3)
        n = 30
        state = MixtureState(rng.random((n, 2)), rng.normal(0, 1, n), K_max=6,
                             n_trees=2)
        w = state.weight_matrix()
        resid = state.ys - state.h()
        z = (resid[:, None] - state.mu[None, :]) / state.sigma[None, :]
        dens = np.exp(-0.5 * z**2) / (np.sqrt(2 * np.pi) * state.sigma[None, :])
        p = w * dens
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestUpdateSticks:
    def test_all_labels_at_truncation_leave_prior_plus_exposure(self):
        rng = np.random.default_rng(2)
        n = 25
        K = 4
        state = MixtureState(rng.random((n, 1)), rng.normal(0, 1, n), K_max=K,
                             n_trees=1, proportional=True)
        state.C[:] = K
        state.stick.set_outcome(state.C)
        # freeze latents/trees: gamma full conditional must be
        # log Gam(a, b + sum_i e^{r_i}) for every level (all empty, r = 0)
        state.stick.update_gamma(np.random.default_rng(7))
        expect = sample_log_gamma(np.ones(K - 1),
                                  np.full(K - 1, 1.0 + n),
                                  np.random.default_rng(7))
        np.testing.assert_array_equal(state.stick.params.gamma, expect)

    def test_seeded_reproducibility(self):
        rng = np.random.default_rng(4)
        n = 30
        X = rng.random((n, 1))
        y = rng.normal(0, 1, n)
        a = MixtureState(X, y, K_max=4, n_trees=2)
        b = MixtureState(X, y, K_max=4, n_trees=2)
        update_sticks(a, np.random.default_rng(9))
        update_sticks(b, np.random.default_rng(9))
        np.testing.assert_array_equal(a.stick.params.gamma, b.stick.params.gamma)


class TestUpdateMeanForest:
    def test_stump_leaf_matches_weighted_least_squares(self):
        # root-only tree: the leaf full conditional is
        # Normal(S_wr / (tau0 + S_w), 1 / (tau0 + S_w))
        rng = np.random.default_rng(5)
        n = 40
        X = rng.random((n, 1))
        y = rng.normal(1.0, 0.5, n)
        state = MixtureState(X, y, K_max=2, n_trees=1, standardize=False)
        state.sigma = np.array([0.5, 2.0])
        state.C = 1 + (rng.random(n) < 0.3).astype(int)

        prec = 1.0 / state.sigma[state.C - 1] ** 2
        target = state.ys - state.mu[state.C - 1]
        tau0 = 1.0 / state.mean_forest.leaf_prior.sigma_mu**2
        post_prec = tau0 + prec.sum()
        post_mean = (prec * target).sum() / post_prec

        state.mean_engine.set_weights(prec, target)
        stats = state.mean_engine.suffstats(0, state.mean_forest.trees[0])
        # doubling one cluster's weight shifts leverage exactly as WLS says
        assert stats.A[0] == pytest.approx(prec.sum(), rel=1e-12)
        assert stats.B[0] == pytest.approx((prec * target).sum(), rel=1e-12)
        draws = np.array([
            float(state.mean_engine.model.draw(stats.A, stats.B,
                                               np.random.default_rng(seed))[0])
            for seed in range(4000)
        ])
        assert draws.mean() == pytest.approx(post_mean, abs=4 * draws.std() / 60)
        assert draws.var() == pytest.approx(1.0 / post_prec, rel=0.1)

    def test_zero_residuals_keep_mean_forest_near_zero(self):
        rng = np.random.default_rng(6)
        n = 120
        X = rng.random((n, 1))
        # y exactly mu_{C} with h = 0: residual surface is zero
        state = MixtureState(X, np.zeros(n), K_max=2, n_trees=10,
                             standardize=False)
        state.mu = np.zeros(2)
        state.sigma = np.array([0.05, 0.05])
        grid = np.linspace(0.05, 0.95, 10)[:, None]
        acc = np.zeros(10)
        chain = np.random.default_rng(8)
        for it in range(400):
            state.update_mean_forest(chain)
            if it >= 100:
                acc += state.mean_forest.evaluate(grid)
        assert np.all(np.abs(acc / 300) < 0.05)


class TestUpdateComponents:
    def test_empty_cluster_draws_from_base_measure(self):
        rng = np.random.default_rng(7)
        n = 30
        state = MixtureState(rng.random((n, 1)), rng.normal(0, 1, n), K_max=3,
                             n_trees=1)
        state.C[:] = 1  # clusters 2 and 3 empty
        r = np.random.default_rng(12)
        update_components(state, None, r)
        # replay: mu_k for empty clusters is Normal(mu0, sigma0) with the
        # pre-update sigma0 = 1 and sigma_k = 1
        check = np.random.default_rng(12)
        resid = state.ys - state.h()
        n_k = np.array([n, 0.0, 0.0])
        sum_k = np.array([resid.sum(), 0.0, 0.0])
        post_prec = 1.0 + n_k  # sigma0 = sigma_k = 1 before the update
        post_mean = sum_k / post_prec
        expect_mu = post_mean + check.standard_normal(3) / np.sqrt(post_prec)
        np.testing.assert_allclose(state.mu, expect_mu, rtol=1e-12)

    def test_hyperprior_constants(self):
        # a_sigma, b_sigma ~ Gam(4,2); sigma0^{-2} ~ Gam(1,1): with no
        # clusters informing them the chain must match those priors
        rng = np.random.default_rng(8)
        n = 4
        state = MixtureState(rng.random((n, 1)), rng.normal(0, 1, n), K_max=2,
                             n_trees=1)
        chain = np.random.default_rng(3)
        a_draws, b_draws = [], []
        for _ in range(4000):
            state.update_components(chain)
            a_draws.append(state.a_sigma)
            b_draws.append(state.b_sigma)
        # b_sigma | tau ~ Gam(4 + K a_sigma, 2 + sum tau) has prior mean 2
        # only marginally; check a_sigma against its Gam(4,2) prior moments
        # loosely (the toy data barely moves it)
        assert 1.0 < np.mean(a_draws) < 4.0

    def test_single_cluster_posterior_recovers_truth(self):
        rng = np.random.default_rng(9)
        n = 2000
        mu_true, sigma_true = 3.0, 0.7
        y = rng.normal(mu_true, sigma_true, n)
        state = MixtureState(rng.random((n, 1)), y, K_max=2, n_trees=1,
                             standardize=False)
        chain = np.random.default_rng(10)
        mu_hat, sigma_hat = [], []
        for it in range(2500):
            state.update_assignments(chain)
            state.update_components(chain)
            if it >= 500:
                mu_hat.append(np.mean(state.mu[state.C - 1]))
                sigma_hat.append(np.mean(state.sigma[state.C - 1]))
        mu_hat = np.asarray(mu_hat)
        sigma_hat = np.asarray(sigma_hat)
        mcse_mu = mu_hat.std() / math.sqrt(200)  # conservative ESS
        mcse_sd = sigma_hat.std() / math.sqrt(200)
        assert abs(mu_hat.mean() - mu_true) < max(3 * mcse_mu, 0.05)
        assert abs(sigma_hat.mean() - sigma_true) < max(3 * mcse_sd, 0.05)


class TestFitDensity:
    def test_rejects_bad_modes_and_truncation(self):
        X = np.zeros((5, 1))
        y = np.zeros(5)
        with pytest.raises(DomainError):
            fit_density(X, y, mode="other", n_trees=1, burnin=1, n_iter=1)
        with pytest.raises(DomainError):
            fit_density(X, y, K_max=1, n_trees=1, burnin=1, n_iter=1)

    def test_small_n_warns_below_truncation(self):
        X = np.random.default_rng(0).random((5, 1))
        y = np.random.default_rng(1).normal(0, 1, 5)
        with pytest.warns(UserWarning, match="truncation"):
            fit_density(X, y, K_max=10, n_trees=1, burnin=2, n_iter=2,
                        keep_forests=False, record_loglik=False)

    def test_degenerate_constant_outcome(self):
        rng = np.random.default_rng(2)
        n = 60
        X = rng.random((n, 1))
        y = np.full(n, 2.5)
        draws = fit_density(X, y, K_max=3, n_trees=2, burnin=100, n_iter=100,
                            seed=4, X_query=X[:1], record_loglik=False)
        grid = np.linspace(1.0, 4.0, 121)
        dens = conditional_density(draws, X[0], grid, query_index=0)
        mode = grid[np.argmax(dens.mean(axis=0))]
        assert abs(mode - 2.5) < 0.1

    def test_sweep_order_and_determinism(self):
        rng = np.random.default_rng(3)
        n = 40
        X = rng.random((n, 1))
        y = rng.normal(0, 1, n)
        kw = dict(K_max=4, n_trees=2, burnin=10, n_iter=10, seed=6,
                  X_query=X[:2])
        a = fit_density(X, y, **kw)
        b = fit_density(X, y, **kw)
        for key in a.params:
            np.testing.assert_array_equal(a.params[key], b.params[key])


class TestConditionalDensity:
    @staticmethod
    def _fit_small(mode="nph", seed=0):
        rng = np.random.default_rng(seed)
        n = 80
        X = rng.random((n, 1))
        y = np.where(rng.random(n) < 0.5, rng.normal(-1, 0.3, n),
                     rng.normal(1.0, 0.4, n))
        return X, y, fit_density(X, y, K_max=5, mode=mode, n_trees=3,
                                 burnin=150, n_iter=100, seed=seed,
                                 X_query=X[:2], record_loglik=True)

    def test_integrates_to_one(self):
        X, y, draws = self._fit_small()
        grid = np.linspace(y.min() - 4.0, y.max() + 4.0, 801)
        dens = conditional_density(draws, X[0], grid, query_index=0)
        integrals = scipy.integrate.trapezoid(dens, grid, axis=1)
        np.testing.assert_allclose(integrals, 1.0, atol=1e-3)

    def test_mixture_mean_identity(self):
        X, y, draws = self._fit_small(seed=1)
        means = conditional_mean(draws, X[0], query_index=0)
        gamma = draws.params["gamma"]
        mu = draws.params["mu"]
        r = draws.params["r_query"][:, 0]
        h = draws.params["h_query"][:, 0]
        m, sd = draws.extras["y_mean"], draws.extras["y_sd"]
        for s in range(draws.n_draws):
            w = _stick_weight_matrix(gamma[s], r[s][None, :])[0]
            expect = m + sd * (h[s] + float(w @ mu[s]))
            assert means[s] == pytest.approx(expect, abs=1e-12)

    def test_single_component_is_normal(self):
        from cloglogbart.draws import PosteriorDraws

        draws = PosteriorDraws(
            kind="density", config={}, seed=0,
            params={
                "gamma": np.array([[30.0]]),  # first break takes everything
                "mu": np.array([[0.5, 0.0]]),
                "sigma": np.array([[0.3, 1.0]]),
                "r_query": np.array([[[0.0]]]),
                "h_query": np.array([[0.2]]),
            },
            extras={"K_max": 2, "proportional": False, "n_predictors": 1,
                    "n_cat": 1, "y_mean": 0.0, "y_sd": 1.0},
        )
        grid = np.linspace(-2, 3, 301)
        dens = conditional_density(draws, np.zeros(1), grid, query_index=0)[0]
        want = scipy.stats.norm.pdf(grid, 0.7, 0.3)
        np.testing.assert_allclose(dens, want, atol=1e-8)

    def test_per_draw_cdf_monotone_and_density_nonnegative(self):
        X, y, draws = self._fit_small(seed=2)
        grid = np.linspace(y.min() - 2, y.max() + 2, 301)
        dens = conditional_density(draws, X[1], grid, query_index=1)
        assert np.all(dens >= 0)
        cdf = np.cumsum(dens, axis=1)
        assert np.all(np.diff(cdf, axis=1) >= 0)


class TestGewekeDensityInvariance:
    def test_full_sampler_preserves_joint_prior(self):
        from conftest import geweke_pvalue
        from cloglogbart.forest import sample_forest_from_prior

        rng = np.random.default_rng(21)
        n, K, T = 50, 5, 2
        X = rng.random((n, 1))

        def prior_state(rng):
            state = MixtureState(X, np.zeros(n), K_max=K, n_trees=T,
                                 proportional=False, standardize=False)
            state.stick.params.gamma = np.atleast_1d(
                sample_log_gamma(np.ones(K - 1), 1.0, rng))
            state.stick.engine.reset_from_prior(rng)
            state.mean_engine.reset_from_prior(rng)
            tau0 = rng.gamma(1.0, 1.0)
            state.sigma0 = 1.0 / math.sqrt(tau0)
            state.a_sigma = rng.gamma(4.0, 0.5)
            state.b_sigma = rng.gamma(4.0, 0.5)
            state.mu = state.sigma0 * rng.standard_normal(K)
            state.sigma = 1.0 / np.sqrt(
                rng.gamma(state.a_sigma, 1.0 / state.b_sigma, K))
            return state

        def simulate_y(state, rng):
            w = state.weight_matrix()
            cdf = np.cumsum(w, axis=1)
            u = rng.random(n) * cdf[:, -1]
            C = (u[:, None] > cdf).sum(axis=1) + 1
            state.C = C
            state.stick.set_outcome(C)
            y = (state.mu[C - 1] + state.h()
                 + state.sigma[C - 1] * rng.standard_normal(n))
            state.ys = y

        marginal = []
        for _ in range(6000):
            s = prior_state(rng)
            marginal.append([s.stick.params.gamma[0], s.mu[0], s.sigma0])
        marginal = np.asarray(marginal)

        state = prior_state(rng)
        simulate_y(state, rng)
        chain = []
        for _ in range(12_000):
            state.sweep(rng)
            simulate_y(state, rng)
            chain.append([state.stick.params.gamma[0], state.mu[0], state.sigma0])
        chain = np.asarray(chain)

        for col in range(3):
            assert geweke_pvalue(marginal[:, col], chain[:, col]) > 0.005
