import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from cloglogbart.errors import DomainError
from cloglogbart.ordinal import (OrdinalParams, OrdinalState, _nph_pmf_matrix,
                                 _ph_pmf_matrix, cutpoints_from_gamma,
                                 fit_binary, fit_ordinal, heldout_loglik,
                                 ordinal_pmf, ordinal_suffstats,
                                 predict_binary, predict_ordinal,
                                 update_gamma, update_latents)
from cloglogbart.special import sample_log_gamma


class TestCutpoints:
    def test_equal_terms(self):
        np.testing.assert_allclose(cutpoints_from_gamma([0.0, 0.0, 0.0]),
                                   [0.0, math.log(2), math.log(3)], atol=1e-15)

    def test_direct_sum(self):
        np.testing.assert_allclose(cutpoints_from_gamma([0.0, math.log(2.0)]),
                                   [0.0, math.log(3.0)], atol=1e-15)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            c = cutpoints_from_gamma(rng.normal(0, 3, rng.integers(1, 8)))
            assert np.all(np.diff(c) > 0)


class TestOrdinalPmf:
    def test_binary_at_zero(self):
        params = OrdinalParams(np.zeros(1))
        assert ordinal_pmf(params, 0.0, 1) == pytest.approx(1 - math.exp(-1), rel=1e-12)
        assert ordinal_pmf(params, 0.0, 1) == pytest.approx(0.6321206, abs=1e-7)

    def test_three_level_values(self):
        params = OrdinalParams(np.zeros(2))
        want = [1 - math.exp(-1), math.exp(-1) - math.exp(-2), math.exp(-2)]
        got = [ordinal_pmf(params, 0.0, k) for k in (1, 2, 3)]
        np.testing.assert_allclose(got, want, atol=1e-12)
        np.testing.assert_allclose(got, [0.6321206, 0.2325442, 0.1353353], atol=1e-7)

    def test_out_of_range_k(self):
        params = OrdinalParams(np.zeros(2))
        with pytest.raises(DomainError):
            ordinal_pmf(params, 0.0, 0)
        with pytest.raises(DomainError):
            ordinal_pmf(params, 0.0, 4)

    def test_rows_sum_to_one_to_machine_precision(self):
        # the last category is the complement of the rest, so any departure
        # from one is a few ulps of rounding in the partial sum
        rng = np.random.default_rng(1)
        for _ in range(200):
            K = int(rng.integers(2, 7))
            gamma = rng.normal(0, 1.5, K - 1)
            pmf = _ph_pmf_matrix(gamma, rng.normal(0, 1.5, 10))
            np.testing.assert_allclose(pmf.sum(axis=1), 1.0, rtol=0, atol=1e-15)
            assert np.all(pmf >= 0)
            R = rng.normal(0, 1.5, (10, K - 1))
            pmf = _nph_pmf_matrix(gamma, R)
            np.testing.assert_allclose(pmf.sum(axis=1), 1.0, rtol=0, atol=1e-15)
            assert np.all(pmf >= 0)

    def test_ph_and_nph_agree_for_constant_r(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(1000):
            K = int(rng.integers(2, 7))
            gamma = rng.normal(0, 2, K - 1)
            r = rng.normal(0, 2)
            params = OrdinalParams(gamma)
            for k in range(1, K + 1):
                a = ordinal_pmf(params, r, k)
                b = ordinal_pmf(params, np.full(K - 1, r), k)
                worst = max(worst, abs(a - b))
        assert worst <= 1e-12


def make_state(seed=0, n=40, K=3, proportional=True, n_trees=2, **kw):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    y = rng.integers(1, K + 1, n)
    return OrdinalState(X, y, K, proportional=proportional, n_trees=n_trees, **kw)


class TestUpdateLatents:
    def test_support(self):
        state = make_state()
        update_latents(state, np.random.default_rng(1))
        has = state.y < state.K
        assert np.all((state.Z[has] > 0) & (state.Z[has] < 1))

    def test_uniform_limit_as_rate_vanishes(self):
        state = make_state(n=100_000, K=2, n_trees=1)
        state.params.gamma = np.array([-18.5])  # rate ~ 1e-8 with r = 0
        update_latents(state, np.random.default_rng(3))
        z = state.Z[state.y < 2]
        p = scipy.stats.kstest(z, "uniform").pvalue
        assert p > 0.01

    def test_seeded_reproducibility(self):
        a = make_state(seed=4)
        b = make_state(seed=4)
        update_latents(a, np.random.default_rng(9))
        update_latents(b, np.random.default_rng(9))
        np.testing.assert_array_equal(a.Z, b.Z)


class TestUpdateGamma:
    def test_empty_level_draws_from_prior(self):
        rng = np.random.default_rng(0)
        X = rng.random((5, 2))
        y = np.ones(5, dtype=int)  # nothing at or above level 2
        state = OrdinalState(X, y, 3, n_trees=1, warn_unobserved=False)
        state.Z[:] = 0.5
        update_gamma(state, np.random.default_rng(11))
        # reproduce: gamma_2 | . ~ log Gam(a_gamma, b_gamma) given empty sums
        check = np.random.default_rng(11)
        A = np.array([5.0, 0.0])
        B = np.array([0.5 * 5.0, 0.0])  # level 1: sum Z_i e^0
        expect = sample_log_gamma(1.0 + A, 1.0 + B, check)
        np.testing.assert_array_equal(state.params.gamma, expect)

    def test_single_observation_plugin(self):
        X = np.zeros((1, 1))
        state = OrdinalState(X, np.array([1]), 2, n_trees=1)
        state.Z[:] = 0.5
        update_gamma(state, np.random.default_rng(5))
        expect = sample_log_gamma(np.array([2.0]), np.array([1.5]),
                                  np.random.default_rng(5))
        np.testing.assert_array_equal(state.params.gamma, expect)

    def test_fixed_tree_posterior_matches_quadrature(self):
        # K = 2, r = 0: Gibbs on (Z, gamma) only; oracle by 1-D quadrature
        rng = np.random.default_rng(8)
        n = 60
        X = rng.random((n, 1))
        y = np.where(rng.random(n) < 0.55, 1, 2)
        state = OrdinalState(X, y, 2, n_trees=1)
        chain_rng = np.random.default_rng(21)
        draws = []
        for it in range(6000):
            state.update_latents(chain_rng)
            state.update_gamma(chain_rng)
            if it >= 1000:
                draws.append(state.params.gamma[0])
        draws = np.asarray(draws)

        n1 = int(np.sum(y == 1))
        n2 = n - n1

        def unnorm(g):
            p = -np.expm1(-np.exp(g))
            return p**n1 * (1 - p) ** n2 * np.exp(g - np.exp(g))

        grid = np.linspace(-12, 6, 20_001)
        w = unnorm(grid)
        post_mean = (scipy.integrate.trapezoid(grid * w, grid)
                     / scipy.integrate.trapezoid(w, grid))

        ess = draws.size / (1 + 2 * np.sum([
            np.corrcoef(draws[:-lag], draws[lag:])[0, 1] for lag in range(1, 50)]))
        mcse = draws.std() / math.sqrt(max(ess, 10))
        assert abs(draws.mean() - post_mean) < 3 * mcse


class TestOrdinalSuffstats:
    def test_all_top_category_gives_zero_A(self):
        X = np.random.default_rng(0).random((8, 2))
        y = np.full(8, 3)
        state = OrdinalState(X, y, 3, n_trees=1, warn_unobserved=False)
        stats = ordinal_suffstats(state, 0, state.forest.trees[0])
        assert np.all(stats.A == 0)

    def test_single_observation_plugin(self):
        X = np.zeros((1, 1))
        state = OrdinalState(X, np.array([1]), 2, n_trees=1)
        state.Z[:] = 0.5
        stats = ordinal_suffstats(state, 0, state.forest.trees[0])
        np.testing.assert_allclose(stats.A, [1.0])
        np.testing.assert_allclose(stats.B, [0.5])

    def test_binary_path_matches_k2_stats_leaf_by_leaf(self):
        # independent binary-model statistics computed from scratch
        rng = np.random.default_rng(3)
        n = 80
        X = rng.random((n, 2))
        y = np.where(rng.random(n) < 0.6, 1, 2)
        state = OrdinalState(X, y, 2, n_trees=2)
        chain = np.random.default_rng(1)
        for _ in range(20):
            state.sweep(chain)
        from cloglogbart.forest import sample_tree_from_prior
        candidate = sample_tree_from_prior(state.forest, chain)
        stats = ordinal_suffstats(state, 0, candidate)

        g1 = state.params.gamma[0]
        other = state.forest.trees[1]
        eta = other.leaf_value[other.assign(X, None, 2, None)]
        nodes = candidate.assign(X, None, 2, None)
        leaf_nodes = candidate.leaves()
        A = np.zeros(leaf_nodes.size)
        B = np.zeros(leaf_nodes.size)
        for i in range(n):
            leaf = int(np.searchsorted(leaf_nodes, nodes[i]))
            if y[i] == 1:  # success: TExp latent in (0,1)
                A[leaf] += 1.0
                B[leaf] += state.Z[i] * math.exp(g1 + eta[i])
            else:  # failure: closed-form unit exposure
                B[leaf] += math.exp(g1 + eta[i])
        np.testing.assert_allclose(stats.A, A, rtol=1e-12)
        np.testing.assert_allclose(stats.B, B, rtol=1e-12)


class TestFitOrdinal:
    def test_k2_equals_binary_same_seed(self):
        rng = np.random.default_rng(0)
        X = rng.random((50, 2))
        yb = (rng.random(50) < 0.5).astype(int)
        y_ord = np.where(yb == 1, 1, 2)
        kw = dict(n_trees=3, burnin=30, n_iter=30, X_query=X[:3],
                  record_loglik=True, keep_forests=False)
        ord_draws = fit_ordinal(X, y_ord, K=2, seed=13, **kw)
        bin_draws = fit_binary(X, yb, seed=13, **kw)
        np.testing.assert_array_equal(ord_draws.params["gamma"],
                                      bin_draws.params["gamma"])
        np.testing.assert_array_equal(ord_draws.params["r_query"],
                                      bin_draws.params["r_query"])
        np.testing.assert_array_equal(ord_draws.loglik, bin_draws.loglik)

    def test_loglog_is_recoded_cloglog(self):
        rng = np.random.default_rng(5)
        X = rng.random((40, 2))
        y = (rng.random(40) < 0.4).astype(int)
        kw = dict(n_trees=2, burnin=20, n_iter=20, keep_forests=True)
        ll = fit_binary(X, y, link="loglog", seed=3, **kw)
        cc = fit_binary(X, 1 - y, link="cloglog", seed=3, **kw)
        np.testing.assert_array_equal(ll.params["gamma"], cc.params["gamma"])
        p_ll = predict_binary(ll, X[:4])
        p_cc = predict_binary(cc, X[:4])
        np.testing.assert_allclose(p_ll, 1.0 - p_cc, atol=1e-15)

    def test_invalid_K(self):
        X = np.zeros((4, 1))
        with pytest.raises(DomainError):
            fit_ordinal(X, np.array([1, 1, 1, 1]), K=1, n_trees=1,
                        burnin=1, n_iter=1)

    def test_unobserved_category_warns_not_errors(self, caplog):
        X = np.random.default_rng(0).random((10, 1))
        y = np.array([1, 1, 1, 3, 3, 3, 1, 3, 1, 3])
        with caplog.at_level("WARNING"):
            fit_ordinal(X, y, K=3, n_trees=1, burnin=2, n_iter=2,
                        keep_forests=False, record_loglik=False)
        assert any("unobserved" in rec.message for rec in caplog.records)

    def test_augment_zeros_agrees_with_closed_form_sampler(self):
        # the two augmentation schemes target the same posterior of p(x*)
        rng = np.random.default_rng(7)
        n = 200
        X = rng.random((n, 2))
        p_true = 1 - np.exp(-np.exp(-0.5 + 1.5 * X[:, 0]))
        y = (rng.random(n) < p_true).astype(int)
        x_star = np.array([[0.5, 0.5]])
        intervals = {False: [], True: []}
        for seed in range(10):
            for augment in (False, True):
                draws = fit_binary(X, y, augment_zeros=augment, n_trees=10,
                                   burnin=300, n_iter=300, seed=seed,
                                   X_query=x_star, record_loglik=False,
                                   keep_forests=False)
                p = 1 - np.exp(-np.exp(draws.params["gamma"][:, 0]
                                       + draws.params["r_query"][:, 0]))
                intervals[augment].append(np.quantile(p, [0.025, 0.975]))
        for a, b in zip(intervals[False], intervals[True]):
            assert a[0] <= b[1] and b[0] <= a[1]  # overlapping 95% intervals


class TestPredictOrdinal:
    def test_single_draw_equals_pmf(self):
        rng = np.random.default_rng(2)
        X = rng.random((30, 2))
        y = rng.integers(1, 4, 30)
        draws = fit_ordinal(X, y, K=3, n_trees=2, burnin=5, n_iter=1, seed=1)
        pmf = predict_ordinal(draws, X[:5])
        assert pmf.shape == (1, 5, 3)
        params = OrdinalParams(draws.params["gamma"][0])
        from cloglogbart.ordinal import _query_r
        r = _query_r(draws, X[:5])[0]
        for q in range(5):
            for k in range(1, 4):
                assert pmf[0, q, k - 1] == pytest.approx(
                    ordinal_pmf(params, r[q], k), abs=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        X = rng.random((30, 2))
        y = rng.integers(1, 4, 30)
        draws = fit_ordinal(X, y, K=3, proportional=False, n_trees=2,
                            burnin=10, n_iter=10, seed=2)
        pmf = predict_ordinal(draws, X[:4])
        np.testing.assert_allclose(pmf.sum(axis=2), 1.0, atol=1e-12)
        mean_pmf = pmf.mean(axis=0)
        np.testing.assert_allclose(mean_pmf.sum(axis=1), 1.0, atol=1e-12)

    def test_recovers_known_ph_model(self):
        # data simulated from a PH ordinal model inside the fitted class
        rng = np.random.default_rng(10)
        n = 5000
        X = rng.random((n, 1))
        gamma0 = np.array([-0.3, 0.4])
        r0 = 1.2 * (X[:, 0] - 0.5)
        pmf0 = _ph_pmf_matrix(gamma0, r0)
        u = rng.random(n)
        y = (u[:, None] > np.cumsum(pmf0, axis=1)).sum(axis=1) + 1
        x_star = np.array([[0.5]])
        draws = fit_ordinal(X, y, K=3, n_trees=20, burnin=400, n_iter=400,
                            seed=5, X_query=x_star, record_loglik=False,
                            keep_forests=False)
        pmf_draws = np.stack([
            _ph_pmf_matrix(draws.params["gamma"][s],
                           draws.params["r_query"][s])[0]
            for s in range(draws.n_draws)])
        truth = _ph_pmf_matrix(gamma0, np.array([0.0]))[0]
        mean = pmf_draws.mean(axis=0)
        sd = pmf_draws.std(axis=0)
        assert np.all(np.abs(mean - truth) <= 3 * np.maximum(sd, 0.004))


class TestHeldoutLoglik:
    def test_matches_training_loglik_on_same_points(self):
        rng = np.random.default_rng(6)
        X = rng.random((25, 2))
        y = rng.integers(1, 4, 25)
        draws = fit_ordinal(X, y, K=3, n_trees=2, burnin=10, n_iter=10, seed=3,
                            X_query=X, keep_forests=False)
        ll = heldout_loglik(draws, y)
        np.testing.assert_allclose(ll, draws.loglik, atol=1e-12)


class TestLatentRepresentationInvariant:
    def test_minimum_of_latents_reproduces_pmf(self):
        rng = np.random.default_rng(12)
        gamma = np.array([0.2, -0.4, 0.1])
        r = 0.3
        n = 200_000
        eps = sample_log_gamma(np.ones((n, 3)), 1.0, rng)
        Z = -(gamma[None, :] + r) + eps
        below = Z < 0
        first = np.argmax(below, axis=1)
        y = np.where(below.any(axis=1), first + 1, 4)
        emp = np.bincount(y, minlength=5)[1:] / n
        params = OrdinalParams(gamma)
        want = np.array([ordinal_pmf(params, r, k) for k in (1, 2, 3, 4)])
        mcse = np.sqrt(want * (1 - want) / n)
        assert np.all(np.abs(emp - want) <= 4 * mcse)


class TestGewekeJointInvariance:
    def test_successive_conditional_matches_marginal_conditional(self):
        # alternating [sweep | Y] and [Y | params] must preserve the joint;
        # compare chain moments against fresh prior draws by Geweke z-scores
        from conftest import geweke_pvalue

        n, K, T = 30, 3, 2
        X = np.random.default_rng(0).random((n, 2))
        x_star = X[:1]

        def simulate_y(state, rng):
            pmf = state.pmf_matrix()
            u = rng.random(n)
            return (u[:, None] > np.cumsum(pmf, axis=1)).sum(axis=1) + 1

        def prior_state(rng):
            state = OrdinalState(X, np.ones(n, dtype=int), K, n_trees=T,
                                 warn_unobserved=False)
            state.params.gamma = np.atleast_1d(
                sample_log_gamma(np.ones(K - 1), 1.0, rng))
            state.engine.reset_from_prior(rng)
            return state

        rng = np.random.default_rng(77)
        marginal = []
        for _ in range(8000):
            state = prior_state(rng)
            marginal.append([state.params.gamma[0],
                             float(state.forest.evaluate(x_star)[0])])
        marginal = np.asarray(marginal)

        state = prior_state(rng)
        state.set_outcome(simulate_y(state, rng))
        successive = []
        for _ in range(30_000):
            state.sweep(rng)
            state.set_outcome(simulate_y(state, rng))
            successive.append([state.params.gamma[0],
                               float(state.forest.evaluate(x_star)[0])])
        successive = np.asarray(successive)

        for col in range(2):
            assert geweke_pvalue(marginal[:, col], successive[:, col]) > 0.005
            assert geweke_pvalue(marginal[:, col] ** 2,
                                 successive[:, col] ** 2) > 0.005
