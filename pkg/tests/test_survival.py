import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from cloglogbart.draws import PosteriorDraws
from cloglogbart.errors import DataError, DomainError
from cloglogbart.survival import (HazardGrid, SurvivalData, SurvivalState,
                                  _survival_loglik_rows, fit_survival,
                                  make_bins, survival_function,
                                  survival_loglik, survival_suffstats,
                                  update_lambda)


def single_bin_state(y, delta, X=None, r0=False):
    X = X if X is not None else np.zeros((len(y), 1))
    data = SurvivalData(y=y, delta=delta, X=X)
    return SurvivalState(data, n_trees=1, n_bins=1)


class TestMakeBins:
    def test_eight_points_two_bins_at_median(self):
        grid = make_bins(np.arange(1.0, 9.0), 8)
        assert grid.n_bins == 2
        assert grid.edges[1] == pytest.approx(4.5)
        assert grid.edges[0] == 0.0 and np.isinf(grid.edges[-1])

    def test_default_prior_constants(self):
        grid = make_bins(np.arange(1.0, 9.0), 8)
        assert grid.a_lambda == 1.0 and grid.b_lambda == 1.0

    def test_duplicate_heavy_times_dedup(self):
        times = np.array([1.0] * 50 + [2.0] * 5 + [3.0] * 5)
        grid = make_bins(times, 1000)  # nominal B = 10
        assert np.all(np.diff(grid.edges) > 0)

    def test_default_bin_rule(self):
        for n in (8, 27, 1000, 1001):
            grid = make_bins(np.linspace(0.1, 10.0, 500), n)
            assert grid.n_bins == math.ceil(n ** (1 / 3))

    def test_all_censored_errors(self):
        with pytest.raises(DataError):
            make_bins(np.array([]), 10)

    def test_boundary_times_go_right(self):
        grid = HazardGrid(edges=np.array([0.0, 1.0, 2.0, np.inf]),
                          lam=np.ones(3))
        np.testing.assert_array_equal(grid.bin_index([0.5, 1.0, 1.5, 2.0, 9.0]),
                                      [0, 1, 1, 2, 2])


class TestSurvivalLoglik:
    def test_unit_exponential_at_one(self):
        state = single_bin_state(np.array([1.0]), np.array([1]))
        assert survival_loglik(state, 0) == pytest.approx(-1.0, abs=1e-12)

    def test_censoring_keeps_only_exposure(self):
        state = single_bin_state(np.array([2.0, 2.0]), np.array([1, 0]))
        # delta = 0 drops log lambda + r, leaving -exposure
        assert survival_loglik(state, 1) == pytest.approx(-2.0, abs=1e-12)
        assert survival_loglik(state, 0) == pytest.approx(math.log(1.0) - 2.0, abs=1e-12)

    def test_density_integrates_to_one(self):
        # exp(loglik) with delta = 1 is a density in y at fixed x
        edges = np.array([0.0, 0.8, 1.7, np.inf])
        lam = np.array([0.7, 1.3, 0.5])
        grid = HazardGrid(edges=edges, lam=lam)

        def density(y):
            y = np.atleast_1d(y)
            Z = grid.exposures(y)
            b = grid.bin_index(y)
            ll = _survival_loglik_rows(lam, np.zeros((y.size, 3)), Z, b,
                                       np.ones(y.size, dtype=int))
            return np.exp(ll)

        total, _ = scipy.integrate.quad(lambda t: float(density(t)[0]), 0, 200,
                                        limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)


class TestUpdateLambda:
    def test_no_data_draws_from_prior(self):
        # a bin with no exposure or events keeps its Gam(1,1) prior
        state = single_bin_state(np.array([1e-9]), np.array([1]))
        state.Z[:] = 0.0
        state.data.delta[:] = 0
        update_lambda(state, np.random.default_rng(4))
        expect = np.random.default_rng(4).gamma(np.array([1.0]), 1.0)
        np.testing.assert_array_equal(state.grid.lam, expect)

    def test_single_subject_plugin(self):
        state = single_bin_state(np.array([2.0]), np.array([1]))
        update_lambda(state, np.random.default_rng(9))
        expect = np.random.default_rng(9).gamma(np.array([2.0]), 1.0 / np.array([3.0]))
        np.testing.assert_array_equal(state.grid.lam, expect)

    def test_fixed_r_recovers_analytic_gamma_posterior(self):
        rng = np.random.default_rng(2)
        n = 150
        y = rng.exponential(1.0 / 1.7, n)
        data = SurvivalData(y=y, delta=np.ones(n, dtype=int),
                            X=np.zeros((n, 1)))
        state = SurvivalState(data, n_trees=1, n_bins=1)
        chain = np.random.default_rng(5)
        draws = []
        for it in range(4000):
            state.update_lambda(chain)
            if it >= 200:
                draws.append(state.grid.lam[0])
        draws = np.asarray(draws)
        post_mean = (1.0 + n) / (1.0 + y.sum())
        mcse = draws.std() / math.sqrt(draws.size)  # independent draws here
        assert abs(draws.mean() - post_mean) < 3 * max(mcse, 1e-6)


class TestSurvivalSuffstats:
    def test_censored_only_leaf_has_zero_A(self):
        from cloglogbart.forest import Tree

        X = np.array([[0.1], [0.9]])
        state = single_bin_state(np.array([1.0, 2.0]), np.array([0, 1]), X=X)
        candidate = Tree()
        candidate.grow(0, 0, 0.5)  # left leaf holds only the censored subject
        stats = survival_suffstats(state, 0, candidate)
        np.testing.assert_array_equal(stats.leaf_nodes, [1, 2])
        assert stats.A[0] == 0.0
        assert stats.A[1] == 1.0

    def test_single_subject_plugin(self):
        state = single_bin_state(np.array([2.0]), np.array([1]))
        stats = survival_suffstats(state, 0, state.forest.trees[0])
        np.testing.assert_allclose(stats.A, [1.0])
        np.testing.assert_allclose(stats.B, [2.0])

    def test_single_bin_nph_routes_to_ph(self):
        rng = np.random.default_rng(0)
        n = 40
        X = rng.random((n, 2))
        y = rng.exponential(1.0, n) + 0.01
        delta = (rng.random(n) < 0.8).astype(int)
        ph = fit_survival(X, y, delta, mode="ph", n_trees=2, burnin=10,
                          n_iter=10, seed=3, n_bins=1, keep_forests=False)
        nph = fit_survival(X, y, delta, mode="nph", n_trees=2, burnin=10,
                           n_iter=10, seed=3, n_bins=1, keep_forests=False)
        np.testing.assert_array_equal(ph.params["lambda"], nph.params["lambda"])
        np.testing.assert_array_equal(ph.loglik, nph.loglik)
        assert nph.config["mode"] == "ph"

    def test_nph_pair_stats_collapse_to_ph_for_root_candidate(self):
        rng = np.random.default_rng(1)
        n = 60
        X = rng.random((n, 2))
        y = rng.exponential(1.0, n) + 0.01
        delta = (rng.random(n) < 0.7).astype(int)
        data = SurvivalData(y=y, delta=delta, X=X)
        ph = SurvivalState(data, proportional=True, n_trees=1, n_bins=4)
        nph = SurvivalState(data, proportional=False, n_trees=1, n_bins=4)
        nph.grid.lam = ph.grid.lam.copy()
        s_ph = survival_suffstats(ph, 0, ph.forest.trees[0])
        s_nph = survival_suffstats(nph, 0, nph.forest.trees[0])
        assert s_nph.A.sum() == pytest.approx(s_ph.A.sum())
        assert s_nph.B.sum() == pytest.approx(s_ph.B.sum(), rel=1e-12)


class TestFitSurvival:
    def test_rejects_nonpositive_times(self):
        X = np.zeros((3, 1))
        with pytest.raises(DataError):
            fit_survival(X, np.array([1.0, 0.0, 2.0]), np.array([1, 1, 1]),
                         n_trees=1, burnin=1, n_iter=1)

    def test_invalid_mode(self):
        X = np.zeros((3, 1))
        with pytest.raises(DomainError):
            fit_survival(X, np.ones(3), np.ones(3, dtype=int), mode="cox",
                         n_trees=1, burnin=1, n_iter=1)

    def test_nph_bin_cap(self):
        rng = np.random.default_rng(0)
        n = 20000  # ceil(n^(1/3)) = 28 > 20
        y = rng.exponential(1.0, n) + 1e-6
        data = SurvivalData(y=y, delta=np.ones(n, dtype=int), X=rng.random((n, 1)))
        state = SurvivalState(data, proportional=False, n_trees=1)
        assert state.grid.n_bins <= 20


class TestSurvivalFunction:
    @staticmethod
    def _draws_single_bin(lam_value=1.0):
        return PosteriorDraws(
            kind="survival", config={}, seed=0,
            params={"lambda": np.array([[lam_value]])},
            extras={"edges": [0.0, "inf"], "proportional": True,
                    "n_predictors": 1, "n_cat": 0},
        )

    def test_starts_at_one_and_is_exponential_for_unit_hazard(self):
        draws = self._draws_single_bin(1.0)
        t = np.linspace(0.0, 5.0, 21)
        S = survival_function(draws, np.zeros(1), t, r_draws=np.zeros(1))
        assert S[0, 0] == 1.0
        np.testing.assert_allclose(S[0], np.exp(-t), rtol=1e-12)

    def test_cumulative_hazard_piecewise_linear_with_kinks_at_edges(self):
        draws = PosteriorDraws(
            kind="survival", config={}, seed=0,
            params={"lambda": np.array([[0.5, 2.0, 1.0]])},
            extras={"edges": [0.0, 1.0, 2.0, "inf"], "proportional": True,
                    "n_predictors": 1, "n_cat": 0},
        )
        t = np.linspace(0.0, 4.0, 4001)
        S = survival_function(draws, np.zeros(1), t, r_draws=np.zeros(1))[0]
        assert np.all(np.diff(S) <= 1e-15)
        H = -np.log(S)
        slope = np.diff(H) / np.diff(t)
        np.testing.assert_allclose(slope[t[:-1] < 0.999], 0.5, rtol=1e-6)
        mid = (t[:-1] >= 1.001) & (t[:-1] < 1.999)
        np.testing.assert_allclose(slope[mid], 2.0, rtol=1e-6)
        np.testing.assert_allclose(slope[t[:-1] >= 2.001], 1.0, rtol=1e-6)

    def test_nph_equals_ph_when_r_constant_across_bins(self):
        edges = np.array([0.0, 1.0, 2.5, np.inf])
        lam = np.array([0.4, 1.1, 0.8])
        grid = HazardGrid(edges=edges, lam=lam)
        rng = np.random.default_rng(3)
        y = rng.exponential(1.0, 50) + 0.01
        delta = (rng.random(50) < 0.7).astype(int)
        Z = grid.exposures(y)
        b = grid.bin_index(y)
        r = rng.normal(0, 1, 50)
        R_const = np.repeat(r[:, None], 3, axis=1)
        ll_nph = _survival_loglik_rows(lam, R_const, Z, b, delta)
        exposure_ph = np.exp(r) * (Z @ lam)
        ll_ph = delta * (np.log(lam[b]) + r) - exposure_ph
        np.testing.assert_allclose(ll_nph, ll_ph, rtol=1e-12)


class TestGewekeLambdaInvariance:
    def test_lambda_update_preserves_joint_prior(self):
        # fixed r = 0: alternate data simulation and the conjugate update;
        # the lambda_1 marginal must stay Gam(1, 1)
        from conftest import geweke_pvalue

        edges = np.array([0.0, 0.7, 1.6, np.inf])
        n = 40
        X = np.zeros((n, 1))
        rng = np.random.default_rng(11)

        def simulate_times(lam, rng):
            target = rng.exponential(1.0, n)
            cum = np.concatenate([[0.0], np.cumsum(lam[:-1] * np.diff(edges[:-1]))])
            t = np.empty(n)
            for i in range(n):
                b = int(np.searchsorted(cum, target[i], side="right")) - 1
                b = min(b, lam.size - 1)
                t[i] = edges[b] + (target[i] - cum[b]) / lam[b]
            return t

        lam = rng.gamma(1.0, 1.0, 3)
        chain = []
        for _ in range(20_000):
            y = simulate_times(lam, rng)
            data = SurvivalData(y=y, delta=np.ones(n, dtype=int), X=X)
            state = SurvivalState(data, n_trees=1, edges=edges)
            state.grid.lam = lam
            state.update_lambda(rng)
            lam = state.grid.lam
            chain.append(lam[0])
        prior = rng.gamma(1.0, 1.0, 20_000)
        assert geweke_pvalue(prior, chain) > 0.005
        assert geweke_pvalue(prior**2, np.asarray(chain) ** 2) > 0.005
