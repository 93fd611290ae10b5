"""Stick-breaking mixture for conditional density regression.

Mixture weights come from the cloglog ordinal machinery: treating cluster
labels as ordinal outcomes, weight k is
``{1 - exp(-e^{g_k + r(x,k)})} * prod_{j<k} exp(-e^{g_j + r(x,j)})``,
truncated at K_max with the remainder absorbed into the last weight.  A
second tree ensemble h(x) models the overall location so the components
focus on the residual shape.  Outcomes are standardized before fitting.
"""

from __future__ import annotations

import warnings
import numpy as np
from scipy.special import gammaln

from .draws import PosteriorDraws
from .errors import DomainError, SchemaError
from .forest import (
    Backfitter,
    EXP_CLAMP,
    NormalLeafPrior,
    evaluate_snapshot,
    forest_snapshot,
    make_forest,
)
from .ordinal import OrdinalParams, OrdinalState

_LOG_MH_STEP = 0.3  # random-walk step for log a_sigma


def _stick_weight_matrix(gamma: np.ndarray, R: np.ndarray) -> np.ndarray:
    """(n, K_max) weights from break exponents; rows sum to one exactly."""
    t = np.clip(gamma[None, :] + R, -EXP_CLAMP, EXP_CLAMP)
    surv = np.exp(-np.cumsum(np.exp(t), axis=1))  # prod_{j<=k} exp(-e^{t_j})
    K = gamma.size + 1
    w = np.empty((R.shape[0], K))
    w[:, 0] = 1.0 - surv[:, 0]
    if K > 2:
        w[:, 1 : K - 1] = surv[:, :-1] - surv[:, 1:]
    w[:, K - 1] = 1.0 - w[:, : K - 1].sum(axis=1)
    np.clip(w, 0.0, 1.0, out=w)
    return w


def _log_stick_weight_matrix(gamma: np.ndarray, R: np.ndarray) -> np.ndarray:
    t = np.clip(gamma[None, :] + R, -EXP_CLAMP, EXP_CLAMP)
    e = np.exp(t)
    log_surv = -np.cumsum(e, axis=1)
    # log{1 - exp(-e^t)} stays accurate down to tiny break probabilities
    log_break = np.log(-np.expm1(-e))
    K = gamma.size + 1
    out = np.empty((R.shape[0], K))
    out[:, 0] = log_break[:, 0]
    if K > 2:
        out[:, 1 : K - 1] = log_surv[:, : K - 2] + log_break[:, 1:]
    out[:, K - 1] = log_surv[:, K - 2]
    return out


def stick_weights(stick_params: OrdinalParams, r_values, K_max: int) -> np.ndarray:
    """Truncated stick weights at one point; r_values is a scalar (shared
    across components) or a vector over components 1..K_max-1."""
    if K_max < 1:
        raise DomainError("K_max must be at least 1")
    if K_max == 1:
        return np.ones(1)
    gamma = stick_params.gamma[: K_max - 1]
    r_values = np.asarray(r_values, dtype=float)
    if r_values.ndim == 0:
        R = np.full((1, K_max - 1), float(r_values))
    else:
        if r_values.shape != (K_max - 1,):
            raise SchemaError(f"expected r vector of length {K_max - 1}")
        R = r_values[None, :]
    return _stick_weight_matrix(gamma, R)[0]


class MixtureState:
    """Cluster assignments, component parameters, stick sampler, mean forest,
    and the base-measure hyperparameters."""

    def __init__(self, X, y, *, K_max=25, proportional=False, n_trees=50,
                 w_cat=0.5, mu0=0.0, max_cuts=100, standardize=True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if y.shape[0] != X.shape[0]:
            raise SchemaError("X and y lengths differ")
        if K_max < 1:
            raise DomainError("K_max must be at least 1")
        n = y.shape[0]
        if n < K_max:
            warnings.warn(f"n = {n} below truncation level K_max = {K_max}")
        self.X = X
        if standardize:
            self.y_mean = float(y.mean())
            self.y_sd = float(y.std())
            if self.y_sd == 0.0:
                self.y_sd = 1.0
        else:
            # calibration runs fit on the raw scale so parameters stay comparable
            self.y_mean, self.y_sd = 0.0, 1.0
        self.ys = (y - self.y_mean) / self.y_sd
        self.K_max = int(K_max)
        self.mu0 = float(mu0)

        sigma_mu = 1.0 / np.sqrt(n_trees)
        self.C = np.ones(n, dtype=np.int64)
        # K_max = 1 degenerates to a single component with no stick process
        self.stick = None if K_max == 1 else OrdinalState(
            X, self.C, K_max, proportional=proportional, n_trees=n_trees,
            sigma_mu=sigma_mu, a_gamma=1.0, b_gamma=1.0, w_cat=w_cat,
            max_cuts=max_cuts, warn_unobserved=False)
        self.mean_forest = make_forest(X, n_trees, NormalLeafPrior(sigma_mu),
                                       max_cuts=max_cuts)
        self.mean_engine = Backfitter(self.mean_forest, X)

        self.mu = np.zeros(K_max)
        self.sigma = np.ones(K_max)
        self.sigma0 = 1.0
        self.a_sigma = 2.0  # prior mean of Gam(4, 2)
        self.b_sigma = 2.0

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    def h(self) -> np.ndarray:
        return self.mean_engine.r

    def stick_r_matrix(self) -> np.ndarray:
        return self.stick.r_matrix()

    def weight_matrix(self) -> np.ndarray:
        if self.stick is None:
            return np.ones((self.n, 1))
        return _stick_weight_matrix(self.stick.params.gamma, self.stick_r_matrix())

    # -- Gibbs updates -----------------------------------------------------
    def update_assignments(self, rng: np.random.Generator) -> None:
        if self.stick is None:
            self.C[:] = 1
            return
        logw = _log_stick_weight_matrix(self.stick.params.gamma, self.stick_r_matrix())
        resid = self.ys - self.h()
        z = (resid[:, None] - self.mu[None, :]) / self.sigma[None, :]
        logp = logw - 0.5 * z**2 - np.log(self.sigma)[None, :]
        top = logp.max(axis=1, keepdims=True)
        bad = ~np.isfinite(top[:, 0])
        if bad.any():
            # numerically empty rows: take the most plausible component
            self.C[bad] = np.argmax(logp[bad], axis=1) + 1
        good = ~bad
        p = np.exp(logp[good] - top[good])
        cdf = np.cumsum(p, axis=1)
        u = rng.random(int(good.sum())) * cdf[:, -1]
        self.C[good] = (u[:, None] > cdf).sum(axis=1) + 1
        self.stick.set_outcome(self.C)

    def update_sticks(self, rng: np.random.Generator) -> None:
        """One ordinal sweep on the cluster labels (latents, trees, gamma,
        and split probabilities for the non-proportional variant)."""
        if self.stick is not None:
            self.stick.sweep(rng)

    def update_mean_forest(self, rng: np.random.Generator) -> None:
        prec = 1.0 / self.sigma[self.C - 1] ** 2
        target = self.ys - self.mu[self.C - 1]
        self.mean_engine.set_weights(prec, target)
        self.mean_engine.sweep(rng)

    def update_components(self, rng: np.random.Generator) -> None:
        K = self.K_max
        resid = self.ys - self.h()
        lab = self.C - 1
        n_k = np.bincount(lab, minlength=K).astype(float)
        sum_k = np.bincount(lab, weights=resid, minlength=K)

        tau_k = 1.0 / self.sigma**2
        post_prec = 1.0 / self.sigma0**2 + n_k * tau_k
        post_mean = (self.mu0 / self.sigma0**2 + sum_k * tau_k) / post_prec
        self.mu = post_mean + rng.standard_normal(K) / np.sqrt(post_prec)

        dev = resid - self.mu[lab]
        ss_k = np.bincount(lab, weights=dev**2, minlength=K)
        tau_k = rng.gamma(self.a_sigma + 0.5 * n_k, 1.0 / (self.b_sigma + 0.5 * ss_k))
        self.sigma = 1.0 / np.sqrt(tau_k)

        # sigma0^{-2} ~ Gam(1,1), b_sigma ~ Gam(4,2) conjugate updates
        tau0 = rng.gamma(1.0 + 0.5 * K, 1.0 / (1.0 + 0.5 * np.sum((self.mu - self.mu0) ** 2)))
        self.sigma0 = 1.0 / np.sqrt(tau0)
        self.b_sigma = rng.gamma(4.0 + K * self.a_sigma, 1.0 / (2.0 + np.sum(tau_k)))

        # a_sigma: random-walk Metropolis on the log scale under Gam(4,2)
        def logpost(a):
            return (4.0 * np.log(a) - 2.0 * a  # Gam(4,2) prior + log-scale Jacobian
                    + K * a * np.log(self.b_sigma) - K * gammaln(a)
                    + (a - 1.0) * np.sum(np.log(tau_k)))

        prop = self.a_sigma * np.exp(_LOG_MH_STEP * rng.standard_normal())
        if np.log(rng.random()) < logpost(prop) - logpost(self.a_sigma):
            self.a_sigma = float(prop)

    def sweep(self, rng: np.random.Generator) -> None:
        self.update_assignments(rng)
        self.update_sticks(rng)
        self.update_mean_forest(rng)
        self.update_components(rng)

    # -- derived quantities -------------------------------------------------
    def loglik_rows(self) -> np.ndarray:
        """log f(y_i | x_i) on the original outcome scale."""
        w = self.weight_matrix()
        resid = self.ys - self.h()
        z = (resid[:, None] - self.mu[None, :]) / self.sigma[None, :]
        dens = np.sum(w * np.exp(-0.5 * z**2) / (np.sqrt(2 * np.pi) * self.sigma[None, :]),
                      axis=1)
        return np.log(np.maximum(dens, 1e-300)) - np.log(self.y_sd)


def update_assignments(state: MixtureState, data, rng: np.random.Generator) -> MixtureState:
    state.update_assignments(rng)
    return state


def update_sticks(state: MixtureState, rng: np.random.Generator) -> MixtureState:
    state.update_sticks(rng)
    return state


def update_mean_forest(state: MixtureState, data, rng: np.random.Generator) -> MixtureState:
    state.update_mean_forest(rng)
    return state


def update_components(state: MixtureState, data, rng: np.random.Generator) -> MixtureState:
    state.update_components(rng)
    return state


def fit_density(X, y, *, K_max=25, mode="nph", n_trees=50, burnin=2000,
                n_iter=2000, thin=1, w_cat=0.5, mu0=0.0, seed=0, rng=None,
                X_query=None, record_loglik=True, keep_forests=True,
                standardize=True) -> PosteriorDraws:
    """Fit the stick-breaking conditional density model.

    mode="nph" (default) lets weights re-order across components via category
    splits; "ph" shares one r(x).  Defaults: 2000 burn-in + 2000 kept draws,
    leaf sd 1/sqrt(T) for both forests, K_max = 25, base measure
    mu_k ~ Normal(0, sigma_0^2), sigma_k^{-2} ~ Gam(a_sigma, b_sigma) with
    a_sigma, b_sigma ~ Gam(4,2) and sigma_0^{-2} ~ Gam(1,1).
    """
    if mode not in ("ph", "nph"):
        raise DomainError("mode must be 'ph' or 'nph'")
    if K_max < 2:
        raise DomainError("fit_density needs K_max >= 2")
    state = MixtureState(X, y, K_max=K_max, proportional=(mode == "ph"),
                         n_trees=n_trees, w_cat=w_cat, mu0=mu0,
                         standardize=standardize)
    rng = rng if rng is not None else np.random.default_rng(seed)
    if burnin < 0 or n_iter <= 0 or thin <= 0:
        raise DomainError("burnin >= 0, n_iter > 0, thin > 0 required")
    Xq = None if X_query is None else np.atleast_2d(np.asarray(X_query, dtype=float))
    if Xq is not None and Xq.shape[1] != state.X.shape[1]:
        raise SchemaError("query points do not match the predictor schema")

    n_keep = n_iter // thin
    K = state.K_max
    gamma_draws = np.empty((n_keep, K - 1))
    mu_draws = np.empty((n_keep, K))
    sigma_draws = np.empty((n_keep, K))
    hyper_draws = np.empty((n_keep, 3))  # sigma0, a_sigma, b_sigma
    r_query = h_query = None
    if Xq is not None:
        shape = (n_keep, Xq.shape[0]) if state.stick.proportional else (n_keep, Xq.shape[0], K - 1)
        r_query = np.empty(shape)
        h_query = np.empty((n_keep, Xq.shape[0]))
    loglik = np.empty((n_keep, state.n)) if record_loglik else None
    snaps_r = [] if keep_forests else None
    snaps_h = [] if keep_forests else None

    for _ in range(burnin):
        state.sweep(rng)
    kept = 0
    for it in range(1, n_iter + 1):
        state.sweep(rng)
        if it % thin:
            continue
        gamma_draws[kept] = state.stick.params.gamma
        mu_draws[kept] = state.mu
        sigma_draws[kept] = state.sigma
        hyper_draws[kept] = (state.sigma0, state.a_sigma, state.b_sigma)
        if Xq is not None:
            if state.stick.proportional:
                r_query[kept] = state.stick.forest.evaluate(Xq)
            else:
                for k in range(1, K):
                    r_query[kept, :, k - 1] = state.stick.forest.evaluate(Xq, k)
            h_query[kept] = state.mean_forest.evaluate(Xq)
        if record_loglik:
            loglik[kept] = state.loglik_rows()
        if keep_forests:
            snaps_r.append(forest_snapshot(state.stick.forest))
            snaps_h.append(forest_snapshot(state.mean_forest))
        kept += 1

    params = {"gamma": gamma_draws, "mu": mu_draws, "sigma": sigma_draws,
              "sigma0": hyper_draws[:, 0], "a_sigma": hyper_draws[:, 1],
              "b_sigma": hyper_draws[:, 2]}
    if r_query is not None:
        params["r_query"] = r_query
        params["h_query"] = h_query
    config = {"model": "density", "mode": mode, "K_max": int(K_max),
              "n_trees": int(n_trees), "burnin": int(burnin), "n_iter": int(n_iter),
              "thin": int(thin), "w_cat": float(w_cat), "mu0": float(mu0)}
    extras = {
        "K_max": K,
        "proportional": state.stick.proportional,
        "n_predictors": state.X.shape[1],
        "n_cat": state.stick.forest.n_cat,
        "y_mean": state.y_mean,
        "y_sd": state.y_sd,
    }
    forests = {"r": snaps_r, "h": snaps_h} if keep_forests else None
    return PosteriorDraws(kind="density", config=config, seed=seed, params=params,
                          extras=extras, loglik=loglik, forests=forests)


def _query_density_pieces(draws: PosteriorDraws, x):
    """Per-draw (r(x, .), h(x)) from snapshots for a single point x."""
    if draws.forests is None:
        raise SchemaError("draws carry no forest snapshots; refit with keep_forests=True")
    Xq = np.atleast_2d(np.asarray(x, dtype=float))
    n_pred = draws.extras["n_predictors"]
    if Xq.shape[1] != n_pred:
        raise SchemaError(f"expected {n_pred} predictors, got {Xq.shape[1]}")
    n_cat = draws.extras.get("n_cat", 0)
    K = draws.extras["K_max"]
    S = draws.n_draws
    r = np.empty((S, K - 1))
    h = np.empty(S)
    for s in range(S):
        snap_r = draws.forests["r"][s]
        if n_cat == 0:
            r[s, :] = evaluate_snapshot(snap_r, Xq, None, n_pred, 0)[0]
        else:
            for k in range(1, K):
                r[s, k - 1] = evaluate_snapshot(snap_r, Xq, k, n_pred, n_cat)[0]
        h[s] = evaluate_snapshot(draws.forests["h"][s], Xq, None, n_pred, 0)[0]
    return r, h


def _pieces_for_query(draws: PosteriorDraws, x, query_index):
    if query_index is not None and "r_query" in draws.params:
        r = draws.params["r_query"][:, query_index]
        if r.ndim == 1:
            r = np.repeat(r[:, None], draws.extras["K_max"] - 1, axis=1)
        h = draws.params["h_query"][:, query_index]
        return r, h
    return _query_density_pieces(draws, x)


def conditional_density(draws: PosteriorDraws, x, y_grid, *, query_index=None) -> np.ndarray:
    """Per-draw conditional density f(y | x) on the original outcome scale,
    shape (S, len(y_grid)).  ``query_index`` reuses evaluations recorded at
    fit time instead of walking the snapshotted forests."""
    if draws.kind != "density":
        raise SchemaError(f"expected density draws, got {draws.kind}")
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid.ndim != 1 or np.any(~np.isfinite(y_grid)) or np.any(np.diff(y_grid) < 0):
        raise DomainError("y_grid must be a finite ascending vector")
    r, h = _pieces_for_query(draws, x, query_index)
    gamma = draws.params["gamma"]
    mu, sigma = draws.params["mu"], draws.params["sigma"]
    m, sd = draws.extras["y_mean"], draws.extras["y_sd"]
    z_grid = (y_grid - m) / sd
    S = gamma.shape[0]
    out = np.empty((S, y_grid.size))
    for s in range(S):
        w = _stick_weight_matrix(gamma[s], r[s][None, :])[0]
        zz = (z_grid[:, None] - (mu[s] + h[s])[None, :]) / sigma[s][None, :]
        dens = np.sum(w[None, :] * np.exp(-0.5 * zz**2)
                      / (np.sqrt(2 * np.pi) * sigma[s][None, :]), axis=1)
        out[s] = dens / sd
    return out


def conditional_mean(draws: PosteriorDraws, x, *, query_index=None) -> np.ndarray:
    """Per-draw E(Y | x) on the original scale: m + s * (h(x) + sum_k w_k mu_k)."""
    r, h = _pieces_for_query(draws, x, query_index)
    gamma = draws.params["gamma"]
    mu = draws.params["mu"]
    m, sd = draws.extras["y_mean"], draws.extras["y_sd"]
    S = gamma.shape[0]
    out = np.empty(S)
    for s in range(S):
        w = _stick_weight_matrix(gamma[s], r[s][None, :])[0]
        out[s] = m + sd * (h[s] + float(w @ mu[s]))
    return out


def heldout_loglik(draws: PosteriorDraws, y, *, query_indices=None) -> np.ndarray:
    """(S, n) held-out log density of new outcomes at the recorded query
    points (fit with X_query = held-out predictors)."""
    y = np.asarray(y, dtype=float)
    if "r_query" not in draws.params:
        raise SchemaError("density held-out evaluation needs X_query at fit time")
    if query_indices is None:
        query_indices = np.arange(y.size)
    gamma = draws.params["gamma"]
    mu, sigma = draws.params["mu"], draws.params["sigma"]
    m, sd = draws.extras["y_mean"], draws.extras["y_sd"]
    r_all = draws.params["r_query"]
    h_all = draws.params["h_query"]
    S = gamma.shape[0]
    out = np.empty((S, y.size))
    z = (y - m) / sd
    for s in range(S):
        R = r_all[s][query_indices]
        if R.ndim == 1:
            R = np.repeat(R[:, None], draws.extras["K_max"] - 1, axis=1)
        w = _stick_weight_matrix(gamma[s], R)
        zz = (z[:, None] - (mu[s][None, :] + h_all[s][query_indices, None])) / sigma[s][None, :]
        dens = np.sum(w * np.exp(-0.5 * zz**2) / (np.sqrt(2 * np.pi) * sigma[s][None, :]),
                      axis=1)
        out[s] = np.log(np.maximum(dens, 1e-300)) - np.log(sd)
    return out
