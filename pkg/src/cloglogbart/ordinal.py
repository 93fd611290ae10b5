"""Ordinal regression with the complementary log-log link, proportional and
fully nonparametric variants, plus the binary special case.

The continuation-ratio form Pr(Y=k | Y>=k, x) = 1 - exp(-e^{gamma_k + r})
coincides with the cumulative model through c_k = log sum_{j<=k} e^{gamma_j},
so cutpoints need no ordering constraints.  Inference augments one truncated
exponential Z_i in (0,1) per observation with Y_i < K and cycles
latents -> trees -> gamma (-> split probabilities when non-proportional).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .draws import PosteriorDraws
from .errors import DomainError, SchemaError
from .forest import (
    Backfitter,
    EXP_CLAMP,
    LeafStats,
    forest_snapshot,
    evaluate_snapshot,
    make_forest,
)
from .special import (_log_gamma_draw, _trunc_exp_ppf, sample_log_gamma,
                      solve_leaf_prior)

logger = logging.getLogger(__name__)

_PMF_CLAMP = 700.0  # keep exp(c + r) finite; exp(-e^700) underflows to 0 cleanly


@dataclass
class OrdinalParams:
    """Continuation-ratio intercepts gamma_1..gamma_{K-1} and their prior."""

    gamma: np.ndarray
    a_gamma: float = 1.0
    b_gamma: float = 1.0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.ndim != 1 or not np.all(np.isfinite(self.gamma)):
            raise DomainError("gamma must be a finite vector")
        if not (self.a_gamma > 0 and self.b_gamma > 0):
            raise DomainError("gamma prior parameters must be positive")


def cutpoints_from_gamma(gamma) -> np.ndarray:
    """c_k = log sum_{j<=k} e^{gamma_j}; strictly increasing."""
    gamma = np.asarray(gamma, dtype=float)
    return np.logaddexp.accumulate(gamma)


def _finish_pmf(surv: np.ndarray, K: int) -> np.ndarray:
    """Differences of survival columns; the last category is the complement
    of the rest, so each row sums to one exactly."""
    pmf = np.empty((surv.shape[0], K))
    pmf[:, 0] = 1.0 - surv[:, 0]
    if K > 2:
        pmf[:, 1 : K - 1] = surv[:, :-1] - surv[:, 1:]
    pmf[:, K - 1] = np.clip(1.0 - pmf[:, : K - 1].sum(axis=1), 0.0, 1.0)
    return pmf


def _ph_pmf_matrix(gamma: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Cumulative-form pmf rows for scalar-per-observation r."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    c = cutpoints_from_gamma(gamma)
    t = np.clip(c[None, :] + r[:, None], -_PMF_CLAMP, _PMF_CLAMP)
    surv = np.exp(-np.exp(t))  # Pr(Y > k | x) at k = 1..K-1
    return _finish_pmf(surv, gamma.size + 1)


def _nph_pmf_matrix(gamma: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Continuation-product pmf rows for per-category R (n, K-1)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    t = np.clip(gamma[None, :] + R, -_PMF_CLAMP, _PMF_CLAMP)
    surv = np.exp(-np.cumsum(np.exp(t), axis=1))
    return _finish_pmf(surv, gamma.size + 1)


def ordinal_pmf(params: OrdinalParams, r_values, k: int) -> float:
    """Pr(Y = k) for one observation; r_values scalar (proportional) or a
    vector over categories 1..K-1 (non-proportional)."""
    K = params.gamma.size + 1
    if not 1 <= k <= K:
        raise DomainError(f"k must lie in 1..{K}, got {k}")
    r_values = np.asarray(r_values, dtype=float)
    if r_values.ndim == 0:
        pmf = _ph_pmf_matrix(params.gamma, r_values[None])
    else:
        if r_values.shape != (K - 1,):
            raise SchemaError(f"expected r vector of length {K - 1}")
        pmf = _nph_pmf_matrix(params.gamma, r_values[None, :])
    return float(pmf[0, k - 1])


class OrdinalState:
    """Mutable sampler state: gamma, latent Z, forest, and data bindings.

    ``proportional=True`` fits a single r(x); otherwise the forest carries a
    category slot and fits r(x, k).  ``augment_zeros`` (binary only, K=2)
    augments a TExp(rate, 1, inf) latent for failures instead of the
    closed-form unit exposure.
    """

    def __init__(self, X, y, K, *, proportional=True, n_trees=50, sigma_mu=None,
                 a_gamma=1.0, b_gamma=1.0, w_cat=0.5, max_cuts=100,
                 augment_zeros=False, warn_unobserved=True, _b_scale=1.0):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise SchemaError("X and y lengths differ")
        if K < 2:
            raise DomainError("K must be at least 2")
        yi = y.astype(np.int64)
        if not np.array_equal(yi, np.asarray(y, dtype=float)) or yi.min() < 1 or yi.max() > K:
            raise DomainError(f"outcome must be integers in 1..{K}")
        if augment_zeros and K != 2:
            raise DomainError("augment_zeros applies to the binary model only")
        observed = np.bincount(yi, minlength=K + 1)[1 : K + 1]
        if warn_unobserved and np.any(observed == 0):
            missing = np.flatnonzero(observed == 0) + 1
            logger.warning("unobserved outcome categories %s; their gamma is prior-driven",
                           missing.tolist())

        self.X = X
        self.y = yi
        self.K = int(K)
        self.proportional = bool(proportional)
        self.augment_zeros = bool(augment_zeros)
        self.w_cat = float(w_cat)
        self._b_scale = float(_b_scale)  # testing hook: scales B accumulations

        if sigma_mu is None:
            sigma_mu = 1.5 / np.sqrt(n_trees)
        self.leaf_prior = solve_leaf_prior(sigma_mu)
        n = X.shape[0]
        if proportional:
            self.forest = make_forest(X, n_trees, self.leaf_prior, max_cuts=max_cuts)
            self.engine = Backfitter(self.forest, X)
            self._rows = np.arange(n)
            self._cats = None
        else:
            self.forest = make_forest(X, n_trees, self.leaf_prior, n_cat=K - 1,
                                      max_cuts=max_cuts, w_cat=w_cat)
            self._rows = np.repeat(np.arange(n), K - 1)
            self._cats = np.tile(np.arange(1, K), n)
            self.engine = Backfitter(self.forest, X[self._rows], self._cats)
        self.params = OrdinalParams(np.zeros(K - 1), a_gamma, b_gamma)
        self.Z = np.full(n, 0.5)

    # -- convenience views ---------------------------------------------------
    @property
    def n(self) -> int:
        return self.X.shape[0]

    def r_obs(self) -> np.ndarray:
        """r(X_i) for proportional fits; r(X_i, Y_i) otherwise (latent rates)."""
        if self.proportional:
            return self.engine.r
        R = self.engine.r.reshape(self.n, self.K - 1)
        k = np.minimum(self.y, self.K - 1) - 1
        return R[np.arange(self.n), k]

    def r_matrix(self) -> np.ndarray:
        """(n, K-1) matrix of r values per category (columns equal when PH)."""
        if self.proportional:
            return np.repeat(self.engine.r[:, None], self.K - 1, axis=1)
        return self.engine.r.reshape(self.n, self.K - 1)

    def set_outcome(self, y_new) -> None:
        """Rebind the outcome (used when the ordinal sampler drives mixture
        allocations); forest and gamma state carry over."""
        yi = np.asarray(y_new, dtype=np.int64)
        if yi.shape != self.y.shape or yi.min() < 1 or yi.max() > self.K:
            raise DomainError(f"outcome must be integers in 1..{self.K}")
        self.y = yi

    # -- Gibbs updates ---------------------------------------------------------
    def update_latents(self, rng: np.random.Generator) -> None:
        has_latent = self.y < self.K
        gam = self.params.gamma
        k = np.minimum(self.y, self.K - 1) - 1
        rate = np.exp(np.clip(gam[k] + self.r_obs(), -EXP_CLAMP, EXP_CLAMP))
        if self.augment_zeros:
            u = rng.random(self.n)
            self.Z = np.where(
                has_latent,
                _trunc_exp_ppf(rate, 0.0, 1.0, u),
                _trunc_exp_ppf(rate, 1.0, np.inf, u),
            )
        else:
            u = rng.random(int(has_latent.sum()))
            z = np.full(self.n, 1.0)
            z[has_latent] = _trunc_exp_ppf(rate[has_latent], 0.0, 1.0, u)
            self.Z = z

    def _set_tree_weights(self) -> None:
        gam = self.params.gamma
        eg = np.exp(np.clip(gam, -EXP_CLAMP, EXP_CLAMP))
        if self.proportional:
            if self.augment_zeros:
                a_units = np.ones(self.n)
                coef = self.Z * eg[0]
            else:
                has_latent = self.y < self.K
                prev = np.concatenate([[0.0], np.cumsum(eg)])
                coef = prev[self.y - 1].copy()
                k = np.minimum(self.y, self.K - 1) - 1
                coef[has_latent] += self.Z[has_latent] * eg[k[has_latent]]
                a_units = has_latent.astype(float)
        else:
            y_row = self.y[self._rows]
            j = self._cats
            z_pair = np.where(y_row > j, 1.0, np.where(y_row == j, self.Z[self._rows], 0.0))
            coef = z_pair * eg[j - 1]
            a_units = (y_row == j).astype(float)
        self.engine.set_weights(a_units, coef * self._b_scale)

    def update_trees(self, rng: np.random.Generator) -> None:
        self._set_tree_weights()
        self.engine.sweep(rng)

    def update_gamma(self, rng: np.random.Generator) -> None:
        Km1 = self.K - 1
        A = np.bincount(self.y - 1, minlength=self.K)[:Km1].astype(float)
        if self.augment_zeros:
            er = np.exp(np.clip(self.engine.r, -EXP_CLAMP, EXP_CLAMP))
            A = np.array([float(self.n)])
            B = np.array([float(np.sum(self.Z * er))])
        elif self.proportional:
            er = np.exp(np.clip(self.engine.r, -EXP_CLAMP, EXP_CLAMP))
            has_latent = self.y < self.K
            own = np.bincount(self.y[has_latent] - 1,
                              weights=self.Z[has_latent] * er[has_latent],
                              minlength=self.K)[:Km1]
            by_level = np.bincount(self.y - 1, weights=er, minlength=self.K)
            tail = np.cumsum(by_level[::-1])[::-1]  # tail[j] = sum over y-1 >= j
            B = own + tail[1:]
        else:
            er = np.exp(np.clip(self.engine.r, -EXP_CLAMP, EXP_CLAMP))
            y_row = self.y[self._rows]
            j = self._cats
            z_pair = np.where(y_row > j, 1.0, np.where(y_row == j, self.Z[self._rows], 0.0))
            B = np.bincount(j - 1, weights=z_pair * er, minlength=Km1)
        gam = _log_gamma_draw(self.params.a_gamma + np.asarray(A, dtype=float),
                              self.params.b_gamma + B, rng)
        self.params.gamma = np.atleast_1d(gam)

    def sweep(self, rng: np.random.Generator) -> None:
        self.update_latents(rng)
        self.update_trees(rng)
        self.update_gamma(rng)
        if not self.proportional:
            self.engine.update_split_probs(self.w_cat, rng)

    # -- derived quantities ------------------------------------------------
    def suffstats(self, t: int, candidate) -> LeafStats:
        self._set_tree_weights()
        return self.engine.suffstats(t, candidate)

    def pmf_matrix(self) -> np.ndarray:
        if self.proportional:
            return _ph_pmf_matrix(self.params.gamma, self.engine.r)
        return _nph_pmf_matrix(self.params.gamma, self.r_matrix())

    def loglik_row(self) -> np.ndarray:
        pmf = self.pmf_matrix()
        p = pmf[np.arange(self.n), self.y - 1]
        return np.log(np.maximum(p, 1e-300))


def update_latents(state: OrdinalState, rng: np.random.Generator) -> OrdinalState:
    state.update_latents(rng)
    return state


def update_gamma(state: OrdinalState, rng: np.random.Generator) -> OrdinalState:
    state.update_gamma(rng)
    return state


def ordinal_suffstats(state: OrdinalState, t: int, candidate) -> LeafStats:
    """Leaf statistics of a candidate structure for tree ``t`` given the
    current latents, gamma, and partial fit."""
    return state.suffstats(t, candidate)


def _resolve_rng(seed, rng):
    if rng is not None:
        return rng
    return np.random.default_rng(seed)


def _run_ordinal(state: OrdinalState, *, kind: str, burnin: int, n_iter: int,
                 thin: int, rng: np.random.Generator, X_query, record_loglik: bool,
                 keep_forests: bool, config: dict, seed, extras: dict) -> PosteriorDraws:
    if burnin < 0 or n_iter <= 0 or thin <= 0:
        raise DomainError("burnin >= 0, n_iter > 0, thin > 0 required")
    Xq = None if X_query is None else np.atleast_2d(np.asarray(X_query, dtype=float))
    if Xq is not None and Xq.shape[1] != state.X.shape[1]:
        raise SchemaError("query points do not match the predictor schema")
    n_keep = n_iter // thin
    Km1 = state.K - 1

    gamma_draws = np.empty((n_keep, Km1))
    r_query = None
    if Xq is not None:
        shape = (n_keep, Xq.shape[0]) if state.proportional else (n_keep, Xq.shape[0], Km1)
        r_query = np.empty(shape)
    loglik = np.empty((n_keep, state.n)) if record_loglik else None
    snaps = [] if keep_forests else None

    for _ in range(burnin):
        state.sweep(rng)
    kept = 0
    for it in range(1, n_iter + 1):
        state.sweep(rng)
        if it % thin:
            continue
        gamma_draws[kept] = state.params.gamma
        if Xq is not None:
            if state.proportional:
                r_query[kept] = state.forest.evaluate(Xq)
            else:
                for k in range(1, state.K):
                    r_query[kept, :, k - 1] = state.forest.evaluate(Xq, k)
        if record_loglik:
            loglik[kept] = state.loglik_row()
        if keep_forests:
            snaps.append(forest_snapshot(state.forest))
        kept += 1

    params = {"gamma": gamma_draws}
    if r_query is not None:
        params["r_query"] = r_query
    extras = dict(extras)
    extras.update({
        "K": state.K,
        "proportional": state.proportional,
        "n_predictors": state.X.shape[1],
        "n_cat": state.forest.n_cat,
        "leaf_prior": {"a": state.leaf_prior.a, "b": state.leaf_prior.b,
                       "sigma_mu": state.leaf_prior.sigma_mu},
    })
    return PosteriorDraws(
        kind=kind, config=config, seed=seed, params=params, extras=extras,
        loglik=loglik, forests={"r": snaps} if keep_forests else None,
    )


def fit_ordinal(X, y, *, K=None, proportional=True, n_trees=50, burnin=2500,
                n_iter=2500, thin=1, sigma_mu=None, a_gamma=1.0, b_gamma=1.0,
                w_cat=0.5, seed=0, rng=None, X_query=None, record_loglik=True,
                keep_forests=True, _b_scale=1.0) -> PosteriorDraws:
    """Fit the cloglog ordinal model (proportional variant by default).

    Defaults: T = 50 trees, 2500 burn-in + 2500 kept draws, leaf scale
    sigma_mu = 1.5/sqrt(T), log Gam(1,1) priors on each gamma_j.
    """
    y = np.asarray(y, dtype=np.int64)
    if K is None:
        K = int(y.max())
    state = OrdinalState(X, y, K, proportional=proportional, n_trees=n_trees,
                         sigma_mu=sigma_mu, a_gamma=a_gamma, b_gamma=b_gamma,
                         w_cat=w_cat, _b_scale=_b_scale)
    rng = _resolve_rng(seed, rng)
    config = {"model": "ordinal", "K": int(K), "proportional": bool(proportional),
              "n_trees": int(n_trees), "burnin": int(burnin), "n_iter": int(n_iter),
              "thin": int(thin), "sigma_mu": float(state.leaf_prior.sigma_mu),
              "a_gamma": float(a_gamma), "b_gamma": float(b_gamma), "w_cat": float(w_cat)}
    return _run_ordinal(state, kind="ordinal", burnin=burnin, n_iter=n_iter,
                        thin=thin, rng=rng, X_query=X_query,
                        record_loglik=record_loglik, keep_forests=keep_forests,
                        config=config, seed=seed, extras={})


def fit_binary(X, y, *, link="cloglog", augment_zeros=False, n_trees=50,
               burnin=2500, n_iter=2500, thin=1, sigma_mu=None, a_gamma=1.0,
               b_gamma=1.0, seed=0, rng=None, X_query=None, record_loglik=True,
               keep_forests=True) -> PosteriorDraws:
    """Binary regression with the cloglog link, p(x) = 1 - exp(-e^{g1 + r(x)}).

    This is the K = 2 ordinal code path with successes as category 1.  The
    log-log link recodes successes and failures and reports the complement.
    ``augment_zeros`` switches failures from the closed-form unit exposure to
    an explicit TExp(rate, 1, inf) latent; both target the same posterior.
    """
    y = np.asarray(y)
    vals = np.unique(y)
    if not np.all(np.isin(vals, [0, 1])):
        raise DomainError("binary outcome must take values in {0, 1}")
    if link not in ("cloglog", "loglog"):
        raise DomainError("link must be 'cloglog' or 'loglog'")
    yb = y.astype(np.int64)
    if link == "loglog":
        yb = 1 - yb
    y_ord = np.where(yb == 1, 1, 2)
    state = OrdinalState(X, y_ord, 2, proportional=True, n_trees=n_trees,
                         sigma_mu=sigma_mu, a_gamma=a_gamma, b_gamma=b_gamma,
                         augment_zeros=augment_zeros)
    rng = _resolve_rng(seed, rng)
    config = {"model": "binary", "link": link, "augment_zeros": bool(augment_zeros),
              "n_trees": int(n_trees), "burnin": int(burnin), "n_iter": int(n_iter),
              "thin": int(thin), "sigma_mu": float(state.leaf_prior.sigma_mu),
              "a_gamma": float(a_gamma), "b_gamma": float(b_gamma)}
    return _run_ordinal(state, kind="binary", burnin=burnin, n_iter=n_iter,
                        thin=thin, rng=rng, X_query=X_query,
                        record_loglik=record_loglik, keep_forests=keep_forests,
                        config=config, seed=seed, extras={"link": link})


def _query_r(draws: PosteriorDraws, X_query: np.ndarray) -> np.ndarray:
    """Per-draw r at new points from forest snapshots: (S, Q) or (S, Q, K-1)."""
    if draws.forests is None or "r" not in draws.forests:
        raise SchemaError("draws carry no forest snapshots; refit with keep_forests=True")
    Xq = np.atleast_2d(np.asarray(X_query, dtype=float))
    n_pred = draws.extras["n_predictors"]
    if Xq.shape[1] != n_pred:
        raise SchemaError(f"expected {n_pred} predictors, got {Xq.shape[1]}")
    n_cat = draws.extras.get("n_cat", 0)
    snaps = draws.forests["r"]
    if n_cat == 0:
        out = np.empty((len(snaps), Xq.shape[0]))
        for s, snap in enumerate(snaps):
            out[s] = evaluate_snapshot(snap, Xq, None, n_pred, 0)
        return out
    out = np.empty((len(snaps), Xq.shape[0], n_cat))
    for s, snap in enumerate(snaps):
        for k in range(1, n_cat + 1):
            out[s, :, k - 1] = evaluate_snapshot(snap, Xq, k, n_pred, n_cat)
    return out


def predict_ordinal(draws: PosteriorDraws, X_query) -> np.ndarray:
    """Per-draw pmf array (S, Q, K) at the query points; rows sum to one."""
    if draws.kind not in ("ordinal", "binary"):
        raise SchemaError(f"expected ordinal/binary draws, got {draws.kind}")
    gamma = draws.params["gamma"]
    K = draws.extras["K"]
    r = _query_r(draws, X_query)
    S, Q = r.shape[0], r.shape[1]
    out = np.empty((S, Q, K))
    for s in range(S):
        if r.ndim == 2:
            out[s] = _ph_pmf_matrix(gamma[s], r[s])
        else:
            out[s] = _nph_pmf_matrix(gamma[s], r[s])
    return out


def predict_binary(draws: PosteriorDraws, X_query) -> np.ndarray:
    """Per-draw success probabilities (S, Q) under the fitted link."""
    if draws.kind != "binary":
        raise SchemaError(f"expected binary draws, got {draws.kind}")
    pmf = predict_ordinal(draws, X_query)
    p = pmf[:, :, 0]
    if draws.extras.get("link") == "loglog":
        return 1.0 - p
    return p


def heldout_loglik(draws: PosteriorDraws, y, r_query=None, X_query=None) -> np.ndarray:
    """(S, n) log-likelihood of new ordinal/binary outcomes given per-draw r
    at their predictor points (recorded r_query or snapshot evaluation)."""
    if r_query is None:
        if "r_query" in draws.params and X_query is None:
            r_query = draws.params["r_query"]
        else:
            r_query = _query_r(draws, X_query)
    gamma = draws.params["gamma"]
    y = np.asarray(y, dtype=np.int64)
    if draws.kind == "binary":
        yb = y.copy()
        if draws.extras.get("link") == "loglog":
            yb = 1 - yb
        y_ord = np.where(yb == 1, 1, 2)
    else:
        y_ord = y
    S = gamma.shape[0]
    out = np.empty((S, y_ord.size))
    idx = np.arange(y_ord.size)
    for s in range(S):
        if r_query.ndim == 2:
            pmf = _ph_pmf_matrix(gamma[s], r_query[s])
        else:
            pmf = _nph_pmf_matrix(gamma[s], r_query[s])
        out[s] = np.log(np.maximum(pmf[idx, y_ord - 1], 1e-300))
    return out
