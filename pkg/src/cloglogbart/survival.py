"""Continuous-time proportional and non-proportional hazards models with a
piecewise-exponential baseline.

The baseline hazard is constant on bins 0 = t_0 < t_1 < ... < t_{B-1} < inf
whose interior boundaries sit at equal-proportion quantiles of the
uncensored event times, with B = ceil(n^(1/3)).  lambda_b updates are
conjugate gamma draws; r(x) (or bin-interacted r(x, b)) is a tree ensemble
updated by the shared backfitting kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .draws import PosteriorDraws
from .errors import DataError, DomainError, SchemaError
from .forest import (
    Backfitter,
    EXP_CLAMP,
    LeafStats,
    evaluate_snapshot,
    forest_snapshot,
    make_forest,
)
from .special import solve_leaf_prior

NPH_MAX_BINS = 20  # keep the per-observation O(B_i) cost modest


@dataclass
class SurvivalData:
    """Observed times Y = min(event, censoring), event indicator, predictors."""

    y: np.ndarray
    delta: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.delta = np.asarray(self.delta, dtype=np.int64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.y.shape[0] != self.X.shape[0] or self.delta.shape[0] != self.y.shape[0]:
            raise SchemaError("y, delta, X lengths differ")
        if np.any(self.y <= 0):
            raise DataError("survival times must be strictly positive")
        if not np.all(np.isin(self.delta, [0, 1])):
            raise DataError("status must take values in {0, 1}")


@dataclass
class HazardGrid:
    """Bin edges (t_0 = 0, ..., t_B = inf), heights lambda_b, and their prior."""

    edges: np.ndarray  # length B+1, edges[0] = 0, edges[-1] = inf
    lam: np.ndarray
    a_lambda: float = 1.0
    b_lambda: float = 1.0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.edges[0] != 0.0 or not np.isinf(self.edges[-1]):
            raise DomainError("edges must run from 0 to +inf")
        if np.any(np.diff(self.edges) <= 0):
            raise DomainError("edges must be strictly increasing")
        if self.lam.shape[0] != self.n_bins or np.any(self.lam <= 0):
            raise DomainError("lambda must hold one positive value per bin")
        if not (self.a_lambda > 0 and self.b_lambda > 0):
            raise DomainError("lambda prior parameters must be positive")

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    def bin_index(self, y) -> np.ndarray:
        """0-based bin of each time; values on a boundary go to the right bin."""
        return np.searchsorted(self.edges[1:-1], np.asarray(y, dtype=float), side="right")

    def exposures(self, y) -> np.ndarray:
        """(n, B) time spent in each bin: min(y, t_b) - t_{b-1}, clipped at 0."""
        y = np.asarray(y, dtype=float)
        left = self.edges[:-1][None, :]
        right = self.edges[1:][None, :]
        return np.clip(np.minimum(y[:, None], right) - left, 0.0, None)


def make_bins(uncensored_times, n: int, *, a_lambda: float = 1.0,
              b_lambda: float = 1.0, n_bins=None, max_bins=None) -> HazardGrid:
    """Quantile-based hazard grid: B = ceil(n^(1/3)) bins (unless overridden),
    interior boundaries at equal proportions of the uncensored event times,
    deduplicated; the last bin is open to +inf."""
    times = np.asarray(uncensored_times, dtype=float)
    if times.size == 0:
        raise DataError("no uncensored event times to build bins from")
    B = int(n_bins) if n_bins is not None else int(math.ceil(n ** (1.0 / 3.0)))
    if max_bins is not None:
        B = min(B, int(max_bins))
    B = max(B, 1)
    interior = np.quantile(times, np.arange(1, B) / B)
    interior = np.unique(interior)
    interior = interior[interior > 0]
    edges = np.concatenate([[0.0], interior, [np.inf]])
    return HazardGrid(edges=edges, lam=np.ones(edges.size - 1),
                      a_lambda=a_lambda, b_lambda=b_lambda)


class SurvivalState:
    """Sampler state: hazard grid, forest (bin slot iff non-proportional),
    and the data bindings."""

    def __init__(self, data: SurvivalData, *, proportional=True, n_trees=50,
                 sigma_mu=None, a_lambda=1.0, b_lambda=1.0, n_bins=None,
                 w_cat=0.5, max_cuts=100, edges=None):
        self.data = data
        n = data.y.shape[0]
        self.proportional = bool(proportional)
        self.w_cat = float(w_cat)
        if edges is not None:
            grid = HazardGrid(edges=np.asarray(edges, dtype=float),
                              lam=np.ones(len(edges) - 1),
                              a_lambda=a_lambda, b_lambda=b_lambda)
        else:
            grid = make_bins(data.y[data.delta == 1], n, a_lambda=a_lambda,
                             b_lambda=b_lambda, n_bins=n_bins,
                             max_bins=None if proportional else NPH_MAX_BINS)
        # A single bin makes r(x, b) = r(x); the models and samplers coincide.
        if grid.n_bins == 1:
            self.proportional = True
        self.grid = grid
        self.bin_idx = grid.bin_index(data.y)
        self.Z = grid.exposures(data.y)  # (n, B)

        if sigma_mu is None:
            sigma_mu = 1.5 / np.sqrt(n_trees)
        self.leaf_prior = solve_leaf_prior(sigma_mu)
        B = grid.n_bins
        if self.proportional:
            self.forest = make_forest(data.X, n_trees, self.leaf_prior, max_cuts=max_cuts)
            self.engine = Backfitter(self.forest, data.X)
            self._rows = np.arange(n)
            self._bins = None
        else:
            self.forest = make_forest(data.X, n_trees, self.leaf_prior, n_cat=B,
                                      max_cuts=max_cuts, w_cat=w_cat)
            self._rows = np.repeat(np.arange(n), B)
            self._bins = np.tile(np.arange(1, B + 1), n)
            self.engine = Backfitter(self.forest, data.X[self._rows], self._bins)

    @property
    def n(self) -> int:
        return self.data.y.shape[0]

    def r_matrix(self) -> np.ndarray:
        """(n, B) matrix of r values per bin (columns equal when PH)."""
        B = self.grid.n_bins
        if self.proportional:
            return np.repeat(self.engine.r[:, None], B, axis=1)
        return self.engine.r.reshape(self.n, B)

    # -- Gibbs updates -------------------------------------------------------
    def update_lambda(self, rng: np.random.Generator) -> None:
        g = self.grid
        shape = g.a_lambda + np.bincount(self.bin_idx, weights=self.data.delta,
                                         minlength=g.n_bins)
        er = np.exp(np.clip(self.r_matrix(), -EXP_CLAMP, EXP_CLAMP))
        rate = g.b_lambda + np.sum(self.Z * er, axis=0)
        g.lam = rng.gamma(shape, 1.0 / rate)

    def _set_tree_weights(self) -> None:
        lam = self.grid.lam
        if self.proportional:
            a_units = self.data.delta.astype(float)
            coef = self.Z @ lam
        else:
            B = self.grid.n_bins
            a_units = ((self.bin_idx[self._rows] == self._bins - 1)
                       & (self.data.delta[self._rows] == 1)).astype(float)
            coef = (self.Z * lam[None, :]).reshape(-1)
        self.engine.set_weights(a_units, coef)

    def update_trees(self, rng: np.random.Generator) -> None:
        self._set_tree_weights()
        self.engine.sweep(rng)

    def sweep(self, rng: np.random.Generator) -> None:
        self.update_lambda(rng)
        self.update_trees(rng)
        if not self.proportional:
            self.engine.update_split_probs(self.w_cat, rng)

    # -- derived quantities ----------------------------------------------------
    def suffstats(self, t: int, candidate) -> LeafStats:
        self._set_tree_weights()
        return self.engine.suffstats(t, candidate)

    def loglik_rows(self) -> np.ndarray:
        return _survival_loglik_rows(self.grid.lam, self.r_matrix(), self.Z,
                                     self.bin_idx, self.data.delta)


def _survival_loglik_rows(lam, R, Z, bin_idx, delta) -> np.ndarray:
    """Pointwise log-likelihood: delta*(log lambda_{B_i} + r_i) - exposure."""
    r_own = R[np.arange(R.shape[0]), bin_idx]
    exposure = np.sum(Z * lam[None, :] * np.exp(R), axis=1)
    return delta * (np.log(lam[bin_idx]) + r_own) - exposure


def survival_loglik(state: SurvivalState, i: int) -> float:
    """Log-likelihood contribution of observation i under the current state."""
    return float(state.loglik_rows()[i])


def update_lambda(state: SurvivalState, rng: np.random.Generator) -> SurvivalState:
    state.update_lambda(rng)
    return state


def survival_suffstats(state: SurvivalState, t: int, candidate) -> LeafStats:
    """Leaf statistics of a candidate structure for tree ``t`` given the
    current hazard heights and partial fit."""
    return state.suffstats(t, candidate)


def fit_survival(X, y, delta, *, mode="ph", n_trees=50, burnin=2500, n_iter=2500,
                 thin=1, sigma_mu=None, a_lambda=1.0, b_lambda=1.0, n_bins=None,
                 w_cat=0.5, seed=0, rng=None, X_query=None, record_loglik=True,
                 keep_forests=True, edges=None) -> PosteriorDraws:
    """Fit the piecewise-exponential survival model.

    mode="ph" fits baseline * e^{r(x)}; mode="nph" gives each time bin its
    own r(x, b) (bin count capped at 20).  Defaults: a_lambda = b_lambda = 1,
    B = ceil(n^(1/3)), T = 50 trees, sigma_mu = 1.5/sqrt(T).
    """
    if mode not in ("ph", "nph"):
        raise DomainError("mode must be 'ph' or 'nph'")
    data = SurvivalData(y=y, delta=delta, X=X)
    state = SurvivalState(data, proportional=(mode == "ph"), n_trees=n_trees,
                          sigma_mu=sigma_mu, a_lambda=a_lambda, b_lambda=b_lambda,
                          n_bins=n_bins, w_cat=w_cat, edges=edges)
    rng = rng if rng is not None else np.random.default_rng(seed)
    if burnin < 0 or n_iter <= 0 or thin <= 0:
        raise DomainError("burnin >= 0, n_iter > 0, thin > 0 required")
    Xq = None if X_query is None else np.atleast_2d(np.asarray(X_query, dtype=float))
    if Xq is not None and Xq.shape[1] != data.X.shape[1]:
        raise SchemaError("query points do not match the predictor schema")

    n_keep = n_iter // thin
    B = state.grid.n_bins
    lam_draws = np.empty((n_keep, B))
    r_query = None
    if Xq is not None:
        shape = (n_keep, Xq.shape[0]) if state.proportional else (n_keep, Xq.shape[0], B)
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
        lam_draws[kept] = state.grid.lam
        if Xq is not None:
            if state.proportional:
                r_query[kept] = state.forest.evaluate(Xq)
            else:
                for b in range(1, B + 1):
                    r_query[kept, :, b - 1] = state.forest.evaluate(Xq, b)
        if record_loglik:
            loglik[kept] = state.loglik_rows()
        if keep_forests:
            snaps.append(forest_snapshot(state.forest))
        kept += 1

    params = {"lambda": lam_draws}
    if r_query is not None:
        params["r_query"] = r_query
    config = {"model": "survival", "mode": "ph" if state.proportional else "nph",
              "n_trees": int(n_trees), "burnin": int(burnin), "n_iter": int(n_iter),
              "thin": int(thin), "sigma_mu": float(state.leaf_prior.sigma_mu),
              "a_lambda": float(a_lambda), "b_lambda": float(b_lambda),
              "n_bins": int(B), "w_cat": float(w_cat)}
    extras = {
        "edges": [float(e) for e in state.grid.edges[:-1]] + ["inf"],
        "proportional": state.proportional,
        "n_predictors": data.X.shape[1],
        "n_cat": state.forest.n_cat,
        "leaf_prior": {"a": state.leaf_prior.a, "b": state.leaf_prior.b,
                       "sigma_mu": state.leaf_prior.sigma_mu},
    }
    return PosteriorDraws(kind="survival", config=config, seed=seed, params=params,
                          extras=extras, loglik=loglik,
                          forests={"r": snaps} if keep_forests else None)


def _edges_from_extras(extras) -> np.ndarray:
    edges = [np.inf if e == "inf" else float(e) for e in extras["edges"]]
    return np.asarray(edges + [np.inf]) if not np.isinf(edges[-1]) else np.asarray(edges)


def _grid_exposures(edges: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
    left = edges[:-1][None, :]
    right = edges[1:][None, :]
    return np.clip(np.minimum(t_grid[:, None], right) - left, 0.0, None)


def _query_r_survival(draws: PosteriorDraws, X_query) -> np.ndarray:
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
        for b in range(1, n_cat + 1):
            out[s, :, b - 1] = evaluate_snapshot(snap, Xq, b, n_pred, n_cat)
    return out


def survival_function(draws: PosteriorDraws, x, t_grid, r_draws=None) -> np.ndarray:
    """Per-draw S(t | x) on an ascending time grid: (S, len(t_grid)).

    Beyond the last finite edge the open bin's hazard extrapolates.
    """
    if draws.kind != "survival":
        raise SchemaError(f"expected survival draws, got {draws.kind}")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0) or np.any(t_grid < 0):
        raise DomainError("t_grid must be ascending and nonnegative")
    edges = _edges_from_extras(draws.extras)
    expo = _grid_exposures(edges, t_grid)  # (T, B)
    lam = draws.params["lambda"]
    if r_draws is None:
        r_draws = _query_r_survival(draws, np.atleast_2d(np.asarray(x, dtype=float)))
        r_draws = r_draws[:, 0] if r_draws.ndim == 2 else r_draws[:, 0, :]
    S = lam.shape[0]
    out = np.empty((S, t_grid.size))
    for s in range(S):
        if np.ndim(r_draws[s]) == 0:
            cum = np.exp(float(r_draws[s])) * expo @ lam[s]
        else:
            cum = expo @ (lam[s] * np.exp(np.asarray(r_draws[s])))
        out[s] = np.exp(-cum)
    return out


def heldout_loglik(draws: PosteriorDraws, y, delta, r_query=None, X_query=None) -> np.ndarray:
    """(S, n) held-out log-likelihood of new (y, delta) given per-draw r at
    their predictor points."""
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=np.int64)
    edges = _edges_from_extras(draws.extras)
    grid = HazardGrid(edges=edges, lam=np.ones(edges.size - 1))
    bin_idx = grid.bin_index(y)
    Z = grid.exposures(y)
    if r_query is None:
        if "r_query" in draws.params and X_query is None:
            r_query = draws.params["r_query"]
        else:
            r_query = _query_r_survival(draws, X_query)
    lam = draws.params["lambda"]
    S = lam.shape[0]
    out = np.empty((S, y.size))
    B = grid.n_bins
    for s in range(S):
        R = r_query[s]
        R = np.repeat(np.asarray(R)[:, None], B, axis=1) if np.ndim(R) == 1 else np.asarray(R)
        out[s] = _survival_loglik_rows(lam[s], R, Z, bin_idx, delta)
    return out
