"""Executable oracles for the package's core identities.

Every oracle reimplements its target quantity independently of the sampler
code paths (quadrature instead of gamma-function algebra, Monte Carlo
simulation instead of closed-form pmfs) and is deterministic given a seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln
from scipy.stats import chisquare, kstest

from .errors import ConvergenceError, DomainError
from .forest import NormalLeafPrior
from .ordinal import OrdinalParams, fit_ordinal, ordinal_pmf
from .special import sample_log_gamma

SBC_BINS = 20
SBC_THINNED_DRAWS = 100


def oracle_integrated_marginal(a: float, b: float, A: int, B: float) -> float:
    """log of b^a/Gamma(a) * integral exp((a+A)mu - (b+B)e^mu) dmu by adaptive
    quadrature (normalized at the integrand's peak), independent of the
    gamma-function form used by the tree sampler.

    The integration window is [-40, 40] widened on the left for small shapes,
    where the e^{s*mu} tail still carries mass beyond -40.
    """
    if not (a > 0 and b > 0) or A < 0 or B < 0:
        raise DomainError("requires a, b > 0 and A, B >= 0")
    s = a + float(A)
    c = b + float(B)
    mu_star = math.log(s / c)
    g_star = s * mu_star - s  # g(mu*) with g(mu) = s*mu - c*e^mu

    def f(mu):
        return np.exp(s * mu - c * np.exp(mu) - g_star)

    lo = min(-40.0, mu_star - 60.0 / s)
    hi = max(40.0, mu_star + 40.0)
    val, err = integrate.quad(f, lo, hi, points=[mu_star], limit=400,
                              epsabs=1e-12, epsrel=1e-12)
    if not np.isfinite(val) or val <= 0 or err > 1e-8 * val:
        raise ConvergenceError(f"quadrature failed for (a={a}, b={b}, A={A}, B={B})")
    return a * math.log(b) - float(gammaln(a)) + g_star + math.log(val)


def check_link_equivalence(gamma, r_scalar: float, K: int) -> float:
    """Max abs difference over k between the continuation product form and
    the cumulative-difference form with c_k = cutpoints_from_gamma."""
    if K < 2:
        raise DomainError("K must be at least 2")
    gamma = np.asarray(gamma, dtype=float)[: K - 1]
    params = OrdinalParams(gamma)
    # cumulative form via the shared pmf op (scalar r selects it)
    cumulative = np.array([ordinal_pmf(params, r_scalar, k) for k in range(1, K + 1)])
    # product form written out directly from the stop probabilities
    t = np.clip(gamma + r_scalar, -700.0, 700.0)
    G = -np.expm1(-np.exp(t))
    product = np.empty(K)
    surv = 1.0
    for k in range(K - 1):
        product[k] = surv * G[k]
        surv *= 1.0 - G[k]
    product[K - 1] = surv
    return float(np.max(np.abs(cumulative - product)))


@dataclass
class KsReport:
    """One-sample Kolmogorov-Smirnov check against an analytic CDF."""

    target: str
    statistic: float
    pvalue: float
    n_samples: int

    def passed(self, p_threshold: float = 0.01) -> bool:
        return self.pvalue > p_threshold


def check_dp_property(r: float, n_samples: int, rng: np.random.Generator | None = None,
                      seed: int = 0) -> KsReport:
    """Dirichlet-process connection: with gamma ~ log Gam(1,1) the surviving
    stick fraction exp(-e^{gamma+r}) is Beta(e^{-r}, 1); KS-test it against
    the analytic CDF u^{e^{-r}}."""
    if n_samples < 10_000:
        raise DomainError("n_samples must be at least 10^4")
    rng = rng if rng is not None else np.random.default_rng(seed)
    gam = sample_log_gamma(np.ones(n_samples), 1.0, rng)
    surviving = np.exp(-np.exp(np.clip(gam + r, -700.0, 700.0)))
    alpha = math.exp(-r)
    stat, pvalue = kstest(surviving, lambda u: np.power(u, alpha))
    return KsReport(target=f"Beta({alpha:.6g}, 1)", statistic=float(stat),
                    pvalue=float(pvalue), n_samples=n_samples)


@dataclass
class LatentReport:
    """Monte Carlo check of the minimum-of-latents representation."""

    max_mcse_ratio: float
    empirical: np.ndarray
    expected: np.ndarray
    n_samples: int

    def passed(self, max_sigmas: float = 4.0) -> bool:
        return self.max_mcse_ratio <= max_sigmas


def check_latent_representation(gamma, r: float, n_samples: int,
                                rng: np.random.Generator | None = None,
                                seed: int = 0) -> LatentReport:
    """Simulate Z_k = -(gamma_k + r) + log Gam(1,1) noise, set Y to the first
    k with Z_k < 0 (Y = K when none), and compare the empirical pmf with the
    analytic one in Monte Carlo standard errors."""
    if n_samples < 10_000:
        raise DomainError("n_samples must be at least 10^4")
    rng = rng if rng is not None else np.random.default_rng(seed)
    gamma = np.clip(np.asarray(gamma, dtype=float), -30.0, 30.0)
    Km1 = gamma.size
    K = Km1 + 1
    eps = sample_log_gamma(np.ones((n_samples, Km1)), 1.0, rng)
    Z = -(gamma[None, :] + r) + eps
    below = Z < 0
    first = np.argmax(below, axis=1)
    y = np.where(below.any(axis=1), first + 1, K)
    counts = np.bincount(y, minlength=K + 1)[1:]
    empirical = counts / n_samples
    params = OrdinalParams(gamma)
    expected = np.array([ordinal_pmf(params, float(r), k) for k in range(1, K + 1)])
    mcse = np.sqrt(expected * (1.0 - expected) / n_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(empirical - expected) / mcse
    ratio = np.where(mcse == 0.0, np.where(empirical == expected, 0.0, np.inf), ratio)
    return LatentReport(max_mcse_ratio=float(np.max(ratio)), empirical=empirical,
                        expected=expected, n_samples=n_samples)


# ---------------------------------------------------------------------------
# Simulation-based calibration
# ---------------------------------------------------------------------------


@dataclass
class SbcReport:
    """Rank-uniformity report for one monitored quantity."""

    parameter: str
    histogram: np.ndarray
    chi2: float
    pvalue: float
    replications: int
    n_bins: int = SBC_BINS
    flagged: int = 0

    def passed(self, p_threshold: float = 0.005) -> bool:
        return self.pvalue > p_threshold


def _rank_chi2(ranks: np.ndarray, n_levels: int) -> tuple[np.ndarray, float, float]:
    bins = (ranks * SBC_BINS) // n_levels
    hist = np.bincount(bins, minlength=SBC_BINS).astype(float)
    per_bin = np.bincount(np.arange(n_levels) * SBC_BINS // n_levels, minlength=SBC_BINS)
    expected = ranks.size * per_bin / n_levels
    chi2, pvalue = chisquare(hist, expected)
    return hist, float(chi2), float(pvalue)


def _simulate_ordinal_outcome(gamma, r, rng) -> np.ndarray:
    from .ordinal import _ph_pmf_matrix

    pmf = _ph_pmf_matrix(np.asarray(gamma, dtype=float), np.asarray(r, dtype=float))
    cdf = np.cumsum(pmf, axis=1)
    u = rng.random(pmf.shape[0]) * cdf[:, -1]
    return (u[:, None] > cdf).sum(axis=1) + 1


def _sbc_ordinal(cfg: dict, replications: int, rng: np.random.Generator,
                 corrupt: bool) -> dict:
    from .forest import make_forest, sample_forest_from_prior
    from .special import solve_leaf_prior

    n = cfg.get("n", 100)
    P = cfg.get("P", 2)
    K = cfg.get("K", 3)
    T = cfg.get("n_trees", 10)
    burnin = cfg.get("burnin", 500)
    n_iter = cfg.get("n_iter", 500)
    thin = max(1, n_iter // SBC_THINNED_DRAWS)
    X = np.random.default_rng(cfg.get("x_seed", 12345)).random((n, P))
    x_star = X[0]
    prior = solve_leaf_prior(1.5 / np.sqrt(T))

    ranks = {"gamma1": [], "r_star": []}
    flagged = 0
    for _ in range(replications):
        child = np.random.default_rng(rng.integers(2**63))
        gamma0 = np.atleast_1d(sample_log_gamma(np.ones(K - 1), 1.0, child))
        schema = make_forest(X, T, prior)
        sample_forest_from_prior(schema, child)
        r0 = schema.evaluate(X)
        r_star0 = float(schema.evaluate(x_star[None, :])[0])
        y = _simulate_ordinal_outcome(gamma0, r0, child)
        try:
            draws = fit_ordinal(X, y, K=K, n_trees=T, burnin=burnin, n_iter=n_iter,
                                thin=thin, rng=child, X_query=x_star[None, :],
                                record_loglik=False, keep_forests=False,
                                _b_scale=0.5 if corrupt else 1.0)
        except Exception:  # noqa: BLE001 - a failed fit is a flagged replication
            flagged += 1
            continue
        ranks["gamma1"].append(int(np.sum(draws.params["gamma"][:, 0] < gamma0[0])))
        ranks["r_star"].append(int(np.sum(draws.params["r_query"][:, 0] < r_star0)))
    return {"ranks": ranks, "n_levels": (n_iter // thin) + 1, "flagged": flagged}


def _simulate_piecewise_exponential(edges, rates, rng) -> np.ndarray:
    """Event times with piecewise-constant hazard ``rates`` per row on bins
    with boundaries ``edges`` (last bin open)."""
    n, B = rates.shape
    target = rng.exponential(1.0, n)
    widths = np.diff(edges[:-1])
    t = np.empty(n)
    for i in range(n):
        acc = 0.0
        for b in range(B):
            w = widths[b] if b < B - 1 else np.inf
            step = rates[i, b] * w
            if acc + step >= target[i] or b == B - 1:
                t[i] = edges[b] + (target[i] - acc) / rates[i, b]
                break
            acc += step
    return t


def _sbc_survival(cfg: dict, replications: int, rng: np.random.Generator,
                  corrupt: bool) -> dict:
    from .forest import make_forest, sample_forest_from_prior
    from .special import solve_leaf_prior
    from .survival import fit_survival

    n = cfg.get("n", 80)
    P = cfg.get("P", 2)
    T = cfg.get("n_trees", 5)
    burnin = cfg.get("burnin", 400)
    n_iter = cfg.get("n_iter", 400)
    thin = max(1, n_iter // SBC_THINNED_DRAWS)
    edges = np.asarray(cfg.get("edges", [0.0, 0.7, 1.6, np.inf]))
    B = edges.size - 1
    X = np.random.default_rng(cfg.get("x_seed", 54321)).random((n, P))
    x_star = X[0]
    prior = solve_leaf_prior(1.5 / np.sqrt(T))

    ranks = {"lambda1": [], "r_star": []}
    flagged = 0
    for _ in range(replications):
        child = np.random.default_rng(rng.integers(2**63))
        lam0 = child.gamma(1.0, 1.0, B)
        schema = make_forest(X, T, prior)
        sample_forest_from_prior(schema, child)
        r0 = schema.evaluate(X)
        r_star0 = float(schema.evaluate(x_star[None, :])[0])
        rates = np.exp(r0)[:, None] * lam0[None, :]
        y = _simulate_piecewise_exponential(edges, rates, child)
        delta = np.ones(n, dtype=int)
        try:
            draws = fit_survival(X, y, delta, mode="ph", n_trees=T, burnin=burnin,
                                 n_iter=n_iter, thin=thin, rng=child,
                                 X_query=x_star[None, :], record_loglik=False,
                                 keep_forests=False, edges=edges)
        except Exception:  # noqa: BLE001
            flagged += 1
            continue
        ranks["lambda1"].append(int(np.sum(draws.params["lambda"][:, 0] < lam0[0])))
        ranks["r_star"].append(int(np.sum(draws.params["r_query"][:, 0] < r_star0)))
    return {"ranks": ranks, "n_levels": (n_iter // thin) + 1, "flagged": flagged}


def _sbc_density(cfg: dict, replications: int, rng: np.random.Generator,
                 corrupt: bool) -> dict:
    from .density import _stick_weight_matrix, fit_density, stick_weights
    from .forest import make_forest, sample_forest_from_prior
    from .special import solve_leaf_prior

    n = cfg.get("n", 50)
    P = cfg.get("P", 1)
    K = cfg.get("K_max", 5)
    T = cfg.get("n_trees", 5)
    mode = cfg.get("mode", "nph")
    burnin = cfg.get("burnin", 300)
    n_iter = cfg.get("n_iter", 300)
    thin = max(1, n_iter // SBC_THINNED_DRAWS)
    X = np.random.default_rng(cfg.get("x_seed", 2468)).random((n, P))
    x_star = X[0]
    prior = solve_leaf_prior(1.0 / np.sqrt(T))

    ranks = {"w1_star": [], "mu1": []}
    flagged = 0
    for _ in range(replications):
        child = np.random.default_rng(rng.integers(2**63))
        gamma0 = np.atleast_1d(sample_log_gamma(np.ones(K - 1), 1.0, child))
        schema = make_forest(X, T, prior, n_cat=0 if mode == "ph" else K - 1)
        sample_forest_from_prior(schema, child)
        if mode == "ph":
            R0 = np.repeat(schema.evaluate(X)[:, None], K - 1, axis=1)
            r_star0 = np.full(K - 1, float(schema.evaluate(x_star[None, :])[0]))
        else:
            R0 = np.column_stack([schema.evaluate(X, k) for k in range(1, K)])
            r_star0 = np.array([float(schema.evaluate(x_star[None, :], k)[0])
                                for k in range(1, K)])
        h_schema = make_forest(X, T, NormalLeafPrior(1.0 / np.sqrt(T)))
        sample_forest_from_prior(h_schema, child)
        h0 = h_schema.evaluate(X)
        tau0 = child.gamma(1.0, 1.0)
        sigma0 = 1.0 / math.sqrt(tau0)
        a_sig = child.gamma(4.0, 0.5)
        b_sig = child.gamma(4.0, 0.5)
        mu_k = sigma0 * child.standard_normal(K)
        sig_k = 1.0 / np.sqrt(child.gamma(a_sig, 1.0 / b_sig, K))
        W = _stick_weight_matrix(gamma0, R0)
        cdf = np.cumsum(W, axis=1)
        u = child.random(n) * cdf[:, -1]
        C0 = (u[:, None] > cdf).sum(axis=1) + 1
        y = mu_k[C0 - 1] + h0 + sig_k[C0 - 1] * child.standard_normal(n)
        w1_star0 = float(stick_weights(OrdinalParams(gamma0), r_star0, K)[0])
        try:
            draws = fit_density(X, y, K_max=K, mode=mode, n_trees=T, burnin=burnin,
                                n_iter=n_iter, thin=thin, rng=child,
                                X_query=x_star[None, :], record_loglik=False,
                                keep_forests=False, standardize=False)
        except Exception:  # noqa: BLE001
            flagged += 1
            continue
        gam = draws.params["gamma"]
        rq = draws.params["r_query"]
        S = gam.shape[0]
        w1 = np.empty(S)
        for s in range(S):
            rs = rq[s, 0]
            rs = np.full(K - 1, rs) if np.ndim(rs) == 0 else rs
            w1[s] = _stick_weight_matrix(gam[s], rs[None, :])[0, 0]
        ranks["w1_star"].append(int(np.sum(w1 < w1_star0)))
        ranks["mu1"].append(int(np.sum(draws.params["mu"][:, 0] < mu_k[0])))
    return {"ranks": ranks, "n_levels": (n_iter // thin) + 1, "flagged": flagged}


_SBC_RUNNERS = {"ordinal": _sbc_ordinal, "survival": _sbc_survival,
                "density": _sbc_density}


def sbc_run(model_kind: str, toy_config: dict | None, replications: int,
            rng: np.random.Generator | None = None, seed: int = 0,
            corrupt: bool = False) -> list[SbcReport]:
    """Rank-uniformity calibration: draw parameters from the prior, simulate
    data, refit, rank the truth among thinned posterior draws, and chi-square
    test the ranks on 20 bins.

    ``corrupt=True`` halves the B suffstats inside the ordinal sampler, the
    negative control that a correct run must reject.
    """
    if model_kind not in _SBC_RUNNERS:
        raise DomainError(f"unknown SBC model kind {model_kind!r}")
    if corrupt and model_kind != "ordinal":
        raise DomainError("the corrupted-update control targets the ordinal sampler")
    rng = rng if rng is not None else np.random.default_rng(seed)
    out = _SBC_RUNNERS[model_kind](toy_config or {}, replications, rng, corrupt)
    reports = []
    total = replications
    flagged = out["flagged"]
    if flagged:
        if flagged > 0.05 * total:
            raise ConvergenceError(f"{flagged}/{total} SBC replications failed")
        warnings.warn(f"excluded {flagged}/{total} failed SBC replications")
    for name, ranks in out["ranks"].items():
        ranks = np.asarray(ranks, dtype=np.int64)
        hist, chi2, pvalue = _rank_chi2(ranks, out["n_levels"])
        reports.append(SbcReport(parameter=name, histogram=hist, chi2=chi2,
                                 pvalue=pvalue, replications=int(ranks.size),
                                 flagged=flagged))
    return reports
