"""Special functions and elementary samplers backing every conjugate update.

The leaf-prior solver pins the log-gamma prior ``log Gam(a, b)`` to a target
leaf standard deviation ``sigma_mu`` through ``psi(a) = log b`` and
``psi'(a) = sigma_mu**2``.  Truncated-exponential sampling goes through the
probability integral transform in a form that stays finite for extreme rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError

# Asymptotic series coefficients: Bernoulli numbers B_2..B_14.
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)

_ASYM_CUTOFF = 10.0


@dataclass(frozen=True)
class LogGammaPrior:
    """Leaf prior parameters: mu ~ log Gam(a, b) with sd(mu) = sigma_mu."""

    a: float
    b: float
    sigma_mu: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.sigma_mu > 0):
            raise DomainError("LogGammaPrior requires a > 0, b > 0, sigma_mu > 0")

    def residuals(self) -> tuple[float, float]:
        """Return (|psi(a) - log b|, |psi'(a) - sigma_mu**2|)."""
        return (
            abs(polygamma(0, self.a) - math.log(self.b)),
            abs(polygamma(1, self.a) - self.sigma_mu**2),
        )


@dataclass(frozen=True)
class TruncExpSpec:
    """Exponential(rate) truncated to (lo, hi); hi may be +inf."""

    rate: float
    lo: float = 0.0
    hi: float = math.inf

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError("TruncExpSpec requires rate > 0")
        if not (self.lo >= 0 and self.hi > self.lo):
            raise DomainError("TruncExpSpec requires 0 <= lo < hi")


def polygamma(order: int, x: float) -> float:
    """Digamma (order 0) or trigamma (order 1) via recurrence shift plus
    asymptotic series, accurate to ~1e-13 relative for x >= 1e-6."""
    if order not in (0, 1):
        raise DomainError("only orders 0 (digamma) and 1 (trigamma) supported")
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise DomainError(f"polygamma requires x > 0, got {x}")
    acc = 0.0
    while x < _ASYM_CUTOFF:
        if order == 0:
            acc -= 1.0 / x
        else:
            acc += 1.0 / (x * x)
        x += 1.0
    inv2 = 1.0 / (x * x)
    if order == 0:
        # psi(x) ~ ln x - 1/(2x) - sum_n B_2n / (2n x^2n)
        series = 0.0
        term = inv2
        for n, b2n in enumerate(_BERNOULLI, start=1):
            series += b2n / (2.0 * n) * term
            term *= inv2
        return acc + math.log(x) - 0.5 / x - series
    # psi'(x) ~ 1/x + 1/(2x^2) + sum_n B_2n x^(-2n-1)
    series = 0.0
    term = inv2 / x
    for b2n in _BERNOULLI:
        series += b2n * term
        term *= inv2
    return acc + 1.0 / x + 0.5 * inv2 + series


def _trigamma_deriv(x: float) -> float:
    """psi''(x), used as the Newton derivative for the leaf-prior solver."""
    acc = 0.0
    while x < _ASYM_CUTOFF:
        acc += 2.0 / x**3
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    term = inv2 * inv2
    for n, b2n in enumerate(_BERNOULLI, start=1):
        series += (2 * n + 1) * b2n * term
        term *= inv2
    return acc - inv2 - inv2 / x - series


def solve_leaf_prior(sigma_mu: float) -> LogGammaPrior:
    """Solve psi'(a) = sigma_mu**2 and b = exp(psi(a)).

    Newton iteration on a, safeguarded by a bracket on the strictly
    decreasing target; residuals are pinned below 1e-10.
    """
    if not sigma_mu > 0:
        raise DomainError("sigma_mu must be positive")
    if not 1e-8 <= sigma_mu <= 1e4:
        raise ConvergenceError(
            f"sigma_mu={sigma_mu} outside the solvable range [1e-8, 1e4]")
    target = float(sigma_mu) ** 2

    def f(a):
        return polygamma(1, a) - target

    # psi'(a) ~ 1/a for large a and ~ 1/a^2 near zero.
    a = 1.0 / target if target < 1.0 else 1.0 / math.sqrt(target)
    a = min(max(a, 1e-12), 1e15)
    lo, hi = a, a
    flo = f(lo)
    for _ in range(200):
        if flo > 0:
            break
        lo /= 4.0
        if lo < 1e-300:
            raise ConvergenceError(f"failed to bracket leaf prior for sigma_mu={sigma_mu}")
        flo = f(lo)
    fhi = f(hi)
    for _ in range(200):
        if fhi < 0:
            break
        hi *= 4.0
        if hi > 1e300:
            raise ConvergenceError(f"failed to bracket leaf prior for sigma_mu={sigma_mu}")
        fhi = f(hi)

    a = 0.5 * (lo + hi)
    for _ in range(200):
        fa = f(a)
        if fa > 0:
            lo = a
        else:
            hi = a
        if abs(fa) <= 1e-13 * max(target, abs(fa)):
            break
        step = fa / _trigamma_deriv(a)
        a_new = a - step
        if not (lo < a_new < hi):
            a_new = 0.5 * (lo + hi)
        if abs(a_new - a) <= 1e-15 * a:
            a = a_new
            break
        a = a_new
    else:
        raise ConvergenceError(f"leaf prior solver did not converge for sigma_mu={sigma_mu}")

    b = math.exp(polygamma(0, a))
    prior = LogGammaPrior(a=a, b=b, sigma_mu=float(sigma_mu))
    res_mean, res_var = prior.residuals()
    if res_mean > 1e-10 or res_var > 1e-10:
        raise ConvergenceError(
            f"leaf prior residuals too large for sigma_mu={sigma_mu}: {res_mean:g}, {res_var:g}"
        )
    return prior


def trunc_exp_inverse_cdf(spec: TruncExpSpec, u: float) -> float:
    """Quantile of TExp(rate, lo, hi) at u, stable as rate -> 0 or inf."""
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"u must lie in [0, 1], got {u}")
    return float(_trunc_exp_ppf(spec.rate, spec.lo, spec.hi, u))


def _trunc_exp_ppf(rate, lo, hi, u):
    """Vectorized truncated-exponential quantile; hi may be +inf."""
    rate = np.asarray(rate, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(invalid="ignore"):
        span = np.multiply(rate, np.subtract(hi, lo))
    # u * (e^{-rate*(hi-lo)} - 1), exact at both endpoints.
    tail = np.where(np.isinf(span), -1.0, np.expm1(-np.where(np.isinf(span), 1.0, span)))
    with np.errstate(divide="ignore"):  # u = 1 on an unbounded interval
        x = lo - np.log1p(u * tail) / rate
    return np.minimum(np.maximum(x, lo), hi)


def _log_gamma_draw(shape_arr: np.ndarray, rate_arr, rng: np.random.Generator):
    """Unchecked log Gamma(shape, rate) draws for pre-validated arrays."""
    g = rng.standard_gamma(shape_arr + 1.0)
    u = rng.random(shape_arr.shape)
    return np.log(g) + np.log(u) / shape_arr - np.log(rate_arr)


def sample_log_gamma(a, b, rng: np.random.Generator):
    """log of a Gamma(shape=a, rate=b) draw; vectorized over (a, b).

    Uses the identity Gam(a) = Gam(a+1) * U^(1/a), which keeps the log draw
    finite for arbitrarily small shapes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("sample_log_gamma requires a > 0 and b > 0")
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = _log_gamma_draw(np.broadcast_to(a, shape),
                          np.broadcast_to(b, shape), rng)
    if out.ndim == 0:
        return float(out)
    return out
