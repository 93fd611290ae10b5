import numpy as np
import scipy.stats


def spectral_mcse(x, max_lag=300):
    """Autocorrelation-corrected Monte Carlo standard error of the mean."""
    x = np.asarray(x, dtype=float)
    centered = x - x.mean()
    n = x.size
    var = centered.var()
    if var == 0:
        return 0.0
    rho_sum = 0.0
    for lag in range(1, min(max_lag, n // 3)):
        c = np.dot(centered[:-lag], centered[lag:]) / (n * var)
        if c < 0.01:
            break
        rho_sum += c
    tau = 1.0 + 2.0 * rho_sum
    return float(np.sqrt(var * tau / n))


def geweke_pvalue(iid_samples, chain_samples):
    """Two-sided p-value for equality of means between independent
    marginal-conditional samples and an autocorrelated successive chain."""
    iid = np.asarray(iid_samples, dtype=float)
    chain = np.asarray(chain_samples, dtype=float)
    se = np.hypot(iid.std(ddof=1) / np.sqrt(iid.size), spectral_mcse(chain))
    if se == 0:
        return 1.0
    z = (iid.mean() - chain.mean()) / se
    return float(2.0 * scipy.stats.norm.sf(abs(z)))
