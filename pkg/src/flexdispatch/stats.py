"""Large-population statistics of ensemble aggregate consumption.

The aggregate consumption of n devices drawn i.i.d. from the state
distribution concentrates on the probability-weighted mean with variance
shrinking as 1/n, approaching a Gaussian. These routines give the
analytic moments, seeded sampling, and a Monte-Carlo replicate study
with a normality check.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AggregateMoments:
    mean: float      # expected aggregate consumption per device
    variance: float  # variance of the size-n sample mean
    n: int


def apparent_power(p_alpha, q_alpha):
    """Default per-state apparent power sqrt(p^2 + q^2)."""
    return np.hypot(np.asarray(p_alpha, dtype=float), np.asarray(q_alpha, dtype=float))


def aggregate_moments(rho, s_alpha, n: int) -> AggregateMoments:
    """Analytic moments: mean = sum_a s_a rho_a, var = sum_a (s_a - mean)^2 rho_a / n."""
    rho = np.asarray(rho, dtype=float)
    s_alpha = np.asarray(s_alpha, dtype=float)
    if rho.shape != s_alpha.shape:
        raise ValueError("rho and s_alpha must have matching shapes")
    if n < 1:
        raise ValueError("population size must be at least 1")
    mean = float(s_alpha @ rho)
    variance = float(((s_alpha - mean) ** 2 @ rho) / n)
    return AggregateMoments(mean=mean, variance=variance, n=n)


def sample_aggregate(rho, s_alpha, n: int, seed) -> float:
    """Sample mean of s over n i.i.d. state draws from rho; seeded.

    ``seed`` may be an int or a numpy SeedSequence; identical seeds give
    identical outputs.
    """
    rho = np.asarray(rho, dtype=float)
    s_alpha = np.asarray(s_alpha, dtype=float)
    if n < 1:
        raise ValueError("population size must be at least 1")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(rho)
    cum[-1] = 1.0  # guard the top bin against rounding
    draws = np.searchsorted(cum, rng.random(n), side="right")
    return float(s_alpha[draws].mean())


def ks_distance_normal(z) -> float:
    """Kolmogorov-Smirnov distance between samples z and the standard normal."""
    z = np.sort(np.asarray(z, dtype=float))
    N = z.shape[0]
    cdf = 0.5 * (1.0 + np.array([math.erf(v / math.sqrt(2.0)) for v in z]))
    upper = np.abs(np.arange(1, N + 1) / N - cdf)
    lower = np.abs(np.arange(0, N) / N - cdf)
    return float(np.maximum(upper, lower).max())


def replicate_study(rho, s_alpha, n: int, replicates: int, seed):
    """Monte-Carlo check of the analytic moments.

    Runs ``replicates`` independent aggregates of size n with seeds split
    from ``seed`` by counter, and returns a dict with analytic and
    empirical mean/variance plus the KS distance of the standardized
    samples to the standard normal (NaN for degenerate distributions).
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    moments = aggregate_moments(rho, s_alpha, n)
    streams = np.random.SeedSequence(seed).spawn(replicates)
    samples = np.array([sample_aggregate(rho, s_alpha, n, st) for st in streams])
    emp_mean = float(samples.mean())
    emp_var = float(samples.var(ddof=1)) if replicates > 1 else 0.0
    if moments.variance > 0.0:
        z = (samples - moments.mean) / math.sqrt(moments.variance)
        ks = ks_distance_normal(z)
    else:
        ks = float("nan")
    return {
        "n": n,
        "replicates": replicates,
        "analytic_mean": moments.mean,
        "analytic_var": moments.variance,
        "empirical_mean": emp_mean,
        "empirical_var": emp_var,
        "ks_distance": ks,
    }
