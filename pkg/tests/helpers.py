"""Sample generators and small maps shared by several test modules."""

import numpy as np
from scipy import stats

from src.gp_map import CdiMap, fit_cdi_map
from src.models import CdiObservation, DeficitSet, GpHyperParams, Location
from src.stats_core import SampleSet


def rayleigh_samples(n: int, seed: int, scale: float = 1.0) -> SampleSet:
    """Capacity-like samples log2(1 + scale * Exp(1))."""
    rng = np.random.default_rng(seed)
    return SampleSet(values=np.log2(1.0 + scale * rng.exponential(1.0, n)))


def gpd_deficits(n: int, sigma: float, xi: float, seed: int, u: float = 10.0) -> DeficitSet:
    """Deficits drawn from GPD(sigma, xi)."""
    y = stats.genpareto.rvs(c=xi, scale=sigma, size=n, random_state=np.random.default_rng(seed))
    return DeficitSet(u=u, deficits=y[y > 0])


def gpd_tail_samples(
    n: int, sigma: float, xi: float, seed: int, u: float = 10.0, p_u: float = 0.2
) -> SampleSet:
    """Samples whose lower tail below u is exactly GPD(sigma, xi) with mass p_u."""
    v = np.random.default_rng(seed).uniform(size=n)
    tail = v < p_u
    values = u + (v - p_u)
    t = np.log(p_u / v[tail])
    deficits = sigma * (np.expm1(xi * t) / xi if xi != 0 else t)
    values[tail] = u - deficits
    return SampleSet(values=values)


def gpd_tail_quantile(
    sigma: float, xi: float, epsilon: float, u: float = 10.0, p_u: float = 0.2
) -> float:
    """Exact epsilon-quantile of gpd_tail_samples."""
    t = np.log(p_u / epsilon)
    return float(u - sigma * (np.expm1(xi * t) / xi if xi != 0 else t))


def flat_map(value: float, log_domain: bool = True, signal_variance: float = 0.01) -> CdiMap:
    """Map predicting value near the origin with a small predictive variance."""
    hyper = GpHyperParams(
        signal_variance=signal_variance, lengthscale_m=50.0, nugget=1e-4, mean=value
    )
    obs = [
        CdiObservation(location=Location(id=i, x=x, y=0.0), theta_hat=value)
        for i, x in enumerate((-5.0, 5.0))
    ]
    return fit_cdi_map(obs, log_domain=log_domain, hyper=hyper)
