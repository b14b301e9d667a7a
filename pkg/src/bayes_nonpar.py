"""Non-parametric Bayesian quantile inference.

The log-quantile Y_eps = ln X_eps gets a Gaussian prior from the quantile CDI
map. The empirical log-quantile of the local samples is asymptotically
Gaussian with variance eps (1 - eps) / (n f_Y(Y_eps)^2), where the density is
predicted by a second CDI map, so the posterior is conjugate.
"""

import math
from typing import Optional

import structlog

from src.gp_map import CdiMap, estimate_theta_quantile, predict
from src.models import (
    ConfidenceInterval,
    GaussianPosterior,
    GaussianPrior,
    Location,
    QuantileSpec,
    Sidedness,
)
from src.stats_core import SampleSet, normal_inv_cdf

logger = structlog.get_logger(__name__)

DENSITY_FLOOR = 1e-6


def likelihood_variance(n: int, epsilon: float, f_y_at_quantile: float) -> float:
    """sigma_n^2 = eps (1 - eps) / (n f^2)."""
    if n < 1:
        raise ValueError(f"Likelihood variance needs n >= 1, got {n}")
    if not f_y_at_quantile > 0:
        raise ValueError(f"Density at the quantile must be positive, got {f_y_at_quantile}")
    return epsilon * (1.0 - epsilon) / (n * f_y_at_quantile**2)


def posterior_update(prior: GaussianPrior, y_hat: float, sigma_n2: float) -> GaussianPosterior:
    """Conjugate Gaussian update of the log-quantile."""
    if not sigma_n2 > 0:
        raise ValueError(f"Likelihood variance must be positive, got {sigma_n2}")
    total = sigma_n2 + prior.sigma2
    mu_post = (sigma_n2 * prior.mu + prior.sigma2 * y_hat) / total
    sigma2_post = 1.0 / (1.0 / prior.sigma2 + 1.0 / sigma_n2)
    return GaussianPosterior(mu_post=mu_post, sigma2_post=sigma2_post)


def posterior_interval(
    post: GaussianPosterior,
    delta: float,
    sided: Sidedness = Sidedness.ONE,
    flags: tuple[str, ...] = (),
) -> ConfidenceInterval:
    """Log-normal interval of X_eps from the Gaussian posterior of Y_eps.

    One-sided: [exp(mu + sigma z_delta), inf). Two-sided: central interval
    at delta / 2 and 1 - delta / 2.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    sd = math.sqrt(post.sigma2_post)
    if sided == Sidedness.ONE:
        lower = math.exp(post.mu_post + sd * normal_inv_cdf(delta))
        upper = math.inf
    else:
        lower = math.exp(post.mu_post + sd * normal_inv_cdf(delta / 2.0))
        upper = math.exp(post.mu_post + sd * normal_inv_cdf(1.0 - delta / 2.0))
    return ConfidenceInterval(
        lower=lower, upper=upper, confidence=1.0 - delta, sided=sided, flags=flags
    )


def prior_only_interval(
    prior: GaussianPrior, spec: QuantileSpec, sided: Sidedness, flags: tuple[str, ...]
) -> ConfidenceInterval:
    """Interval from the map prior alone, used when there is no usable local data."""
    return posterior_interval(
        GaussianPosterior(mu_post=prior.mu, sigma2_post=prior.sigma2), spec.delta, sided, flags
    )


def infer_nonpar_bayes(
    prior: GaussianPrior,
    local: SampleSet,
    spec: QuantileSpec,
    density_map: CdiMap,
    loc: Location,
    sided: Sidedness = Sidedness.ONE,
    density_floor: Optional[float] = None,
) -> ConfidenceInterval:
    """Confidence interval of X_eps at loc from the map prior and local samples.

    With no local samples the interval comes from the prior directly. The
    predicted density exp(mu) is floored at density_floor; using the floor is
    reported in the interval flags.
    """
    n = len(local)
    if n == 0:
        return prior_only_interval(prior, spec, sided, ("prior_only",))

    floor = DENSITY_FLOOR if density_floor is None else density_floor
    log_density, _ = predict(density_map, loc)
    density = math.exp(min(log_density, 700.0))
    flags: tuple[str, ...] = ()
    if density < floor:
        logger.bind(location_id=loc.id).warning(
            "density_floor_applied", predicted_density=density, floor=floor
        )
        density = floor
        flags = ("density_floor",)

    y_hat = estimate_theta_quantile(local, spec.epsilon)
    sigma_n2 = likelihood_variance(n, spec.epsilon, density)
    return posterior_interval(posterior_update(prior, y_hat, sigma_n2), spec.delta, sided, flags)
