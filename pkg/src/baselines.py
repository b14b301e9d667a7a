"""Local-data-only baselines: order-statistic and GPD likelihood intervals."""

import math
from typing import Literal, Optional, Sequence

import numpy as np
import structlog
from scipy import optimize, stats

from src.errors import FitError, InsufficientSamplesError
from src.evt_core import (
    XI_LOWER_LIMIT,
    compute_deficits,
    expected_information,
    fit_gpd_mle,
    gpd_log_likelihood_sigma,
    gpd_logpdf,
    implied_scale,
    observed_information,
    select_threshold,
    tail_quantile,
)
from src.models import (
    ConfidenceInterval,
    DeficitSet,
    GpdParams,
    ProfileGrid,
    QuantileSpec,
    Sidedness,
)
from src.stats_core import (
    SampleSet,
    normal_inv_cdf,
    order_statistic,
    order_statistic_coverage,
    quantile_rank,
)

logger = structlog.get_logger(__name__)

XI_BOUNDS = (XI_LOWER_LIMIT, 5.0)
XI_BOUNDARY_MARGIN = 1e-3
"""Fits closer than this to the lower shape limit are treated as boundary fits."""
XI_COARSE_POINTS = 41
BRACKET_GROWTH = 2.0
BISECTION_RTOL = 1e-6


def _unbounded(spec: QuantileSpec, sided: Sidedness, flag: str) -> ConfidenceInterval:
    return ConfidenceInterval(
        lower=0.0, upper=math.inf, confidence=spec.confidence, sided=sided, flags=(flag,)
    )


# ---------------------------------------------------------------------------
# Order-statistic baseline
# ---------------------------------------------------------------------------


def nonpar_baseline_rank(n: int, spec: QuantileSpec) -> Optional[int]:
    """Largest r with I_eps(r, n + 1 - r) >= 1 - delta, or None when even r = 1 fails."""
    target = spec.confidence
    if n < 1 or order_statistic_coverage(n, 1, spec.epsilon) < target:
        return None
    lo, hi = 1, n
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if order_statistic_coverage(n, mid, spec.epsilon) >= target:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _two_sided_coverage(n: int, c: int, k: int, epsilon: float) -> float:
    """P(X_(c-k) <= X_eps <= X_(c+k)) with missing order statistics at 0 and +inf."""
    lower = 1.0 if c - k < 1 else order_statistic_coverage(n, c - k, epsilon)
    upper = 0.0 if c + k > n else order_statistic_coverage(n, c + k, epsilon)
    return lower - upper


def nonpar_baseline_interval(
    local: SampleSet, spec: QuantileSpec, sided: Sidedness = Sidedness.ONE
) -> ConfidenceInterval:
    """Distribution-free interval from order statistics of the local samples.

    One-sided: [X_(r), inf) with the largest r whose coverage I_eps(r, n + 1 - r)
    reaches 1 - delta, or [0, inf) when none does. Two-sided: the narrowest
    symmetric rank window around ceil(n eps) that reaches 1 - delta.
    """
    n = len(local)
    if n == 0:
        return _unbounded(spec, sided, "no_samples")

    if sided == Sidedness.ONE:
        r = nonpar_baseline_rank(n, spec)
        lower = 0.0 if r is None else order_statistic(local, r)
        return ConfidenceInterval(lower=lower, upper=math.inf, confidence=spec.confidence)

    c = quantile_rank(n, spec.epsilon)
    k_max = max(c, n + 1 - c)
    lo, hi = 0, k_max
    while lo < hi:
        mid = (lo + hi) // 2
        if _two_sided_coverage(n, c, mid, spec.epsilon) >= spec.confidence:
            hi = mid
        else:
            lo = mid + 1
    k = lo
    lower = 0.0 if c - k < 1 else order_statistic(local, c - k)
    upper = math.inf if c + k > n else order_statistic(local, c + k)
    return ConfidenceInterval(lower=lower, upper=upper, confidence=spec.confidence, sided=sided)


# ---------------------------------------------------------------------------
# GPD likelihood baseline
# ---------------------------------------------------------------------------


def _reparam_loglik(
    xi: float, x_eps: float, y: np.ndarray, u: float, p_u: float, eps: float
) -> float:
    sigma = implied_scale(u, x_eps, xi, p_u, eps)
    if not (sigma > 0 and math.isfinite(sigma)):
        return -math.inf
    return float(np.sum(gpd_logpdf(y, GpdParams(sigma=sigma, xi=xi))))


def _xi_lower_bound(x_eps: float, y_max: float, u: float, log_ratio: float) -> float:
    """Smallest xi keeping every deficit inside the support at this X_eps."""
    span = u - x_eps
    if span >= y_max:
        return XI_BOUNDS[0]
    return max(XI_BOUNDS[0], math.log1p(-span / y_max) / log_ratio)


def profile_loglik(
    x_eps: float, d: DeficitSet, u: float, p_u_hat: float, spec: QuantileSpec
) -> float:
    """sup over xi of the reparametrized GPD log-likelihood at fixed X_eps.

    The shape is searched on [-1, 5] intersected with the feasible set: a
    coarse grid locates the best region, bounded Brent refines it.
    """
    if not 0.0 < x_eps <= u:
        raise ValueError(f"x_eps must lie in (0, u={u}], got {x_eps}")
    if not spec.epsilon < p_u_hat < 1.0 or x_eps == u:
        return -math.inf
    y = d.deficits
    if y.size == 0:
        return 0.0
    log_ratio = math.log(p_u_hat / spec.epsilon)
    xi_lo = _xi_lower_bound(x_eps, float(y.max()), u, log_ratio)
    xi_hi = XI_BOUNDS[1]
    if xi_lo >= xi_hi:
        return -math.inf

    args = (x_eps, y, u, p_u_hat, spec.epsilon)
    grid = np.linspace(xi_lo, xi_hi, XI_COARSE_POINTS)[1:]
    values = np.array([_reparam_loglik(xi, *args) for xi in grid])
    if not np.any(np.isfinite(values)):
        return -math.inf
    best = int(np.argmax(values))
    left = grid[best - 1] if best > 0 else xi_lo
    right = grid[min(best + 1, grid.size - 1)]
    result = optimize.minimize_scalar(
        lambda xi: -_reparam_loglik(xi, *args) if xi > xi_lo else math.inf,
        bounds=(left, right),
        method="bounded",
        options={"xatol": 1e-10},
    )
    refined = -float(result.fun) if np.isfinite(result.fun) else -math.inf
    return max(refined, float(values[best]))


def profile_grid(
    d: DeficitSet, u: float, p_u_hat: float, spec: QuantileSpec, x_grid: Sequence[float]
) -> ProfileGrid:
    """Profile log-likelihood on a strictly increasing grid of X_eps values."""
    grid = np.asarray(x_grid, dtype=float)
    return ProfileGrid(
        x_eps_grid=grid,
        profile_loglik=[profile_loglik(float(x), d, u, p_u_hat, spec) for x in grid],
    )


def _deviance_root(
    deviance, x_hat: float, direction: float, limit: float, cutoff: float
) -> float:
    """Point between x_hat and limit where the deviance crosses the cutoff.

    Returns limit when the deviance stays below the cutoff all the way.
    """
    step = 1e-3 * max(abs(limit - x_hat), abs(x_hat), 1e-12)
    inside = x_hat
    while True:
        candidate = x_hat + direction * step
        if direction * (candidate - limit) >= 0:
            candidate = limit
        if deviance(candidate) > cutoff:
            outside = candidate
            break
        if candidate == limit:
            return limit
        inside = candidate
        step *= BRACKET_GROWTH

    while abs(outside - inside) > BISECTION_RTOL * max(abs(inside), abs(outside), 1e-12):
        middle = 0.5 * (inside + outside)
        if deviance(middle) > cutoff:
            outside = middle
        else:
            inside = middle
    return inside


def _parameter_covariance(d: DeficitSet, fit: GpdParams) -> np.ndarray:
    """Covariance of (sigma, xi) from the observed information, else the expected one.

    Raises:
        FitError: Neither information matrix is usable at the fitted parameters
    """
    try:
        information = observed_information(d, fit)
        np.linalg.cholesky(information)
        return np.linalg.inv(information)
    except (FitError, np.linalg.LinAlgError) as e:
        if fit.xi <= -0.5:
            raise FitError(f"Observed information unusable and xi={fit.xi} <= -0.5") from e
        logger.debug("wald_expected_information", xi=fit.xi, reason=str(e))
        return np.linalg.inv(expected_information(len(d), fit))


def _wald_interval(
    fit: GpdParams,
    d: DeficitSet,
    u: float,
    p_u: float,
    n: int,
    x_hat: float,
    spec: QuantileSpec,
    sided: Sidedness,
) -> tuple[float, float]:
    """Delta-method normal interval from the information of (sigma, xi)."""
    eps = spec.epsilon
    covariance = _parameter_covariance(d, fit)
    h = np.array([1e-6 * fit.sigma, 1e-6, 1e-6 * p_u])

    def quantile(sigma: float, xi: float, pu: float) -> float:
        return tail_quantile(GpdParams(sigma=sigma, xi=xi), u, pu, eps)

    base = np.array([fit.sigma, fit.xi, p_u])
    gradient = np.empty(3)
    for i in range(3):
        up, down = base.copy(), base.copy()
        up[i] += h[i]
        down[i] -= h[i]
        gradient[i] = (quantile(*up) - quantile(*down)) / (2.0 * h[i])
    variance = float(gradient[:2] @ covariance @ gradient[:2])
    variance += gradient[2] ** 2 * p_u * (1.0 - p_u) / n
    if not variance > 0:
        raise FitError(f"Delta-method variance is not positive: {variance}")
    sd = math.sqrt(variance)
    if sided == Sidedness.ONE:
        return max(0.0, x_hat + sd * normal_inv_cdf(spec.delta)), math.inf
    z = normal_inv_cdf(1.0 - spec.delta / 2.0)
    return max(0.0, x_hat - z * sd), min(u, x_hat + z * sd)


def evt_baseline_interval(
    local: SampleSet,
    spec: QuantileSpec,
    zeta: float,
    r_min: int,
    sided: Sidedness = Sidedness.ONE,
    interval_method: Literal["profile", "wald"] = "profile",
) -> ConfidenceInterval:
    """GPD interval from the local samples alone.

    The profile variant keeps every X_eps whose deviance
    2 (l_max - l_p(X_eps)) stays within the chi-square(1) quantile at 1 - delta;
    the Wald variant uses the delta method and is withheld (flag shape_at_boundary)
    when the fitted shape sits at its lower limit. Failures give [0, inf) with a flag.
    """
    n = len(local)
    log = logger.bind(n=n, method=interval_method)
    try:
        u, r = select_threshold(local, zeta, r_min)
    except InsufficientSamplesError:
        return _unbounded(spec, sided, "insufficient_samples")

    p_u_hat = r / n
    if not p_u_hat > spec.epsilon:
        return _unbounded(spec, sided, "threshold_below_quantile")
    if r >= n:
        # p_u = 1 leaves no tail below the threshold to extrapolate
        return _unbounded(spec, sided, "threshold_at_sample_maximum")
    d = compute_deficits(local, u)
    try:
        fit = fit_gpd_mle(d)
    except (FitError, InsufficientSamplesError) as e:
        log.warning("evt_baseline_fit_failed", reason=str(e))
        return _unbounded(spec, sided, "fit_failed")

    x_hat = tail_quantile(fit, u, p_u_hat, spec.epsilon)
    if interval_method == "wald":
        if fit.xi <= XI_LOWER_LIMIT + XI_BOUNDARY_MARGIN:
            log.info("evt_baseline_shape_at_boundary", xi=fit.xi)
            return _unbounded(spec, sided, "shape_at_boundary")
        try:
            lower, upper = _wald_interval(fit, d, u, p_u_hat, n, x_hat, spec, sided)
        except (FitError, np.linalg.LinAlgError) as e:
            log.warning("evt_baseline_wald_failed", reason=str(e))
            return _unbounded(spec, sided, "fit_failed")
        return ConfidenceInterval(
            lower=lower, upper=max(lower, upper), confidence=spec.confidence, sided=sided
        )

    if x_hat <= 0:
        log.debug("evt_baseline_nonpositive_estimate", x_hat=x_hat)
        return ConfidenceInterval(
            lower=0.0,
            upper=u if sided == Sidedness.TWO else math.inf,
            confidence=spec.confidence,
            sided=sided,
            flags=("nonpositive_estimate",),
        )

    l_max = max(gpd_log_likelihood_sigma(d, fit), profile_loglik(x_hat, d, u, p_u_hat, spec))
    cutoff = float(stats.chi2.ppf(spec.confidence, df=1))

    def deviance(x: float) -> float:
        if x <= 0:
            return math.inf
        return 2.0 * (l_max - profile_loglik(x, d, u, p_u_hat, spec))

    tiny = np.finfo(float).tiny
    lower = _deviance_root(deviance, x_hat, -1.0, tiny, cutoff)
    lower = 0.0 if lower <= tiny else lower
    if sided == Sidedness.ONE:
        return ConfidenceInterval(lower=lower, upper=math.inf, confidence=spec.confidence)
    upper = _deviance_root(deviance, x_hat, 1.0, u, cutoff)
    return ConfidenceInterval(lower=lower, upper=upper, confidence=spec.confidence, sided=sided)
