"""Generalized Pareto tail model: distribution functions, fitting, thresholds.

Lower tails are handled through deficits y = u - x of samples below a
threshold u. Near xi = 0 every formula switches to a second-order series so
the exponential limit is reached without cancellation.
"""

import csv
import math
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np
import structlog
from scipy import optimize, stats

from src.errors import CalibrationError, FitError, InsufficientSamplesError, InvariantViolationError
from src.models import DeficitSet, GpdParams, TailParams
from src.stats_core import SampleSet, order_statistic

logger = structlog.get_logger(__name__)

XI_EPS = 1e-8
"""Shape magnitude below which the exponential-limit series is used."""

MIN_DEFICITS_FOR_FIT = 10

XI_LOWER_LIMIT = -1.0
"""Shape at which the GPD likelihood becomes unbounded; fits stay strictly above it."""

INFORMATION_STEP = 1e-4

ArrayLike = Union[float, Sequence[float], np.ndarray]


class MeanDeficitPoint(NamedTuple):
    """One point of the empirical mean-deficit curve."""

    u: float
    e_hat: float
    count: int


def _scalar_or_array(values: np.ndarray, like: ArrayLike) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(like) == 0 else values


def _log1p_over_xi(z: np.ndarray, xi: float) -> np.ndarray:
    """ln(1 + xi z) / xi, with the series z - xi z^2 / 2 near xi = 0."""
    if abs(xi) < XI_EPS:
        return z - 0.5 * xi * z * z
    return np.log1p(xi * z) / xi


def _expm1_over_xi(t: float, xi: float) -> float:
    """(exp(xi t) - 1) / xi, with the series t + xi t^2 / 2 near xi = 0."""
    if abs(xi) < XI_EPS:
        return t + 0.5 * xi * t * t
    return math.expm1(xi * t) / xi


def gpd_logpdf(y: ArrayLike, p: GpdParams) -> Union[float, np.ndarray]:
    """Log density of the GPD; -inf outside {y > 0, 1 + xi y / sigma > 0}."""
    arr = np.asarray(y, dtype=float)
    z = arr / p.sigma
    inside = (arr > 0) & (1.0 + p.xi * z > 0)
    out = np.full(arr.shape, -np.inf)
    zi = z[inside]
    # ln f = -ln sigma - ln(1 + xi z) / xi - ln(1 + xi z)
    out[inside] = -math.log(p.sigma) - _log1p_over_xi(zi, p.xi) - np.log1p(p.xi * zi)
    return _scalar_or_array(out, y)


def gpd_pdf(y: ArrayLike, p: GpdParams) -> Union[float, np.ndarray]:
    """GPD density f_u(y; sigma, xi)."""
    return _scalar_or_array(np.exp(np.asarray(gpd_logpdf(y, p))), y)


def gpd_cdf(y: ArrayLike, p: GpdParams) -> Union[float, np.ndarray]:
    """GPD distribution function, clamped to [0, 1]."""
    arr = np.asarray(y, dtype=float)
    z = np.maximum(arr, 0.0) / p.sigma
    out = np.zeros(arr.shape)
    positive = arr > 0
    if p.xi < 0:
        beyond = positive & (1.0 + p.xi * z <= 0)
        out[beyond] = 1.0
        positive &= ~beyond
    out[positive] = -np.expm1(-_log1p_over_xi(z[positive], p.xi))
    return _scalar_or_array(np.clip(out, 0.0, 1.0), y)


def tail_cdf(x: float, t: TailParams) -> float:
    """P(X <= x) = p_u (1 + xi (u - x) / sigma_u)^(-1/xi) for x below the threshold."""
    if x >= t.u:
        raise ValueError(f"Tail CDF is only defined below the threshold u={t.u}, got x={x}")
    sigma = sigma_from_reparam(t)
    return t.p_u * (1.0 - float(gpd_cdf(t.u - x, GpdParams(sigma=sigma, xi=t.xi))))


def tail_quantile(p: GpdParams, u: float, p_u: float, epsilon: float) -> float:
    """X_eps = u - (sigma / xi) ((p_u / eps)^xi - 1)."""
    if not 0.0 < epsilon <= p_u < 1.0:
        raise ValueError(f"Need 0 < epsilon <= p_u < 1, got epsilon={epsilon}, p_u={p_u}")
    return u - p.sigma * _expm1_over_xi(math.log(p_u / epsilon), p.xi)


def implied_scale(u: float, x_eps: float, xi: float, p_u: float, epsilon: float) -> float:
    """(u - X_eps) xi / ((p_u / eps)^xi - 1) without validation; nan on overflow."""
    try:
        return (u - x_eps) / _expm1_over_xi(math.log(p_u / epsilon), xi)
    except (OverflowError, ValueError, ZeroDivisionError):
        return math.nan


def sigma_from_reparam(t: TailParams) -> float:
    """Scale implied by (X_eps, xi, p_u): (u - X_eps) xi / ((p_u / eps)^xi - 1)."""
    sigma = implied_scale(t.u, t.x_eps, t.xi, t.p_u, t.epsilon)
    if not (sigma > 0 and math.isfinite(sigma)):
        raise InvariantViolationError(
            f"Reparametrized scale is not positive: sigma={sigma} for "
            f"x_eps={t.x_eps}, xi={t.xi}, p_u={t.p_u}, u={t.u}"
        )
    return sigma


def select_threshold(s: SampleSet, zeta: float, r_min: int) -> tuple[float, int]:
    """Threshold u = X_(r) with r = max(ceil(n zeta), r_min).

    Raises:
        ValueError: If zeta or r_min are out of range
        InsufficientSamplesError: If r exceeds the sample count
    """
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    if r_min < 2:
        raise ValueError(f"r_min must be at least 2, got {r_min}")
    n = len(s)
    r = max(math.ceil(round(n * zeta, 9)), r_min)
    if r > n:
        raise InsufficientSamplesError(f"Threshold rank r={r} exceeds sample count n={n}")
    return order_statistic(s, r), r


def compute_deficits(s: SampleSet, u: float) -> DeficitSet:
    """Deficits u - X of the samples strictly below u; ties at u are excluded."""
    ordered = s.sorted_values
    below = ordered[: int(np.searchsorted(ordered, u, side="left"))]
    return DeficitSet(u=u, deficits=u - below)


def gpd_log_likelihood_sigma(d: DeficitSet, p: GpdParams) -> float:
    """Sum of GPD log densities over the deficits."""
    if len(d) == 0:
        return 0.0
    return float(np.sum(gpd_logpdf(d.deficits, p)))


def _negative_loglik(theta: np.ndarray, y: np.ndarray) -> float:
    log_sigma, xi = float(theta[0]), float(theta[1])
    # the likelihood is unbounded for xi < -1 as sigma approaches -xi * max(y)
    if xi <= XI_LOWER_LIMIT or not math.isfinite(log_sigma):
        return math.inf
    sigma = math.exp(log_sigma)
    z = y / sigma
    if xi < 0 and 1.0 + xi * z[-1] <= 0:
        return math.inf
    value = y.size * log_sigma + float(np.sum(_log1p_over_xi(z, xi) + np.log1p(xi * z)))
    return value if math.isfinite(value) else math.inf


def _mle_starts(y: np.ndarray) -> list[tuple[float, float]]:
    """Moment-based start plus fixed perturbations, each moved inside the support."""
    mean = float(np.mean(y))
    var = float(np.var(y, ddof=1))
    ratio = mean * mean / var
    xi0 = 0.5 * (1.0 - ratio)
    sigma0 = 0.5 * mean * (1.0 + ratio)
    candidates = [
        (sigma0, xi0),
        (mean, 0.0),
        (sigma0 * 1.5, xi0 - 0.2),
        (sigma0 * 0.7, xi0 + 0.2),
        (sigma0, -0.5),
    ]
    y_max = float(y[-1])
    starts = []
    for sigma, xi in candidates:
        xi = max(xi, -0.95)
        if xi < 0:
            sigma = max(sigma, -xi * y_max * 1.05)
        starts.append((math.log(sigma), xi))
    return starts


def fit_gpd_mle(d: DeficitSet) -> GpdParams:
    """Maximum likelihood GPD fit by multi-start Nelder-Mead over (ln sigma, xi).

    The shape is restricted to xi > -1: below that the likelihood grows without
    bound as sigma approaches -xi max(y). Deficits with a hard endpoint (a uniform
    or Rayleigh-like lower tail) therefore return a shape arbitrarily close to -1;
    callers that need regular asymptotics have to check for that boundary.

    Raises:
        InsufficientSamplesError: Fewer than ten deficits
        FitError: Degenerate deficits or no start converged to a finite likelihood
    """
    if len(d) < MIN_DEFICITS_FOR_FIT:
        raise InsufficientSamplesError(
            f"GPD fit needs at least {MIN_DEFICITS_FOR_FIT} deficits, got {len(d)}"
        )
    y = np.sort(d.deficits)
    if y[0] == y[-1]:
        raise FitError("All deficits are equal; GPD fit is degenerate")

    best = None
    for start in _mle_starts(y):
        result = optimize.minimize(
            _negative_loglik,
            np.asarray(start),
            args=(y,),
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-10, "maxiter": 4000, "maxfev": 8000},
        )
        if math.isfinite(result.fun) and (best is None or result.fun < best.fun):
            best = result
    if best is None:
        raise FitError("GPD maximum likelihood did not reach a finite likelihood")
    return GpdParams(sigma=math.exp(best.x[0]), xi=float(best.x[1]))


def observed_information(d: DeficitSet, p: GpdParams) -> np.ndarray:
    """Observed information of (sigma, xi) by central differences of the log-likelihood.

    For negative shapes the steps shrink so that every evaluation point keeps the
    largest deficit inside the support and the shape above -1.

    Raises:
        InsufficientSamplesError: Empty deficit set
        FitError: The parameters sit on the support boundary or the Hessian is not finite
    """
    if len(d) == 0:
        raise InsufficientSamplesError("Observed information of an empty deficit set")
    theta = np.array([p.sigma, p.xi])
    steps = np.array([INFORMATION_STEP * p.sigma, min(INFORMATION_STEP, 0.25 * (p.xi + 1.0))])
    if p.xi < 0:
        y_max = float(np.max(d.deficits))
        margin = p.sigma + p.xi * y_max
        reach = steps[0] + steps[1] * y_max
        steps *= min(1.0, 0.25 * margin / reach) if reach > 0 else 1.0
    if not np.all(steps > 0):
        raise FitError(f"No room for finite differences at sigma={p.sigma}, xi={p.xi}")

    def loglik(v: np.ndarray) -> float:
        if v[0] <= 0:
            return -math.inf
        return gpd_log_likelihood_sigma(d, GpdParams(sigma=float(v[0]), xi=float(v[1])))

    hessian = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei = np.eye(2)[i] * steps[i]
            ej = np.eye(2)[j] * steps[j]
            hessian[i, j] = (
                loglik(theta + ei + ej)
                - loglik(theta + ei - ej)
                - loglik(theta - ei + ej)
                + loglik(theta - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    if not np.all(np.isfinite(hessian)):
        raise FitError("Observed information is not finite at the given parameters")
    return -0.5 * (hessian + hessian.T)


def expected_information(n: int, p: GpdParams) -> np.ndarray:
    """Fisher information of (sigma, xi) for n deficits, finite only for xi > -1/2."""
    if n <= 0:
        raise InsufficientSamplesError("Expected information needs at least one deficit")
    if p.xi <= -0.5:
        raise FitError(f"Expected information is infinite for xi={p.xi} <= -0.5")
    factor = n / ((1.0 + p.xi) * (1.0 + 2.0 * p.xi))
    return factor * np.array(
        [[(1.0 + p.xi) / p.sigma**2, -1.0 / p.sigma], [-1.0 / p.sigma, 2.0]]
    )


def mean_deficit_curve(s: SampleSet, thresholds: Sequence[float]) -> list[MeanDeficitPoint]:
    """Empirical mean deficit e(u) = mean(u - X | X < u) per threshold.

    Thresholds with no sample strictly below are omitted.
    """
    ordered = s.sorted_values
    cumulative = np.cumsum(ordered)
    points = []
    for u in thresholds:
        count = int(np.searchsorted(ordered, u, side="left"))
        if count == 0:
            continue
        points.append(MeanDeficitPoint(float(u), float(u - cumulative[count - 1] / count), count))
    return points


def write_mean_deficit_csv(path: Path, points: Sequence[MeanDeficitPoint]) -> None:
    """Write a mean-deficit curve as ``u,e_hat,count``."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["u", "e_hat", "count"])
        for point in points:
            writer.writerow([f"{point.u:.17g}", f"{point.e_hat:.17g}", point.count])


CALIBRATION_GRID_POINTS = 50
CALIBRATION_WINDOW = 10
CALIBRATION_MIN_R2 = 0.98
CALIBRATION_FLAT_TOLERANCE = 0.02


def _window_is_linear(u: np.ndarray, e: np.ndarray) -> bool:
    fit = stats.linregress(u, e)
    if fit.rvalue**2 >= CALIBRATION_MIN_R2:
        return True
    # a flat curve (exponential tail) has no variance to explain
    residual = e - (fit.intercept + fit.slope * u)
    scale = float(np.mean(np.abs(e)))
    return scale > 0 and float(np.sqrt(np.mean(residual**2))) <= CALIBRATION_FLAT_TOLERANCE * scale


def linear_region_fraction(s: SampleSet) -> float:
    """Fraction of samples below the top of the linear region of the mean-deficit curve.

    Raises:
        CalibrationError: If no window of the curve is linear
    """
    n = len(s)
    ordered = s.sorted_values
    levels = np.geomspace(min(1.0, CALIBRATION_WINDOW / n), 1.0, CALIBRATION_GRID_POINTS)
    ranks = np.unique(np.clip(np.ceil(levels * n).astype(int), 1, n))
    thresholds = np.unique(ordered[ranks - 1])
    curve = mean_deficit_curve(s, thresholds)
    if len(curve) < CALIBRATION_WINDOW:
        raise CalibrationError(f"Mean-deficit curve has only {len(curve)} points")
    u = np.array([p.u for p in curve])
    e = np.array([p.e_hat for p in curve])

    top = None
    for start in range(len(curve) - CALIBRATION_WINDOW + 1):
        window = slice(start, start + CALIBRATION_WINDOW)
        if _window_is_linear(u[window], e[window]):
            top = u[start + CALIBRATION_WINDOW - 1]
        elif top is not None:
            break
    if top is None:
        raise CalibrationError("No linear region in the mean-deficit curve")
    return int(np.searchsorted(ordered, top, side="right")) / n


def calibrate_zeta(samples: Sequence[SampleSet]) -> float:
    """Median over locations of the linear-region threshold fraction.

    Raises:
        CalibrationError: If every location is skipped
    """
    fractions = []
    for index, s in enumerate(samples):
        try:
            fractions.append(linear_region_fraction(s))
        except CalibrationError as e:
            logger.warning("calibration_location_skipped", index=index, reason=str(e))
    if not fractions:
        raise CalibrationError(f"No linear mean-deficit region at any of {len(samples)} locations")
    zeta = float(np.median(fractions))
    logger.info(
        "zeta_calibrated",
        zeta=zeta,
        locations=len(fractions),
        skipped=len(samples) - len(fractions),
    )
    return zeta
