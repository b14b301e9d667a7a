"""CDI maps: Gaussian-process interpolation of per-location channel statistics.

A map is fitted on point estimates theta_hat(s_i) from prior locations and
returns the Gaussian predictive N(mu(s), sigma2(s)) at any location, which the
Bayesian estimators use as their prior.
"""

import csv
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import structlog
from pydantic import Field
from scipy import linalg, optimize
from scipy.spatial.distance import cdist, pdist

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from src.config_generator import ConfigGenerator
from src.errors import FitError
from src.models import ArrayModel, CdiObservation, GpHyperParams, Location
from src.stats_core import SampleSet, empirical_quantile, quantile_rank

logger = structlog.get_logger(__name__)

NUM_STARTS = 8
JITTER_START = 1e-10
JITTER_MAX = 1e-2
DENSITY_RANGE = (1e-12, 1e12)
_PENALTY = 1e25


class CdiMap(ArrayModel):
    """Fitted GP map with its factorized kernel matrix."""

    observations: tuple[CdiObservation, ...] = Field(description="Merged training observations")
    hyper: GpHyperParams = Field(description="Kernel hyperparameters and constant mean")
    log_domain: bool = Field(description="Whether theta is a log-transformed statistic")
    duplicates_merged: int = Field(default=0, ge=0, description="Observations averaged away")
    coords: np.ndarray = Field(description="Training coordinates, shape (n, 3)")
    chol: np.ndarray = Field(description="Lower Cholesky factor of the training covariance")
    alpha: np.ndarray = Field(description="K^-1 (theta - mean)")
    jitter: float = Field(default=0.0, ge=0.0, description="Diagonal jitter added to factorize")


def _sq_exp(
    a: np.ndarray, b: np.ndarray, signal_variance: float, lengthscale: float
) -> np.ndarray:
    return signal_variance * np.exp(-0.5 * cdist(a, b, "sqeuclidean") / lengthscale**2)


def _merge_duplicates(
    obs: Sequence[CdiObservation],
) -> tuple[list[CdiObservation], int]:
    """Average observations that share coordinates."""
    groups: dict[tuple[float, float, float], list[CdiObservation]] = {}
    for o in obs:
        groups.setdefault(o.location.coords, []).append(o)
    merged = [
        CdiObservation(
            location=group[0].location,
            theta_hat=float(np.mean([o.theta_hat for o in group])),
        )
        for group in groups.values()
    ]
    return merged, len(obs) - len(merged)


def _factorize(cov: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    """Cholesky factor, escalating diagonal jitter by decades when needed.

    Raises:
        FitError: If the matrix is not positive definite even at the largest jitter
    """
    jitter = 0.0
    scale = signal_variance if signal_variance > 0 else 1.0
    eye = np.eye(cov.shape[0])
    while True:
        try:
            chol = linalg.cholesky(cov + jitter * eye, lower=True)
        except linalg.LinAlgError:
            pass
        else:
            if jitter > 0:
                logger.warning("gp_jitter_added", jitter=jitter)
            return chol, jitter
        jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * scale * (1.0 + 1e-9):
            raise FitError(
                f"Kernel matrix is not positive definite even with jitter {JITTER_MAX:g} x sigma^2"
            )


def _negative_lml(
    log_params: np.ndarray, sq_dist: np.ndarray, centered: np.ndarray, base_jitter: float
) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient in log-parameter space."""
    s2, ell, nugget = np.exp(log_params)
    n = centered.size
    shape = np.exp(-0.5 * sq_dist / ell**2)
    cov = s2 * shape + (nugget + base_jitter) * np.eye(n)
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        return _PENALTY, np.zeros(3)
    alpha = linalg.cho_solve((chol, True), centered)
    lml = -0.5 * centered @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)

    inner = np.outer(alpha, alpha) - linalg.cho_solve((chol, True), np.eye(n))
    d_s2 = s2 * shape
    d_ell = s2 * shape * sq_dist / ell**2
    grad = 0.5 * np.array(
        [np.sum(inner * d_s2), np.sum(inner * d_ell), nugget * np.trace(inner)]
    )
    return -lml, -grad


def _optimize_hyper(coords: np.ndarray, theta: np.ndarray) -> GpHyperParams:
    """Multi-start L-BFGS-B over (log sigma^2, log lengthscale, log nugget)."""
    mean = float(np.mean(theta))
    centered = theta - mean
    variance = max(float(np.var(theta)), 1e-12)
    distances = pdist(coords)
    extent = max(float(distances.max()), 1.0)
    closest = max(float(distances[distances > 0].min()), 1e-3)
    bounds = [
        (math.log(variance * 1e-6), math.log(variance * 1e2)),
        (math.log(closest * 0.1), math.log(extent * 10.0)),
        (math.log(variance * 1e-8), math.log(variance * 10.0)),
    ]
    sq_dist = cdist(coords, coords, "sqeuclidean")
    base_jitter = JITTER_START * variance

    starts = [
        (variance * (1.0 - noise_ratio), extent * ell_ratio, variance * noise_ratio)
        for ell_ratio in (0.05, 0.2, 0.5, 1.0)
        for noise_ratio in (0.01, 0.3)
    ]
    best = None
    for start in starts[:NUM_STARTS]:
        x0 = np.clip(np.log(start), [b[0] for b in bounds], [b[1] for b in bounds])
        result = optimize.minimize(
            _negative_lml,
            x0,
            args=(sq_dist, centered, base_jitter),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if result.fun < _PENALTY and (best is None or result.fun < best.fun):
            best = result
    if best is None:
        raise FitError("GP hyperparameter search found no positive definite kernel")
    s2, ell, nugget = np.exp(best.x)
    return GpHyperParams(
        signal_variance=float(s2), lengthscale_m=float(ell), nugget=float(nugget), mean=mean
    )


def fit_cdi_map(
    obs: Sequence[CdiObservation],
    log_domain: bool,
    hyper: Optional[GpHyperParams] = None,
) -> CdiMap:
    """Fit a GP map to point estimates.

    Hyperparameters maximize the log marginal likelihood unless given
    explicitly, in which case they are used as-is.

    Raises:
        ValueError: If fewer than two distinct locations are observed
        FitError: If the kernel cannot be factorized
    """
    merged, duplicates = _merge_duplicates(obs)
    if duplicates:
        logger.warning("gp_duplicate_locations_merged", count=duplicates)
    if len(merged) < 2:
        raise ValueError(f"A CDI map needs at least 2 distinct locations, got {len(merged)}")

    coords = np.array([o.location.coords for o in merged], dtype=float)
    theta = np.array([o.theta_hat for o in merged], dtype=float)
    if hyper is None:
        hyper = _optimize_hyper(coords, theta)

    cov = _sq_exp(coords, coords, hyper.signal_variance, hyper.lengthscale_m)
    cov += hyper.nugget * np.eye(len(merged))
    chol, jitter = _factorize(cov, hyper.signal_variance)
    alpha = linalg.cho_solve((chol, True), theta - hyper.mean)
    logger.info(
        "cdi_map_fitted",
        observations=len(merged),
        log_domain=log_domain,
        signal_variance=hyper.signal_variance,
        lengthscale_m=hyper.lengthscale_m,
        nugget=hyper.nugget,
        mean=hyper.mean,
    )
    return CdiMap(
        observations=tuple(merged),
        hyper=hyper,
        log_domain=log_domain,
        duplicates_merged=duplicates,
        coords=coords,
        chol=chol,
        alpha=alpha,
        jitter=jitter,
    )


FLAT_SIGNAL_VARIANCE = 1e-12


def noninformative_map(
    locations: Sequence[Location], theta: Sequence[float], log_domain: bool, variance: float
) -> CdiMap:
    """Map predicting mean(theta) with the given variance at every location.

    Used in place of a map whose fit failed. With no theta the mean is 0.

    Raises:
        ValueError: If fewer than two distinct locations are given
    """
    mean = float(np.mean(theta)) if len(theta) else 0.0
    hyper = GpHyperParams(
        signal_variance=FLAT_SIGNAL_VARIANCE, lengthscale_m=1.0, nugget=variance, mean=mean
    )
    obs = [CdiObservation(location=loc, theta_hat=mean) for loc in locations]
    return fit_cdi_map(obs, log_domain=log_domain, hyper=hyper)


def predict_many(cdi_map: CdiMap, locations: Sequence[Location]) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances at several locations."""
    hyper = cdi_map.hyper
    targets = np.array([loc.coords for loc in locations], dtype=float).reshape(-1, 3)
    cross = _sq_exp(targets, cdi_map.coords, hyper.signal_variance, hyper.lengthscale_m)
    mu = hyper.mean + cross @ cdi_map.alpha
    v = linalg.solve_triangular(cdi_map.chol, cross.T, lower=True)
    prior_var = hyper.signal_variance + hyper.nugget
    sigma2 = np.clip(prior_var - np.sum(v * v, axis=0), np.finfo(float).tiny, prior_var)
    return mu, sigma2


def predict(cdi_map: CdiMap, loc: Location) -> tuple[float, float]:
    """Predictive (mu, sigma2) at one location; sigma2 includes the nugget."""
    mu, sigma2 = predict_many(cdi_map, [loc])
    return float(mu[0]), float(sigma2[0])


def map_mode(cdi_map: CdiMap, loc: Location) -> float:
    """Most likely statistic value: exp(mu - sigma2) on log-domain maps, mu otherwise."""
    mu, sigma2 = predict(cdi_map, loc)
    return math.exp(mu - sigma2) if cdi_map.log_domain else mu


def estimate_theta_quantile(s: SampleSet, epsilon: float) -> float:
    """Log of the empirical epsilon-quantile."""
    return math.log(empirical_quantile(s, epsilon))


def estimate_theta_density(s: SampleSet, epsilon: float) -> float:
    """Density of Y = ln X at its epsilon-quantile from order-statistic spacings.

    Uses f = ((hi - lo) / n) / (Y_(hi) - Y_(lo)) around r = ceil(n epsilon) with
    half-width k = ceil(sqrt(n epsilon (1 - epsilon))), clipped to the sample
    range. Zero spacings double k.

    Raises:
        ValueError: If fewer than two samples are given
        FitError: If all samples are equal
    """
    n = len(s)
    if n < 2:
        raise ValueError(f"Density estimate needs at least 2 samples, got {n}")
    log_sorted = np.log(s.sorted_values)
    r = quantile_rank(n, epsilon)
    k = max(1, math.ceil(math.sqrt(n * epsilon * (1.0 - epsilon))))
    while True:
        lo = max(1, r - k)
        hi = min(n, r + k)
        spacing = float(log_sorted[hi - 1] - log_sorted[lo - 1])
        if spacing > 0:
            density = ((hi - lo) / n) / spacing
            return float(np.clip(density, *DENSITY_RANGE))
        if lo == 1 and hi == n:
            raise FitError("All samples are equal; density at the quantile is undefined")
        k *= 2


OBSERVATION_HEADER = ["location_id", "x", "y", "z", "theta_hat"]


def save_map(cdi_map: CdiMap, csv_path: Path, toml_path: Path) -> None:
    """Persist observations as CSV and hyperparameters as a TOML block."""
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(OBSERVATION_HEADER)
        for o in cdi_map.observations:
            loc = o.location
            writer.writerow(
                [loc.id, f"{loc.x:.17g}", f"{loc.y:.17g}", f"{loc.z:.17g}", f"{o.theta_hat:.17g}"]
            )
    toml_path.write_text(
        ConfigGenerator().generate_map_block(cdi_map.hyper, cdi_map.log_domain), encoding="utf-8"
    )
    logger.info("cdi_map_saved", csv=str(csv_path), toml=str(toml_path))


def load_map(csv_path: Path, toml_path: Path) -> CdiMap:
    """Rebuild a persisted map with its stored hyperparameters.

    Raises:
        FileNotFoundError: If either file is missing
        ValueError: If either file is malformed
    """
    for path in (csv_path, toml_path):
        if not path.exists():
            raise FileNotFoundError(f"Map file not found: {path}")
    try:
        with open(toml_path, "rb") as f:
            block = tomllib.load(f)["hyperparameters"]
        log_domain = bool(block.pop("log_domain"))
        hyper = GpHyperParams(**block)
    except (tomllib.TOMLDecodeError, KeyError, TypeError) as e:
        raise ValueError(f"Invalid map hyperparameter file {toml_path}: {e}") from e

    obs = []
    with open(csv_path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        if next(reader, None) != OBSERVATION_HEADER:
            raise ValueError(f"Unexpected observation header in {csv_path}")
        for row in reader:
            if not row:
                continue
            loc = Location(id=int(row[0]), x=float(row[1]), y=float(row[2]), z=float(row[3]))
            obs.append(CdiObservation(location=loc, theta_hat=float(row[4])))
    return fit_cdi_map(obs, log_domain=log_domain, hyper=hyper)
