"""Rate-selection experiments: build priors, run every method, score outcomes.

One experiment repeats ``redraws`` times: draw prior and test locations, fit
the three CDI maps (log quantile, GPD shape, log density) from the prior
locations, then at every test location and local sample budget run each
enabled method, select R = I_min and score the rate against reference draws.
"""

import csv
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence

import numpy as np
import structlog

from src.baselines import evt_baseline_interval, nonpar_baseline_interval, nonpar_baseline_rank
from src.bayes_evt import infer_evt_bayes
from src.bayes_nonpar import infer_nonpar_bayes
from src.channel_sim import (
    MIN_TAIL_SAMPLES,
    OutageOracle,
    build_grid,
    draw_capacity_samples,
    ground_truth_quantile,
    sample_locations_thomas,
    sample_locations_uniform,
    synthesize_profile,
)
from src.dataset_io import Dataset, read_dataset
from src.errors import ConfigError, ExperimentError, FitError, InsufficientSamplesError
from src.evt_core import compute_deficits, fit_gpd_mle, select_threshold
from src.gp_map import (
    CdiMap,
    estimate_theta_density,
    estimate_theta_quantile,
    fit_cdi_map,
    noninformative_map,
    predict,
)
from src.models import (
    CdiObservation,
    ConfidenceInterval,
    ExperimentConfig,
    GaussianPrior,
    Location,
    Method,
    MethodResult,
    MultipathProfile,
    QuantileSpec,
    ScenarioConfig,
    Sidedness,
    SummaryRow,
)
from src.seeding import child_rng, child_seed
from src.stats_core import SampleSet, ecdf_points, empirical_quantile, order_statistic_coverage

logger = structlog.get_logger(__name__)

RESULTS_HEADER = [
    "redraw",
    "location_id",
    "n",
    "method",
    "rate",
    "p_out",
    "throughput_norm",
    "c_eps_truth",
    "flag",
]
SUMMARY_HEADER = [
    "method",
    "n",
    "count",
    "meta_probability",
    "meta_probability_se",
    "analytic_meta_probability",
    "throughput_q1",
    "throughput_q2",
    "throughput_q3",
]
ECDF_HEADER = ["method", "n", "p_out", "ecdf"]
RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
NONINFORMATIVE_FLAG = "noninformative_prior"
NONINFORMATIVE_VARIANCE = 10.0
"""Predictive variance of a fallback map, wide on both the log and the shape scale."""
PRIOR_MAPS_USED = {
    Method.BAYES_NONPAR: ("quantile", "density"),
    Method.BAYES_EVT: ("quantile", "xi"),
}


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def select_rate(interval: ConfidenceInterval) -> float:
    """Transmission rate R = I_min, clamped at zero.

    Raises:
        ValueError: If the interval is two-sided
    """
    if interval.sided != Sidedness.ONE:
        raise ValueError("Rate selection needs a one-sided interval")
    return max(0.0, interval.lower)


def eval_outage(
    profile: MultipathProfile,
    cfg: ScenarioConfig,
    rate: float,
    n_ref: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of n_ref fresh capacity draws strictly below the rate."""
    if rate <= 0:
        return 0.0
    samples = draw_capacity_samples(profile, cfg, n_ref, rng)
    return int(np.count_nonzero(samples.values < rate)) / n_ref


def meta_probability(results: Sequence[MethodResult], epsilon: float) -> float:
    """Fraction of results whose outage probability meets the target.

    Raises:
        ValueError: If results is empty
    """
    if not results:
        raise ValueError("Meta-probability of an empty result set")
    return sum(1 for r in results if r.p_out <= epsilon) / len(results)


def normalized_throughput(rate: float, p_out: float, c_eps: float, epsilon: float) -> float:
    """R (1 - p_out) / (C_eps (1 - eps)); 1 for the genie rate.

    Raises:
        ValueError: If c_eps is not positive
    """
    if not c_eps > 0:
        raise ValueError(f"c_eps must be positive, got {c_eps}")
    return rate * (1.0 - p_out) / (c_eps * (1.0 - epsilon))


# ---------------------------------------------------------------------------
# Bias limit
# ---------------------------------------------------------------------------


class BiasLimitPoint(NamedTuple):
    """Empirical coverage of the biased bound at one sample size."""

    n: int
    coverage: float
    coverage_se: float


def bias_limit_experiment(
    profile: MultipathProfile,
    cfg: ScenarioConfig,
    spec: QuantileSpec,
    b: float,
    n_list: Sequence[int],
    reps: int,
    rng: Optional[np.random.Generator] = None,
    n_ref: int = 1_000_000,
    c_eps: Optional[float] = None,
) -> list[BiasLimitPoint]:
    """Coverage P(C_eps >= empirical quantile + b) for each n.

    A consistent estimator plus a fixed bias b drives coverage to 0 (b > 0)
    or 1 (b < 0) as n grows. The truth is estimated from n_ref draws unless
    c_eps is given.

    Raises:
        ValueError: If b == 0, reps < 1 or any n < 1
    """
    if b == 0:
        raise ValueError("Bias must be non-zero")
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}")
    if any(n < 1 for n in n_list):
        raise ValueError("Every sample size must be at least 1")
    if rng is None:
        rng = child_rng(cfg.master_seed, purpose="bias-limit")
    if c_eps is None:
        c_eps = ground_truth_quantile(profile, cfg, spec.epsilon, n_ref, rng)

    points = []
    for n in n_list:
        covered = 0
        for _ in range(reps):
            local = draw_capacity_samples(profile, cfg, n, rng)
            if c_eps >= empirical_quantile(local, spec.epsilon) + b:
                covered += 1
        coverage = covered / reps
        points.append(
            BiasLimitPoint(n=n, coverage=coverage, coverage_se=_binomial_se(coverage, reps))
        )
        logger.debug("bias_limit_point", n=n, coverage=coverage, bias=b)
    return points


def _binomial_se(p: float, count: int) -> float:
    return math.sqrt(p * (1.0 - p) / count) if count else math.nan


# ---------------------------------------------------------------------------
# Prior construction
# ---------------------------------------------------------------------------


class PriorStatistics(NamedTuple):
    """Per-location statistics feeding the three CDI maps."""

    log_quantile: float
    xi: Optional[float]
    log_density: float


class PriorMaps(NamedTuple):
    """CDI maps fitted from one set of prior locations.

    ``fallbacks`` names the maps replaced by a non-informative map after their fit failed.
    """

    quantile: CdiMap
    xi: CdiMap
    density: CdiMap
    fallbacks: tuple[str, ...] = ()


def prior_statistics(
    samples: SampleSet, spec: QuantileSpec, zeta: float, r_min: int
) -> PriorStatistics:
    """Log quantile, GPD shape (None if the fit fails) and log density of one location."""
    try:
        u, _ = select_threshold(samples, zeta, r_min)
        xi: Optional[float] = fit_gpd_mle(compute_deficits(samples, u)).xi
    except (FitError, InsufficientSamplesError) as e:
        logger.warning("prior_shape_fit_failed", reason=str(e))
        xi = None
    return PriorStatistics(
        log_quantile=estimate_theta_quantile(samples, spec.epsilon),
        xi=xi,
        log_density=math.log(estimate_theta_density(samples, spec.epsilon)),
    )


def _fit_or_fallback(
    name: str,
    obs: Sequence[CdiObservation],
    locations: Sequence[Location],
    log_domain: bool,
) -> tuple[CdiMap, bool]:
    try:
        return fit_cdi_map(obs, log_domain=log_domain), False
    except (FitError, ValueError) as e:
        logger.warning("prior_map_fallback", map=name, reason=str(e))
        theta = [o.theta_hat for o in obs]
        return noninformative_map(locations, theta, log_domain, NONINFORMATIVE_VARIANCE), True


def fit_prior_maps(
    locations: Sequence[Location], statistics: Sequence[PriorStatistics]
) -> PriorMaps:
    """Fit the log-quantile, shape and log-density maps.

    A map that cannot be fitted is replaced by a non-informative one and
    listed in ``PriorMaps.fallbacks``.
    """
    quantile_obs = [
        CdiObservation(location=loc, theta_hat=s.log_quantile)
        for loc, s in zip(locations, statistics)
    ]
    xi_obs = [
        CdiObservation(location=loc, theta_hat=s.xi)
        for loc, s in zip(locations, statistics)
        if s.xi is not None
    ]
    density_obs = [
        CdiObservation(location=loc, theta_hat=s.log_density)
        for loc, s in zip(locations, statistics)
    ]
    fitted = {
        name: _fit_or_fallback(name, obs, locations, log_domain)
        for name, obs, log_domain in (
            ("quantile", quantile_obs, True),
            ("xi", xi_obs, False),
            ("density", density_obs, True),
        )
    }
    return PriorMaps(
        quantile=fitted["quantile"][0],
        xi=fitted["xi"][0],
        density=fitted["density"][0],
        fallbacks=tuple(name for name, (_, fell_back) in fitted.items() if fell_back),
    )


def simulate_dataset(
    cfg: ScenarioConfig, locations: Sequence[Location], samples_per_location: int
) -> Dataset:
    """Capacity samples at each location, seeded by location id."""
    samples = {
        loc.id: draw_capacity_samples(
            synthesize_profile(cfg, loc),
            cfg,
            samples_per_location,
            child_rng(cfg.master_seed, loc.id, purpose="prior-samples"),
        )
        for loc in locations
    }
    return Dataset(locations=list(locations), samples=samples)


# ---------------------------------------------------------------------------
# Per-location evaluation
# ---------------------------------------------------------------------------


class LocationTask(NamedTuple):
    """Everything one worker needs to evaluate a test location."""

    cfg: ExperimentConfig
    redraw: int
    location: Location
    maps: PriorMaps
    local: SampleSet
    oracle: OutageOracle


def _interval_for(
    method: Method, task: LocationTask, local: SampleSet, n: int
) -> ConfidenceInterval:
    cfg, loc = task.cfg, task.location
    spec = cfg.spec
    if method == Method.BAYES_NONPAR:
        mu, sigma2 = predict(task.maps.quantile, loc)
        return infer_nonpar_bayes(
            GaussianPrior(mu=mu, sigma2=sigma2),
            local,
            spec,
            task.maps.density,
            loc,
            density_floor=cfg.density_floor,
        )
    if method == Method.BAYES_EVT:
        seed = child_seed(
            cfg.scenario.master_seed, task.redraw, loc.id, n, method.sort_key, purpose="mcmc"
        )
        return infer_evt_bayes(
            task.maps.quantile,
            task.maps.xi,
            loc,
            local,
            spec,
            cfg.zeta,
            cfg.r_min,
            cfg.mcmc,
            seed=seed,
        )
    if method == Method.BASELINE_NONPAR:
        return nonpar_baseline_interval(local, spec)
    return evt_baseline_interval(
        local, spec, cfg.zeta, cfg.r_min, interval_method=cfg.evt_interval_method
    )


def evaluate_location(task: LocationTask) -> list[MethodResult]:
    """Run every enabled method for every sample budget at one test location.

    A failing method yields a zero-rate row whose flag names the error. Methods
    whose prior came from a fallback map carry the noninformative_prior flag.
    """
    cfg, oracle = task.cfg, task.oracle
    eps = cfg.spec.epsilon
    log = logger.bind(redraw=task.redraw, location_id=task.location.id)
    methods = sorted(set(cfg.methods), key=lambda m: m.sort_key)
    rows = []
    for n in cfg.n_sweep:
        local = task.local.prefix(n)
        for method in methods:
            try:
                interval = _interval_for(method, task, local, n)
                rate = select_rate(interval)
                flags = list(interval.flags)
                if any(name in task.maps.fallbacks for name in PRIOR_MAPS_USED.get(method, ())):
                    flags.append(NONINFORMATIVE_FLAG)
                flag = ";".join(flags)
            except Exception as e:
                log.warning("method_failed", method=method.value, n=n, error=str(e))
                rate, flag = 0.0, f"error:{type(e).__name__}"
            p_out = oracle.p_out(rate)
            rows.append(
                MethodResult(
                    redraw=task.redraw,
                    location_id=task.location.id,
                    n=n,
                    method=method,
                    rate=rate,
                    p_out=p_out,
                    normalized_throughput=normalized_throughput(rate, p_out, oracle.c_eps, eps),
                    c_eps_truth=oracle.c_eps,
                    flag=flag,
                )
            )
    log.debug("location_evaluated", rows=len(rows))
    return rows


def failed_location_rows(
    cfg: ExperimentConfig, redraw: int, location_id: int, error: Exception
) -> list[MethodResult]:
    """Zero-rate rows without a ground truth for a location that could not be evaluated."""
    flag = f"error:{type(error).__name__}"
    return [
        MethodResult(
            redraw=redraw,
            location_id=location_id,
            n=n,
            method=method,
            rate=0.0,
            p_out=0.0,
            normalized_throughput=0.0,
            c_eps_truth=math.nan,
            flag=flag,
        )
        for n in cfg.n_sweep
        for method in sorted(set(cfg.methods), key=lambda m: m.sort_key)
    ]


def evaluate_location_safely(task: LocationTask) -> list[MethodResult]:
    """evaluate_location, turning any failure into flagged rows."""
    try:
        return evaluate_location(task)
    except Exception as e:
        logger.error(
            "location_failed",
            redraw=task.redraw,
            location_id=task.location.id,
            stage="evaluation",
            error=str(e),
        )
        return failed_location_rows(task.cfg, task.redraw, task.location.id, e)


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


class ExperimentRunner:
    """Runs the redraw loop for one configuration.

    Prior statistics are cached by location id, since a location's prior
    samples depend only on the master seed and the id.
    """

    def __init__(self, cfg: ExperimentConfig, dataset: Optional[Dataset] = None):
        self.cfg = cfg
        self.dataset = dataset
        if dataset is None and cfg.dataset_path is not None:
            self.dataset = read_dataset(cfg.dataset_path)
        self._validate()
        self.grid = self.dataset.locations if self.dataset else build_grid(cfg.scenario)
        self._statistics: dict[int, PriorStatistics] = {}

    def _validate(self) -> None:
        cfg = self.cfg
        n_max = max(cfg.n_sweep, default=0)
        if not cfg.n_sweep:
            raise ConfigError("n_sweep must not be empty")
        if not cfg.methods:
            raise ConfigError("At least one method must be enabled")
        if self.dataset is None:
            if cfg.n_ref * cfg.spec.epsilon < MIN_TAIL_SAMPLES:
                raise ConfigError(
                    f"n_ref * spec.epsilon must be at least {MIN_TAIL_SAMPLES}, "
                    f"got {cfg.n_ref * cfg.spec.epsilon:g}"
                )
            return
        short = [
            loc_id for loc_id, s in self.dataset.samples.items() if len(s) <= max(n_max, 1)
        ]
        if short:
            raise ConfigError(
                f"Locations {short[:5]} hold no samples beyond the largest n_sweep entry {n_max}"
            )

    def prior_samples(self, loc: Location) -> SampleSet:
        if self.dataset is not None:
            return self.dataset.samples[loc.id]
        scenario = self.cfg.scenario
        return draw_capacity_samples(
            synthesize_profile(scenario, loc),
            scenario,
            self.cfg.m,
            child_rng(scenario.master_seed, loc.id, purpose="prior-samples"),
        )

    def statistics_for(self, loc: Location) -> PriorStatistics:
        """Cached prior statistics of a training location."""
        if loc.id not in self._statistics:
            cfg = self.cfg
            self._statistics[loc.id] = prior_statistics(
                self.prior_samples(loc), cfg.spec, cfg.zeta, cfg.r_min
            )
        return self._statistics[loc.id]

    def draw_locations(self, redraw: int) -> tuple[list[Location], list[Location]]:
        """Prior and test locations of one redraw."""
        cfg = self.cfg
        rng = child_rng(cfg.scenario.master_seed, redraw, purpose="locations")
        if self.dataset is not None or cfg.location_sampling == "uniform":
            return sample_locations_uniform(self.grid, cfg.d, cfg.d_test, rng)
        return sample_locations_thomas(cfg.scenario, self.grid, cfg.d, cfg.d_test, rng)

    def _task(self, redraw: int, loc: Location, maps: PriorMaps) -> LocationTask:
        cfg = self.cfg
        scenario = cfg.scenario
        seed = scenario.master_seed
        n_max = max(cfg.n_sweep)
        if self.dataset is not None:
            values = self.dataset.samples[loc.id].values
            order = child_rng(seed, redraw, loc.id, purpose="local").permutation(values.size)
            shuffled = values[order]
            held_out = SampleSet(values=shuffled[n_max:])
            oracle = OutageOracle(held_out, held_out, cfg.spec.epsilon)
            local = SampleSet(values=shuffled[:n_max])
        else:
            profile = synthesize_profile(scenario, loc)
            oracle = OutageOracle.simulate(
                profile,
                scenario,
                cfg.spec.epsilon,
                cfg.n_ref,
                child_rng(seed, redraw, loc.id, purpose="truth"),
                child_rng(seed, redraw, loc.id, purpose="evaluation"),
            )
            local = (
                draw_capacity_samples(
                    profile, scenario, n_max, child_rng(seed, redraw, loc.id, purpose="local")
                )
                if n_max > 0
                else SampleSet(values=[])
            )
        return LocationTask(cfg, redraw, loc, maps, local, oracle)

    def _tasks(
        self,
        redraw: int,
        test: Sequence[Location],
        maps: PriorMaps,
        failed: list[MethodResult],
    ) -> Iterator[LocationTask]:
        """Tasks for the test locations; locations whose setup fails go to ``failed``."""
        for loc in test:
            try:
                task = self._task(redraw, loc, maps)
            except Exception as e:
                logger.error(
                    "location_failed",
                    redraw=redraw,
                    location_id=loc.id,
                    stage="setup",
                    error=str(e),
                )
                failed.extend(failed_location_rows(self.cfg, redraw, loc.id, e))
                continue
            yield task

    def run_redraw(
        self, redraw: int, executor: Optional[ProcessPoolExecutor] = None
    ) -> list[MethodResult]:
        """Results of one redraw, in test-location order.

        Locations that fail contribute rows flagged ``error:<type>`` and the
        redraw goes on with the remaining ones.
        """
        log = logger.bind(redraw=redraw)
        candidates, test = self.draw_locations(redraw)
        train: list[Location] = []
        statistics: list[PriorStatistics] = []
        for loc in candidates:
            try:
                statistics.append(self.statistics_for(loc))
            except (FitError, InsufficientSamplesError, ValueError) as e:
                log.warning("prior_location_skipped", location_id=loc.id, error=str(e))
                continue
            train.append(loc)
        maps = fit_prior_maps(train, statistics)
        log.info(
            "redraw_maps_fitted",
            prior_locations=len(train),
            test_locations=len(test),
            fallbacks=list(maps.fallbacks),
        )

        failed: list[MethodResult] = []
        tasks = self._tasks(redraw, test, maps, failed)
        if executor is None:
            batches: Iterable[list[MethodResult]] = map(evaluate_location_safely, tasks)
        else:
            batches = executor.map(evaluate_location_safely, tasks)
        rows = [row for batch in batches for row in batch]
        rows.extend(failed)
        log.info("redraw_finished", rows=len(rows), failed_rows=len(failed))
        return rows

    def run(self) -> list[MethodResult]:
        """All result rows, sorted by redraw, location, n and method.

        Raises:
            ExperimentError: If a redraw fails; rows gathered so far are
                written to the output directory first
        """
        cfg = self.cfg
        results: list[MethodResult] = []
        executor = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        try:
            for redraw in range(cfg.redraws):
                try:
                    results.extend(self.run_redraw(redraw, executor))
                except Exception as e:
                    results.sort(key=lambda r: r.sort_key)
                    partial = write_results(cfg.output_dir / RESULTS_FILE, results)
                    logger.error("redraw_failed", redraw=redraw, error=str(e))
                    raise ExperimentError(f"Redraw {redraw} failed: {e}", partial) from e
        finally:
            if executor is not None:
                executor.shutdown()
        results.sort(key=lambda r: r.sort_key)
        return results


def run_experiment(cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> Path:
    """Run the experiment and write results and summary CSVs.

    Returns:
        Path of the results CSV
    """
    results = ExperimentRunner(cfg, dataset).run()
    path = write_results(cfg.output_dir / RESULTS_FILE, results)
    write_summary(cfg.output_dir / SUMMARY_FILE, summarize(results, cfg.spec))
    return path


# ---------------------------------------------------------------------------
# Aggregation and output
# ---------------------------------------------------------------------------


def analytic_meta_probability(n: int, spec: QuantileSpec) -> float:
    """Exact probability that the order-statistic baseline meets the outage target."""
    r = nonpar_baseline_rank(n, spec)
    return 1.0 if r is None else order_statistic_coverage(n, r, spec.epsilon)


def _group_order(key: tuple[Method, int]) -> tuple[int, int]:
    return key[0].sort_key, key[1]


def _scored(results: Iterable[MethodResult]) -> Iterator[MethodResult]:
    """Rows with a ground truth; failed locations have none and are not scored."""
    return (row for row in results if math.isfinite(row.c_eps_truth))


def summarize(results: Sequence[MethodResult], spec: QuantileSpec) -> list[SummaryRow]:
    """Meta-probability and throughput quartiles per method and n."""
    groups: dict[tuple[Method, int], list[MethodResult]] = defaultdict(list)
    for row in _scored(results):
        groups[(row.method, row.n)].append(row)

    summary = []
    for (method, n), rows in sorted(groups.items(), key=lambda kv: _group_order(kv[0])):
        meta = meta_probability(rows, spec.epsilon)
        q1, q2, q3 = np.percentile([r.normalized_throughput for r in rows], [25, 50, 75])
        summary.append(
            SummaryRow(
                method=method,
                n=n,
                count=len(rows),
                meta_probability=meta,
                meta_probability_se=_binomial_se(meta, len(rows)),
                analytic_meta_probability=(
                    analytic_meta_probability(n, spec)
                    if method == Method.BASELINE_NONPAR
                    else None
                ),
                throughput_q1=float(q1),
                throughput_q2=float(q2),
                throughput_q3=float(q3),
            )
        )
    return summary


def write_results(path: Path, results: Sequence[MethodResult]) -> Path:
    """Write result rows with 17 significant digits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for r in results:
            writer.writerow(
                [
                    r.redraw,
                    r.location_id,
                    r.n,
                    r.method.value,
                    f"{r.rate:.17g}",
                    f"{r.p_out:.17g}",
                    f"{r.normalized_throughput:.17g}",
                    f"{r.c_eps_truth:.17g}",
                    r.flag,
                ]
            )
    logger.info("results_written", path=str(path), rows=len(results))
    return path


def read_results(path: Path) -> list[MethodResult]:
    """Read a results CSV written by :func:`write_results`.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the header does not match
    """
    if not path.exists():
        raise FileNotFoundError(f"Results file not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != RESULTS_HEADER:
            raise ValueError(f"Unexpected results header {reader.fieldnames}")
        return [
            MethodResult(
                redraw=int(row["redraw"]),
                location_id=int(row["location_id"]),
                n=int(row["n"]),
                method=Method(row["method"]),
                rate=float(row["rate"]),
                p_out=float(row["p_out"]),
                normalized_throughput=float(row["throughput_norm"]),
                c_eps_truth=float(row["c_eps_truth"]),
                flag=row["flag"],
            )
            for row in reader
        ]


def _fmt_optional(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.17g}"


def write_summary(path: Path, summary: Sequence[SummaryRow]) -> Path:
    """Write aggregate rows; the analytic column is blank where undefined."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for s in summary:
            writer.writerow(
                [
                    s.method.value,
                    s.n,
                    s.count,
                    f"{s.meta_probability:.17g}",
                    f"{s.meta_probability_se:.17g}",
                    _fmt_optional(s.analytic_meta_probability),
                    f"{s.throughput_q1:.17g}",
                    f"{s.throughput_q2:.17g}",
                    f"{s.throughput_q3:.17g}",
                ]
            )
    logger.info("summary_written", path=str(path), rows=len(summary))
    return path


def outage_ecdf(results: Sequence[MethodResult]) -> list[tuple[Method, int, float, float]]:
    """ECDF of p_out per method and n, one point per distinct p_out."""
    groups: dict[tuple[Method, int], list[float]] = defaultdict(list)
    for row in _scored(results):
        groups[(row.method, row.n)].append(row.p_out)
    points = []
    for (method, n), values in sorted(groups.items(), key=lambda kv: _group_order(kv[0])):
        xs, fs = ecdf_points(np.asarray(values))
        points.extend((method, n, float(x), float(f)) for x, f in zip(xs, fs))
    return points


def write_ecdf(path: Path, results: Sequence[MethodResult]) -> Path:
    """Write the outage-probability ECDF of a results set."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ECDF_HEADER)
        for method, n, p_out, ecdf in outage_ecdf(results):
            writer.writerow([method.value, n, f"{p_out:.17g}", f"{ecdf:.17g}"])
    logger.info("ecdf_written", path=str(path))
    return path
