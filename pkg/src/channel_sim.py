"""Synthetic narrowband multipath scenario standing in for ray-traced channels.

A scenario is a rectangular cell sampled on a regular grid with one base
station. Every location gets a multipath profile whose total power follows a
log-distance pathloss with correlated log-normal shadowing, split between a
line-of-sight path and exponentially decaying scattered paths according to a
spatially varying Rice factor. Capacity samples are drawn by randomizing the
path phases.
"""

import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import structlog
from scipy import linalg

from src.errors import SamplingError
from src.models import Location, MultipathProfile, ScenarioConfig
from src.seeding import child_rng
from src.stats_core import SampleSet, empirical_quantile, quantile_standard_error

logger = structlog.get_logger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
REFERENCE_DISTANCE_M = 1.0
CAPACITY_CHUNK = 1 << 16
MIN_TAIL_SAMPLES = 100
_GRID_TOL = 1e-9


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    count = math.floor((hi - lo) / step + _GRID_TOL) + 1
    return lo + step * np.arange(count)


def build_grid(cfg: ScenarioConfig) -> list[Location]:
    """Row-major grid over the cell, edges included, at the user height."""
    xs = _axis(*cfg.cell_x_m, cfg.grid_step_m)
    ys = _axis(*cfg.cell_y_m, cfg.grid_step_m)
    return [
        Location(id=iy * xs.size + ix, x=float(x), y=float(y), z=cfg.user_height_m)
        for iy, y in enumerate(ys)
        for ix, x in enumerate(xs)
    ]


def reference_pathloss_db(cfg: ScenarioConfig) -> float:
    """Free-space loss at the 1 m reference distance."""
    wavelength = SPEED_OF_LIGHT / (cfg.carrier_frequency_ghz * 1e9)
    return 20.0 * math.log10(4.0 * math.pi * REFERENCE_DISTANCE_M / wavelength)


def _exponential_field(
    xs: np.ndarray, ys: np.ndarray, decorrelation_m: float, rng: np.random.Generator
) -> np.ndarray:
    """Unit-variance Gaussian field with separable exponential correlation on the grid."""

    def axis_factor(coords: np.ndarray) -> np.ndarray:
        corr = np.exp(-np.abs(coords[:, None] - coords[None, :]) / decorrelation_m)
        corr[np.diag_indices_from(corr)] += 1e-10
        return linalg.cholesky(corr, lower=True)

    white = rng.standard_normal((ys.size, xs.size))
    return axis_factor(ys) @ white @ axis_factor(xs).T


class ChannelScenario:
    """Grid, shadowing field and Rice-factor field of one scenario seed."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.xs = _axis(*cfg.cell_x_m, cfg.grid_step_m)
        self.ys = _axis(*cfg.cell_y_m, cfg.grid_step_m)
        self.grid = build_grid(cfg)
        self.shadowing_db = cfg.shadowing_sigma_db * _exponential_field(
            self.xs,
            self.ys,
            cfg.shadowing_decorrelation_m,
            child_rng(cfg.master_seed, purpose="shadowing"),
        )
        self.rice_k_db = cfg.rice_k_db + cfg.rice_k_sigma_db * _exponential_field(
            self.xs,
            self.ys,
            cfg.shadowing_decorrelation_m,
            child_rng(cfg.master_seed, purpose="rice-factor"),
        )
        self.pathloss_ref_db = reference_pathloss_db(cfg)
        logger.debug(
            "scenario_built",
            grid_points=len(self.grid),
            master_seed=cfg.master_seed,
            pathloss_ref_db=round(self.pathloss_ref_db, 3),
        )

    def contains(self, loc: Location) -> bool:
        """Whether the location's (x, y) lies inside the cell."""
        (x0, x1), (y0, y1) = self.cfg.cell_x_m, self.cfg.cell_y_m
        return (
            x0 - _GRID_TOL <= loc.x <= x1 + _GRID_TOL
            and y0 - _GRID_TOL <= loc.y <= y1 + _GRID_TOL
        )

    def _nearest_node(self, loc: Location) -> tuple[int, int]:
        ix = int(np.clip(round((loc.x - self.xs[0]) / self.cfg.grid_step_m), 0, self.xs.size - 1))
        iy = int(np.clip(round((loc.y - self.ys[0]) / self.cfg.grid_step_m), 0, self.ys.size - 1))
        return iy, ix

    def mean_rx_power_dbm(self, loc: Location) -> float:
        """Received power from pathloss plus shadowing at the location."""
        bx, by, bz = self.cfg.bs_position_m
        distance = max(
            math.dist(loc.coords, (bx, by, bz)),
            REFERENCE_DISTANCE_M,
        )
        iy, ix = self._nearest_node(loc)
        return (
            self.cfg.tx_power_dbm
            - self.pathloss_ref_db
            - 10.0 * self.cfg.pathloss_exponent * math.log10(distance / REFERENCE_DISTANCE_M)
            + float(self.shadowing_db[iy, ix])
        )

    def rice_factor(self, loc: Location) -> float:
        """Linear line-of-sight to scattered power ratio at the location."""
        iy, ix = self._nearest_node(loc)
        return 10.0 ** (float(self.rice_k_db[iy, ix]) / 10.0)

    def synthesize_profile(
        self, loc: Location, rng: Optional[np.random.Generator] = None
    ) -> MultipathProfile:
        """Multipath amplitudes at a location.

        Without an explicit generator the profile is a pure function of
        (master_seed, loc.id).

        Raises:
            ValueError: If the location is outside the cell
        """
        if not self.contains(loc):
            raise ValueError(f"Location {loc.id} at ({loc.x}, {loc.y}) is outside the cell")
        if rng is None:
            rng = child_rng(self.cfg.master_seed, loc.id, purpose="profile")

        total_w = 10.0 ** ((self.mean_rx_power_dbm(loc) - 30.0) / 10.0)
        num_paths = self.cfg.num_paths
        if num_paths == 1:
            return MultipathProfile(magnitudes=(math.sqrt(total_w),))

        kappa = self.rice_factor(loc)
        los_w = total_w * kappa / (kappa + 1.0)
        weights = np.exp(-np.arange(num_paths - 1) / self.cfg.nlos_decay_paths)
        weights *= rng.exponential(1.0, size=num_paths - 1)
        weights /= weights.sum()
        scattered_w = (total_w - los_w) * weights
        powers = np.concatenate(([los_w], scattered_w))
        return MultipathProfile(magnitudes=tuple(np.sqrt(powers).tolist()))


@lru_cache(maxsize=8)
def _scenario_from_json(cfg_json: str) -> ChannelScenario:
    return ChannelScenario(ScenarioConfig.model_validate_json(cfg_json))


def scenario_for(cfg: ScenarioConfig) -> ChannelScenario:
    """Shared scenario instance for a configuration."""
    return _scenario_from_json(cfg.model_dump_json())


def synthesize_profile(
    cfg: ScenarioConfig, loc: Location, rng: Optional[np.random.Generator] = None
) -> MultipathProfile:
    """Multipath profile at a location of the scenario described by cfg."""
    return scenario_for(cfg).synthesize_profile(loc, rng)


def draw_capacity_samples(
    profile: MultipathProfile, cfg: ScenarioConfig, n: int, rng: np.random.Generator
) -> SampleSet:
    """Capacities log2(1 + |sum a_k e^{j theta_k}|^2 / BN_0) for i.i.d. uniform phases.

    Draws with zero capacity are clamped to the smallest positive float and
    counted in the log.
    """
    if n < 1:
        raise ValueError(f"Sample count must be at least 1, got {n}")
    amplitudes = profile.as_array()
    noise_w = cfg.noise_power_w
    out = np.empty(n)
    for start in range(0, n, CAPACITY_CHUNK):
        stop = min(n, start + CAPACITY_CHUNK)
        theta = rng.uniform(-math.pi, math.pi, size=(stop - start, amplitudes.size))
        re = np.cos(theta) @ amplitudes
        im = np.sin(theta) @ amplitudes
        out[start:stop] = np.log1p((re * re + im * im) / noise_w) / math.log(2.0)

    clamped = int(np.count_nonzero(out <= 0))
    if clamped:
        out[out <= 0] = np.finfo(float).tiny
        logger.warning("capacity_samples_clamped", count=clamped, total=n)
    return SampleSet(values=out)


def ground_truth_quantile(
    profile: MultipathProfile,
    cfg: ScenarioConfig,
    epsilon: float,
    n_ref: int,
    rng: np.random.Generator,
) -> float:
    """Empirical epsilon-quantile over n_ref fresh capacity draws.

    Raises:
        ValueError: If n_ref * epsilon < 100
    """
    if n_ref * epsilon < MIN_TAIL_SAMPLES:
        raise ValueError(
            f"n_ref * epsilon = {n_ref * epsilon:g} leaves fewer than "
            f"{MIN_TAIL_SAMPLES} tail samples"
        )
    return empirical_quantile(draw_capacity_samples(profile, cfg, n_ref, rng), epsilon)


class OutageOracle:
    """Reference capacity draws at one test location.

    The truth set gives the ground-truth epsilon-outage capacity; the
    independent evaluation set gives the outage probability of a selected
    rate, so the two estimates do not share Monte Carlo noise.
    """

    def __init__(self, truth: SampleSet, evaluation: SampleSet, epsilon: float):
        if len(truth) == 0 or len(evaluation) == 0:
            raise ValueError("Outage oracle needs non-empty reference sets")
        self.epsilon = epsilon
        self.truth = truth
        self.evaluation = evaluation
        self.c_eps = empirical_quantile(truth, epsilon)
        self.c_eps_se = quantile_standard_error(truth, epsilon)

    @classmethod
    def simulate(
        cls,
        profile: MultipathProfile,
        cfg: ScenarioConfig,
        epsilon: float,
        n_ref: int,
        truth_rng: np.random.Generator,
        eval_rng: np.random.Generator,
    ) -> "OutageOracle":
        """Draw independent truth and evaluation sets of n_ref samples each."""
        if n_ref * epsilon < MIN_TAIL_SAMPLES:
            raise ValueError(
                f"n_ref * epsilon = {n_ref * epsilon:g} leaves fewer than "
                f"{MIN_TAIL_SAMPLES} tail samples"
            )
        return cls(
            draw_capacity_samples(profile, cfg, n_ref, truth_rng),
            draw_capacity_samples(profile, cfg, n_ref, eval_rng),
            epsilon,
        )

    @property
    def n_ref(self) -> int:
        """Size of the evaluation set."""
        return len(self.evaluation)

    def p_out(self, rate: float) -> float:
        """Fraction of evaluation draws strictly below the rate."""
        if rate <= 0:
            return 0.0
        below = int(np.searchsorted(self.evaluation.sorted_values, rate, side="left"))
        return below / len(self.evaluation)


def _check_counts(grid: Sequence[Location], count_train: int, count_test: int) -> int:
    if count_train < 0 or count_test < 0:
        raise ValueError("Location counts must be non-negative")
    total = count_train + count_test
    if total > len(grid):
        raise ValueError(f"Requested {total} locations but the grid has only {len(grid)}")
    return total


def sample_locations_thomas(
    cfg: ScenarioConfig,
    grid: Sequence[Location],
    count_train: int,
    count_test: int,
    rng: np.random.Generator,
) -> tuple[list[Location], list[Location]]:
    """Distinct grid locations drawn from a Thomas cluster process.

    Parents are Poisson in the cell, offspring are Gaussian-scattered around
    them and each offspring inside the cell claims its nearest unused grid
    point. The first count_train claimed points are the training set.

    Raises:
        ValueError: If more locations are requested than the grid holds
        SamplingError: If the points cannot be placed within the round budget
    """
    total = _check_counts(grid, count_train, count_test)
    coords = np.array([(loc.x, loc.y) for loc in grid], dtype=float).reshape(-1, 2)
    unused = np.ones(len(grid), dtype=bool)
    chosen: list[int] = []
    (x0, x1), (y0, y1) = cfg.cell_x_m, cfg.cell_y_m
    area = (x1 - x0) * (y1 - y0)
    degenerate = area == 0.0

    rounds = 0
    while len(chosen) < total:
        if rounds >= cfg.thomas_max_rounds:
            raise SamplingError(
                f"Placed {len(chosen)} of {total} locations after {rounds} parent rounds"
            )
        rounds += 1
        num_parents = max(1, int(rng.poisson(cfg.thomas_parent_intensity * area)))
        parents = np.column_stack(
            (rng.uniform(x0, x1, num_parents), rng.uniform(y0, y1, num_parents))
        )
        for parent in parents:
            num_offspring = int(rng.poisson(cfg.thomas_offspring_mean))
            offspring = parent + rng.normal(0.0, cfg.thomas_offspring_spread_m, (num_offspring, 2))
            if degenerate:
                offspring = np.clip(offspring, (x0, y0), (x1, y1))
            inside = (
                (offspring[:, 0] >= x0)
                & (offspring[:, 0] <= x1)
                & (offspring[:, 1] >= y0)
                & (offspring[:, 1] <= y1)
            )
            for point in offspring[inside]:
                candidates = np.flatnonzero(unused)
                nearest = candidates[
                    int(np.argmin(np.sum((coords[candidates] - point) ** 2, axis=1)))
                ]
                unused[nearest] = False
                chosen.append(int(nearest))
                if len(chosen) == total:
                    break
            if len(chosen) == total:
                break

    logger.debug("thomas_locations_sampled", count=total, rounds=rounds)
    selected = [grid[i] for i in chosen]
    return selected[:count_train], selected[count_train:]


def sample_locations_uniform(
    grid: Sequence[Location],
    count_train: int,
    count_test: int,
    rng: np.random.Generator,
) -> tuple[list[Location], list[Location]]:
    """Distinct grid locations drawn uniformly without replacement."""
    total = _check_counts(grid, count_train, count_test)
    picks = rng.choice(len(grid), size=total, replace=False)
    selected = [grid[int(i)] for i in picks]
    return selected[:count_train], selected[count_train:]
