"""Data models for the channel tail rate selection toolkit."""

import math
from enum import Enum
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _readonly_array(v: object) -> np.ndarray:
    """Convert a sequence to a read-only float64 array."""
    arr = np.array(v, dtype=float).ravel()
    arr.setflags(write=False)
    return arr


class Sidedness(str, Enum):
    """Shape of a confidence interval."""

    ONE = "one"
    TWO = "two"


class Method(str, Enum):
    """Rate selection methods, in result sort order."""

    BAYES_NONPAR = "bayes_nonpar"
    BAYES_EVT = "bayes_evt"
    BASELINE_NONPAR = "baseline_nonpar"
    BASELINE_EVT = "baseline_evt"

    @property
    def sort_key(self) -> int:
        """Position of the method in deterministic result ordering."""
        return list(Method).index(self)


class ArrayModel(BaseModel):
    """Base for frozen models that carry numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ---------------------------------------------------------------------------
# Quantile problem
# ---------------------------------------------------------------------------


class QuantileSpec(BaseModel):
    """Target quantile level and confidence of the interval contract."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epsilon: float = Field(default=1e-2, gt=0.0, lt=1.0, description="Target quantile level")
    delta: float = Field(default=0.05, gt=0.0, lt=1.0, description="One minus the confidence")

    @property
    def confidence(self) -> float:
        """Nominal confidence 1 - delta."""
        return 1.0 - self.delta


class ConfidenceInterval(BaseModel):
    """Interval for the epsilon-quantile with nominal confidence."""

    model_config = ConfigDict(frozen=True)

    lower: float = Field(ge=0.0, description="Lower bound, the selected rate when one-sided")
    upper: float = Field(default=math.inf, description="Upper bound, may be +inf")
    confidence: float = Field(gt=0.0, lt=1.0, description="Nominal confidence 1 - delta")
    sided: Sidedness = Field(default=Sidedness.ONE, description="One- or two-sided interval")
    flags: tuple[str, ...] = Field(
        default=(), description="Fallbacks taken while computing the interval"
    )

    @model_validator(mode="after")
    def _check_order(self) -> "ConfidenceInterval":
        if not self.lower <= self.upper:
            raise ValueError(f"Interval lower bound {self.lower} exceeds upper bound {self.upper}")
        return self

    def contains(self, value: float) -> bool:
        """Whether value lies in the closed interval."""
        return self.lower <= value <= self.upper


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


class Location(BaseModel):
    """A measurement location in meters."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0, description="Location id, unique within a scenario")
    x: float = Field(description="x coordinate in meters")
    y: float = Field(description="y coordinate in meters")
    z: float = Field(default=0.0, description="z coordinate (height) in meters")

    @model_validator(mode="after")
    def _check_finite(self) -> "Location":
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"Location {self.id} has non-finite coordinates")
        return self

    @property
    def coords(self) -> tuple[float, float, float]:
        """(x, y, z) coordinate triple."""
        return (self.x, self.y, self.z)


class MultipathProfile(BaseModel):
    """Per-path amplitudes of a narrowband multipath channel."""

    model_config = ConfigDict(frozen=True)

    magnitudes: tuple[float, ...] = Field(description="Linear path amplitudes a_k (sqrt of watts)")

    @field_validator("magnitudes")
    @classmethod
    def _check_magnitudes(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if len(v) < 1:
            raise ValueError("A multipath profile needs at least one path")
        if any(a < 0 or not math.isfinite(a) for a in v):
            raise ValueError("Path magnitudes must be finite and non-negative")
        if not any(a > 0 for a in v):
            raise ValueError("At least one path magnitude must be positive")
        return v

    @property
    def num_paths(self) -> int:
        """Number of paths K."""
        return len(self.magnitudes)

    def as_array(self) -> np.ndarray:
        """Magnitudes as a float array."""
        return np.asarray(self.magnitudes, dtype=float)


class ScenarioConfig(BaseModel):
    """Synthetic cell, propagation and location-sampling settings."""

    model_config = ConfigDict(extra="forbid")

    cell_x_m: tuple[float, float] = Field(default=(-50.0, 50.0), description="Cell x range")
    cell_y_m: tuple[float, float] = Field(default=(-50.0, 50.0), description="Cell y range")
    user_height_m: float = Field(default=1.5, description="Height of every grid location")
    bs_position_m: tuple[float, float, float] = Field(
        default=(-50.0, 0.0, 10.0), description="Base station position"
    )
    grid_step_m: float = Field(default=2.0, gt=0.0, description="Grid spacing")
    num_paths: int = Field(default=20, ge=1, description="Number of multipath components K")
    noise_power_dbm: float = Field(default=-90.0, description="Noise level B*N_0")
    tx_power_dbm: float = Field(default=0.0, description="Transmit power")
    carrier_frequency_ghz: float = Field(
        default=3.6, gt=0.0, description="Carrier used for the 1 m free-space reference loss"
    )
    pathloss_exponent: float = Field(default=2.1, gt=0.0, description="Log-distance exponent")
    rice_k_db: float = Field(default=6.0, description="Mean line-of-sight power ratio")
    rice_k_sigma_db: float = Field(
        default=3.0, ge=0.0, description="Spatial standard deviation of the Rice factor"
    )
    nlos_decay_paths: float = Field(
        default=5.0, gt=0.0, description="Exponential power decay constant over NLOS path index"
    )
    shadowing_sigma_db: float = Field(default=4.0, ge=0.0, description="Shadowing std deviation")
    shadowing_decorrelation_m: float = Field(
        default=10.0, gt=0.0, description="Shadowing decorrelation distance"
    )
    thomas_parent_intensity: float = Field(
        default=3e-4, gt=0.0, description="Thomas process parents per square meter"
    )
    thomas_offspring_mean: float = Field(
        default=40.0, gt=0.0, description="Mean offspring count per parent"
    )
    thomas_offspring_spread_m: float = Field(
        default=8.0, gt=0.0, description="Offspring scatter standard deviation sigma_c"
    )
    thomas_max_rounds: int = Field(
        default=10_000, ge=1, description="Parent batches drawn before sampling gives up"
    )
    master_seed: int = Field(default=1, ge=0, lt=2**64, description="Master seed of the scenario")

    @field_validator("cell_x_m", "cell_y_m")
    @classmethod
    def _check_range(cls, v: tuple[float, float]) -> tuple[float, float]:
        if v[1] < v[0]:
            raise ValueError(f"Cell range {v} is reversed")
        return v

    @property
    def noise_power_w(self) -> float:
        """Noise power in watts."""
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)


# ---------------------------------------------------------------------------
# CDI maps
# ---------------------------------------------------------------------------


class CdiObservation(BaseModel):
    """Point estimate of a channel statistic at one location."""

    model_config = ConfigDict(frozen=True)

    location: Location = Field(description="Where the statistic was estimated")
    theta_hat: float = Field(description="Point estimate, possibly log-domain")

    @field_validator("theta_hat")
    @classmethod
    def _check_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("theta_hat must be finite")
        return v


class GpHyperParams(BaseModel):
    """Hyperparameters of the squared-exponential GP with constant mean."""

    model_config = ConfigDict(frozen=True)

    signal_variance: float = Field(gt=0.0, description="Kernel signal variance")
    lengthscale_m: float = Field(gt=0.0, description="Isotropic lengthscale in meters")
    nugget: float = Field(ge=0.0, description="Observation noise variance")
    mean: float = Field(description="Constant prior mean")


# ---------------------------------------------------------------------------
# Extreme value models
# ---------------------------------------------------------------------------


class GpdParams(BaseModel):
    """Generalized Pareto scale and shape."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(gt=0.0, description="Scale sigma_u")
    xi: float = Field(description="Shape xi")

    @field_validator("xi")
    @classmethod
    def _check_xi(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("GPD shape must be finite")
        return v


class TailParams(BaseModel):
    """Reparametrized GPD tail: quantile, shape and threshold probability."""

    model_config = ConfigDict(frozen=True)

    x_eps: float = Field(gt=0.0, description="epsilon-quantile X_eps")
    xi: float = Field(description="GPD shape")
    p_u: float = Field(gt=0.0, lt=1.0, description="P(X <= u)")
    u: float = Field(description="Threshold, same units as the samples")
    epsilon: float = Field(gt=0.0, lt=1.0, description="Quantile level")

    @model_validator(mode="after")
    def _check_tail(self) -> "TailParams":
        if not math.isfinite(self.xi):
            raise ValueError("GPD shape must be finite")
        if not self.x_eps < self.u:
            raise ValueError(f"x_eps={self.x_eps} must lie below the threshold u={self.u}")
        if not self.epsilon < self.p_u:
            raise ValueError(f"epsilon={self.epsilon} must be below p_u={self.p_u}")
        return self


class DeficitSet(ArrayModel):
    """Amounts by which samples fall below a threshold."""

    u: float = Field(description="Threshold")
    deficits: np.ndarray = Field(description="y_i = u - X_i for X_i < u, all positive")

    @field_validator("deficits", mode="before")
    @classmethod
    def _convert(cls, v: object) -> np.ndarray:
        arr = _readonly_array(v)
        if arr.size and not np.all(arr > 0):
            raise ValueError("Deficits must be strictly positive")
        return arr

    def __len__(self) -> int:
        return int(self.deficits.size)


# ---------------------------------------------------------------------------
# Bayesian inference
# ---------------------------------------------------------------------------


class GaussianPrior(BaseModel):
    """Gaussian prior (log-domain for quantiles)."""

    model_config = ConfigDict(frozen=True)

    mu: float = Field(description="Mean")
    sigma2: float = Field(gt=0.0, description="Variance")


class GaussianPosterior(BaseModel):
    """Gaussian posterior of the log-quantile."""

    model_config = ConfigDict(frozen=True)

    mu_post: float = Field(description="Posterior mean")
    sigma2_post: float = Field(gt=0.0, description="Posterior variance")


class BetaPrior(BaseModel):
    """Beta distribution shape parameters."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0.0, description="First shape parameter")
    beta: float = Field(gt=0.0, description="Second shape parameter")

    @property
    def mean(self) -> float:
        """Distribution mean."""
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        """Distribution variance."""
        total = self.alpha + self.beta
        return self.alpha * self.beta / (total * total * (total + 1.0))


class PhiPrior(BaseModel):
    """Independent priors on (X_eps, xi, p_u)."""

    model_config = ConfigDict(frozen=True)

    x_eps_prior: GaussianPrior = Field(description="Log-domain prior of X_eps (lognormal)")
    xi_prior: GaussianPrior = Field(description="Normal prior of the GPD shape")
    p_u_prior: BetaPrior = Field(description="Beta prior of the threshold probability")


class McmcConfig(BaseModel):
    """Metropolis-within-Gibbs settings."""

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(default=10_000, ge=1, description="Total iterations T")
    burn_in: int = Field(default=2_000, ge=0, description="Discarded leading iterations")
    proposal_sd: tuple[float, float, float] = Field(
        description="Random-walk standard deviations for (X_eps, xi, p_u)"
    )
    seed: int = Field(default=0, ge=0, lt=2**64, description="Chain seed")
    init: Optional[TailParams] = Field(default=None, description="Starting point phi_0")

    @model_validator(mode="after")
    def _check(self) -> "McmcConfig":
        if not self.iterations > self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        if any(s <= 0 or not math.isfinite(s) for s in self.proposal_sd):
            raise ValueError("Proposal standard deviations must be positive")
        return self


class PosteriorChain(ArrayModel):
    """Retained Metropolis-within-Gibbs draws."""

    x_eps: np.ndarray = Field(description="Retained X_eps draws")
    xi: np.ndarray = Field(description="Retained xi draws")
    p_u: np.ndarray = Field(description="Retained p_u draws")
    accepted: np.ndarray = Field(
        description="Per-iteration acceptance bit mask (1=X_eps, 2=xi, 4=p_u)"
    )
    acceptance_rates: tuple[float, float, float] = Field(
        description="Acceptance rate per coordinate over all iterations"
    )
    u: float = Field(description="Threshold the chain was run at")
    epsilon: float = Field(description="Quantile level")
    warnings: tuple[str, ...] = Field(default=(), description="Sampler diagnostics")

    @field_validator("x_eps", "xi", "p_u", mode="before")
    @classmethod
    def _convert(cls, v: object) -> np.ndarray:
        return _readonly_array(v)

    @field_validator("accepted", mode="before")
    @classmethod
    def _convert_mask(cls, v: object) -> np.ndarray:
        arr = np.array(v, dtype=np.int8).ravel()
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_lengths(self) -> "PosteriorChain":
        if not len(self.x_eps) == len(self.xi) == len(self.p_u) == len(self.accepted):
            raise ValueError("Chain coordinates must have equal length")
        return self

    def __len__(self) -> int:
        return int(self.x_eps.size)

    def draws(self) -> list[TailParams]:
        """Retained draws as TailParams."""
        return [
            TailParams(x_eps=x, xi=k, p_u=p, u=self.u, epsilon=self.epsilon)
            for x, k, p in zip(self.x_eps.tolist(), self.xi.tolist(), self.p_u.tolist())
        ]


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


class ProfileGrid(ArrayModel):
    """Profile log-likelihood of X_eps evaluated on a grid."""

    x_eps_grid: np.ndarray = Field(description="Candidate quantile values, strictly increasing")
    profile_loglik: np.ndarray = Field(description="Profile log-likelihood at each candidate")

    @field_validator("x_eps_grid", "profile_loglik", mode="before")
    @classmethod
    def _convert(cls, v: object) -> np.ndarray:
        return _readonly_array(v)

    @model_validator(mode="after")
    def _check(self) -> "ProfileGrid":
        if self.x_eps_grid.size != self.profile_loglik.size:
            raise ValueError("Grid and profile must have the same length")
        if np.any(np.diff(self.x_eps_grid) <= 0):
            raise ValueError("Grid must be strictly increasing")
        return self


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


class McmcSettings(BaseModel):
    """Experiment-level MCMC settings, resolved per location against the prior."""

    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(default=10_000, ge=2, description="Iterations T per chain")
    burn_in_fraction: float = Field(
        default=0.2, ge=0.0, lt=1.0, description="Fraction of T discarded as burn-in"
    )
    proposal_scale: float = Field(
        default=0.25, gt=0.0, description="Proposal SD as a multiple of the prior SD"
    )


class ExperimentConfig(BaseModel):
    """Complete rate-selection experiment configuration."""

    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig, description="Synthetic cell")
    spec: QuantileSpec = Field(default_factory=QuantileSpec, description="epsilon and delta")
    d: int = Field(default=100, ge=0, description="Prior locations per redraw")
    d_test: int = Field(default=50, ge=0, description="Test locations per redraw")
    redraws: int = Field(default=5, ge=0, description="Number of location redraws L")
    m: int = Field(default=100_000, ge=1, description="Samples per prior location")
    n_sweep: list[int] = Field(
        default_factory=lambda: [0, 50, 100, 316, 1_000, 10_000],
        description="Local sample budgets n",
    )
    n_ref: int = Field(default=1_000_000, ge=1, description="Reference draws per test location")
    zeta: float = Field(default=0.2, gt=0.0, le=1.0, description="Threshold fraction")
    r_min: int = Field(default=50, ge=2, description="Minimum order statistic for the threshold")
    mcmc: McmcSettings = Field(default_factory=McmcSettings, description="Sampler settings")
    methods: list[Method] = Field(
        default_factory=lambda: list(Method), description="Methods to evaluate"
    )
    evt_interval_method: Literal["profile", "wald"] = Field(
        default="profile", description="Interval construction of the EVT baseline"
    )
    location_sampling: Literal["thomas", "uniform"] = Field(
        default="thomas", description="How prior and test locations are drawn"
    )
    density_floor: float = Field(
        default=1e-6, gt=0.0, description="Lower bound on predicted log-domain densities"
    )
    dataset_path: Optional[Path] = Field(
        default=None, description="External measurement CSV replacing the simulator"
    )
    output_dir: Path = Field(default=Path("results"), description="Where CSVs are written")
    workers: int = Field(default=1, ge=1, description="Processes for test-location work units")

    @field_validator("n_sweep")
    @classmethod
    def _check_sweep(cls, v: list[int]) -> list[int]:
        if any(n < 0 for n in v):
            raise ValueError("n_sweep entries must be non-negative")
        if v != sorted(v):
            raise ValueError("n_sweep must be sorted ascending")
        return v

    @field_validator("dataset_path", "output_dir", mode="before")
    @classmethod
    def _convert_path(cls, v: str | Path | None) -> Path | None:
        """Convert string paths to Path objects."""
        if v is None or isinstance(v, Path):
            return v
        return Path(v)


class MethodResult(BaseModel):
    """Outcome of one method at one test location and sample budget."""

    model_config = ConfigDict(frozen=True)

    redraw: int = Field(ge=0, description="Location redraw index")
    location_id: int = Field(ge=0, description="Test location id")
    n: int = Field(ge=0, description="Local samples used")
    method: Method = Field(description="Rate selection method")
    rate: float = Field(ge=0.0, description="Selected rate R in bits/s/Hz")
    p_out: float = Field(ge=0.0, le=1.0, description="Achieved outage probability")
    normalized_throughput: float = Field(ge=0.0, description="Throughput relative to genie")
    c_eps_truth: float = Field(description="Ground-truth epsilon-outage capacity")
    flag: str = Field(default="", description="Fallbacks or failures, ';'-separated")

    @model_validator(mode="after")
    def _check_zero_rate(self) -> "MethodResult":
        if not math.isfinite(self.rate):
            raise ValueError("Rate must be finite")
        if self.rate == 0.0 and (self.p_out != 0.0 or self.normalized_throughput != 0.0):
            raise ValueError("A zero rate must have zero outage and zero throughput")
        return self

    @property
    def sort_key(self) -> tuple[int, int, int, int]:
        """Deterministic output ordering."""
        return (self.redraw, self.location_id, self.n, self.method.sort_key)


class SummaryRow(BaseModel):
    """Aggregate of results for one method and sample budget."""

    method: Method = Field(description="Rate selection method")
    n: int = Field(ge=0, description="Local samples used")
    count: int = Field(ge=0, description="Number of result rows aggregated")
    meta_probability: float = Field(description="Fraction of rows with p_out <= epsilon")
    meta_probability_se: float = Field(description="Binomial standard error of the above")
    analytic_meta_probability: Optional[float] = Field(
        default=None, description="Exact coverage of the order-statistic baseline"
    )
    throughput_q1: float = Field(description="First quartile of normalized throughput")
    throughput_q2: float = Field(description="Median of normalized throughput")
    throughput_q3: float = Field(description="Third quartile of normalized throughput")


class ConfigGenerationResult(BaseModel):
    """Result of configuration file generation."""

    success: bool = Field(description="Whether config generation succeeded")
    config_file_path: str = Field(description="Path to generated config file")
    preset: str = Field(description="Preset whose values were written")
    keys_written: int = Field(ge=0, description="Number of configuration keys written")
    message: str = Field(description="Human-readable message about the result")
