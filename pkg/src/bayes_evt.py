"""EVT-based Bayesian quantile inference with a Metropolis-within-Gibbs sampler.

The lower tail below the threshold u is modelled by a GPD parametrized by
phi = (X_eps, xi, p_u). The prior is log-normal x normal x beta, with the first
two factors predicted by CDI maps and the beta law coming from the order
statistic that defines u. Each iteration updates the three coordinates in
turn with Gaussian random-walk proposals.
"""

import csv
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
import structlog

from src.bayes_nonpar import prior_only_interval
from src.errors import InsufficientSamplesError
from src.evt_core import compute_deficits, gpd_logpdf, implied_scale, select_threshold
from src.gp_map import CdiMap, predict
from src.models import (
    BetaPrior,
    ConfidenceInterval,
    DeficitSet,
    GaussianPrior,
    GpdParams,
    Location,
    McmcConfig,
    McmcSettings,
    PhiPrior,
    PosteriorChain,
    QuantileSpec,
    Sidedness,
    TailParams,
)
from src.stats_core import SampleSet, quantile_rank

logger = structlog.get_logger(__name__)

COORDINATES = ("x_eps", "xi", "p_u")
ACCEPTANCE_BOUNDS = (0.01, 0.99)


def build_phi_prior(
    xeps_map: CdiMap, xi_map: CdiMap, loc: Location, r: int, n: int
) -> PhiPrior:
    """Prior on phi at loc: map predictions plus Beta(r, n + 1 - r) for p_u."""
    if not 1 <= r <= n:
        raise ValueError(f"Threshold rank {r} outside [1, {n}]")
    x_mu, x_s2 = predict(xeps_map, loc)
    xi_mu, xi_s2 = predict(xi_map, loc)
    return PhiPrior(
        x_eps_prior=GaussianPrior(mu=x_mu, sigma2=x_s2),
        xi_prior=GaussianPrior(mu=xi_mu, sigma2=xi_s2),
        p_u_prior=BetaPrior(alpha=r, beta=n + 1 - r),
    )


def _log_likelihood(
    x_eps: float, xi: float, p_u: float, u: float, epsilon: float, deficits: np.ndarray
) -> float:
    """GPD log-likelihood of the deficits under phi; -inf when phi is infeasible."""
    if not (0.0 < x_eps < u and epsilon < p_u < 1.0 and math.isfinite(xi)):
        return -math.inf
    sigma = implied_scale(u, x_eps, xi, p_u, epsilon)
    if not (sigma > 0 and math.isfinite(sigma)):
        return -math.inf
    if deficits.size == 0:
        return 0.0
    return float(np.sum(gpd_logpdf(deficits, GpdParams(sigma=sigma, xi=xi))))


def gpd_log_likelihood(phi: TailParams, d: DeficitSet) -> float:
    """Log-likelihood of the deficits for the reparametrized tail; -inf outside the support."""
    return _log_likelihood(phi.x_eps, phi.xi, phi.p_u, phi.u, phi.epsilon, d.deficits)


def _log_prior(prior: PhiPrior, x_eps: float, xi: float, p_u: float) -> float:
    """Unnormalized log of the log-normal x normal x beta prior density."""
    if not (x_eps > 0 and 0.0 < p_u < 1.0):
        return -math.inf
    lx = math.log(x_eps)
    xp, kp, bp = prior.x_eps_prior, prior.xi_prior, prior.p_u_prior
    return (
        -lx
        - (lx - xp.mu) ** 2 / (2.0 * xp.sigma2)
        - (xi - kp.mu) ** 2 / (2.0 * kp.sigma2)
        + (bp.alpha - 1.0) * math.log(p_u)
        + (bp.beta - 1.0) * math.log1p(-p_u)
    )


def _metropolis_accept(log_ratio: float, uniform: float) -> bool:
    """Accept with probability min(1, exp(log_ratio)) given a uniform draw."""
    if log_ratio >= 0.0:
        return True
    if log_ratio == -math.inf or math.isnan(log_ratio):
        return False
    return uniform < math.exp(log_ratio)


def _initial_state(
    prior: PhiPrior, d: DeficitSet, u: float, epsilon: float, cfg: McmcConfig
) -> tuple[float, float, float]:
    """Starting phi: configured value, else prior centre, else an exponential-tail plug-in."""
    if cfg.init is not None:
        return cfg.init.x_eps, cfg.init.xi, cfg.init.p_u

    x0 = math.exp(prior.x_eps_prior.mu)
    xi0 = prior.xi_prior.mu
    p0 = prior.p_u_prior.mean
    if _log_likelihood(x0, xi0, p0, u, epsilon, d.deficits) > -math.inf:
        return x0, xi0, p0

    p0 = p0 if p0 > epsilon else min(2.0 * epsilon, 0.5 * (1.0 + epsilon))
    log_ratio = math.log(p0 / epsilon)
    scale = float(np.mean(d.deficits)) if len(d) else u
    scale = min(scale, 0.5 * u / log_ratio)
    logger.debug("mcmc_init_fallback", prior_median=x0, prior_xi=xi0)
    return u - scale * log_ratio, 0.0, p0


def metropolis_within_gibbs(
    prior: PhiPrior,
    d: DeficitSet,
    u: float,
    spec: QuantileSpec,
    cfg: McmcConfig,
    rng: Optional[np.random.Generator] = None,
) -> PosteriorChain:
    """Sample the posterior of (X_eps, xi, p_u) given the deficits.

    Proposals with zero posterior density (X_eps outside (0, u), p_u outside
    (eps, 1), deficits outside the support) are always rejected. The
    generator defaults to one seeded with cfg.seed.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    eps = spec.epsilon
    y = d.deficits
    steps = rng.standard_normal((cfg.iterations, 3)) * np.asarray(cfg.proposal_sd)
    uniforms = rng.random((cfg.iterations, 3))

    state = list(_initial_state(prior, d, u, eps, cfg))
    log_lik = _log_likelihood(*state, u, eps, y)
    log_post = log_lik + _log_prior(prior, *state)

    retained = np.empty((cfg.iterations - cfg.burn_in, 3))
    accepted = np.zeros(cfg.iterations, dtype=np.int8)
    counts = np.zeros(3, dtype=int)
    for t in range(cfg.iterations):
        for j in range(3):
            proposal = list(state)
            proposal[j] += steps[t, j]
            prop_post = _log_likelihood(*proposal, u, eps, y)
            if prop_post > -math.inf:
                prop_post += _log_prior(prior, *proposal)
            if _metropolis_accept(prop_post - log_post, uniforms[t, j]):
                state, log_post = proposal, prop_post
                accepted[t] |= 1 << j
                counts[j] += 1
        if t >= cfg.burn_in:
            retained[t - cfg.burn_in] = state

    rates = counts / cfg.iterations
    warnings = []
    low, high = ACCEPTANCE_BOUNDS
    for name, rate in zip(COORDINATES, rates):
        if not low <= rate <= high:
            warnings.append(f"acceptance_{name}={rate:.4f}")
            logger.warning("mcmc_acceptance_out_of_range", coordinate=name, rate=float(rate))

    return PosteriorChain(
        x_eps=retained[:, 0],
        xi=retained[:, 1],
        p_u=retained[:, 2],
        accepted=accepted[cfg.burn_in :],
        acceptance_rates=tuple(float(r) for r in rates),
        u=u,
        epsilon=eps,
        warnings=tuple(warnings),
    )


def chain_quantile(chain: PosteriorChain, p: float) -> float:
    """X_eps order statistic of rank ceil(p T') over the retained draws."""
    if len(chain) == 0:
        raise ValueError("Quantile of an empty chain")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    ordered = np.sort(chain.x_eps)
    return float(ordered[quantile_rank(len(chain), p) - 1])


def chain_interval(
    chain: PosteriorChain, delta: float, sided: Sidedness, flags: tuple[str, ...] = ()
) -> ConfidenceInterval:
    """Credible interval of X_eps from the chain."""
    if sided == Sidedness.ONE:
        lower, upper = chain_quantile(chain, delta), math.inf
    else:
        lower, upper = chain_quantile(chain, delta / 2.0), chain_quantile(chain, 1.0 - delta / 2.0)
    return ConfidenceInterval(
        lower=lower, upper=upper, confidence=1.0 - delta, sided=sided, flags=flags
    )


def resolve_mcmc_config(prior: PhiPrior, settings: McmcSettings, seed: int) -> McmcConfig:
    """Sampler configuration with proposal SDs scaled from the prior SDs."""
    xp = prior.x_eps_prior
    # standard deviation of the log-normal X_eps prior
    sd_x = math.exp(xp.mu + 0.5 * xp.sigma2) * math.sqrt(math.expm1(xp.sigma2))
    sd_xi = math.sqrt(prior.xi_prior.sigma2)
    sd_pu = math.sqrt(prior.p_u_prior.variance)
    scale = settings.proposal_scale
    return McmcConfig(
        iterations=settings.iterations,
        burn_in=int(settings.burn_in_fraction * settings.iterations),
        proposal_sd=(scale * sd_x, scale * sd_xi, scale * sd_pu),
        seed=seed,
    )


def infer_evt_bayes(
    xeps_map: CdiMap,
    xi_map: CdiMap,
    loc: Location,
    local: SampleSet,
    spec: QuantileSpec,
    zeta: float,
    r_min: int,
    cfg: Union[McmcConfig, McmcSettings],
    sided: Sidedness = Sidedness.ONE,
    seed: int = 0,
) -> ConfidenceInterval:
    """Confidence interval of X_eps at loc from the EVT posterior.

    Falls back to the log-normal X_eps prior when there are no local samples
    or too few to place the threshold. Settings without proposal SDs are
    resolved against the prior with the given seed.
    """
    x_mu, x_s2 = predict(xeps_map, loc)
    x_prior = GaussianPrior(mu=x_mu, sigma2=x_s2)
    n = len(local)
    if n == 0:
        return prior_only_interval(x_prior, spec, sided, ("prior_only",))
    try:
        u, r = select_threshold(local, zeta, r_min)
    except InsufficientSamplesError:
        logger.bind(location_id=loc.id).debug("evt_bayes_prior_only", n=n, r_min=r_min)
        return prior_only_interval(x_prior, spec, sided, ("insufficient_samples",))

    deficits = compute_deficits(local, u)
    prior = build_phi_prior(xeps_map, xi_map, loc, r, n)
    mcmc = cfg if isinstance(cfg, McmcConfig) else resolve_mcmc_config(prior, cfg, seed)
    chain = metropolis_within_gibbs(prior, deficits, u, spec, mcmc)
    return chain_interval(chain, spec.delta, sided, chain.warnings)


def write_chain_csv(path: Path, chain: PosteriorChain) -> None:
    """Write retained draws as ``iter,x_eps,xi,p_u,accepted_coord``."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iter", "x_eps", "xi", "p_u", "accepted_coord"])
        for i in range(len(chain)):
            writer.writerow(
                [
                    i,
                    f"{chain.x_eps[i]:.17g}",
                    f"{chain.xi[i]:.17g}",
                    f"{chain.p_u[i]:.17g}",
                    int(chain.accepted[i]),
                ]
            )
