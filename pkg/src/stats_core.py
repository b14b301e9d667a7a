"""Order statistics, empirical quantiles and distribution helpers."""

import math
from typing import Optional

import numpy as np
from pydantic import Field, PrivateAttr, field_validator
from scipy import special

from src.models import ArrayModel


class SampleSet(ArrayModel):
    """Immutable collection of positive channel-metric samples at one location.

    The ascending copy is computed once on first use and shared by every
    order-statistic query.
    """

    values: np.ndarray = Field(description="Samples in draw order, all finite and > 0")

    _sorted: Optional[np.ndarray] = PrivateAttr(default=None)

    @field_validator("values", mode="before")
    @classmethod
    def _convert(cls, v: object) -> np.ndarray:
        arr = np.array(v, dtype=float).ravel()
        if arr.size and not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
            raise ValueError("Samples must be finite and strictly positive")
        arr.setflags(write=False)
        return arr

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def sorted_values(self) -> np.ndarray:
        """Samples in non-decreasing order."""
        if self._sorted is None:
            ordered = np.sort(self.values)
            ordered.setflags(write=False)
            self._sorted = ordered
        return self._sorted

    def prefix(self, n: int) -> "SampleSet":
        """First n samples in draw order."""
        if not 0 <= n <= len(self):
            raise ValueError(f"Prefix length {n} outside [0, {len(self)}]")
        return SampleSet(values=self.values[:n])


def quantile_rank(n: int, epsilon: float) -> int:
    """Rank r = ceil(n * epsilon) of the empirical epsilon-quantile, at least 1."""
    # round() absorbs representation error such as 1e6 * 1e-4 = 100.00000000000001
    return max(1, math.ceil(round(n * epsilon, 9)))


def order_statistic(s: SampleSet, r: int) -> float:
    """Return the r-th smallest sample (1-based)."""
    n = len(s)
    if not 1 <= r <= n:
        raise ValueError(f"Order statistic rank {r} outside [1, {n}]")
    return float(s.sorted_values[r - 1])


def empirical_quantile(s: SampleSet, epsilon: float) -> float:
    """Return X_(r) with r = ceil(n * epsilon)."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if len(s) == 0:
        raise ValueError("Empirical quantile of an empty sample set")
    return order_statistic(s, quantile_rank(len(s), epsilon))


def beta_cdf(p: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_p(a, b)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if not (a > 0 and b > 0):
        raise ValueError(f"Beta shape parameters must be positive, got a={a}, b={b}")
    return float(special.betainc(a, b, p))


def normal_inv_cdf(p: float) -> float:
    """Standard normal quantile function."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


def ecdf_eval(s: SampleSet, x: float) -> float:
    """Fraction of samples less than or equal to x."""
    if len(s) == 0:
        raise ValueError("ECDF of an empty sample set")
    return int(np.searchsorted(s.sorted_values, x, side="right")) / len(s)


def ecdf_points(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Step points (x, F(x)) of the ECDF of arbitrary finite values.

    Unlike SampleSet this accepts zeros, which outage probabilities of
    rate-zero decisions produce.
    """
    arr = np.sort(np.asarray(values, dtype=float).ravel())
    if arr.size == 0:
        raise ValueError("ECDF of an empty collection")
    xs, counts = np.unique(arr, return_counts=True)
    return xs, np.cumsum(counts) / arr.size


def quantile_standard_error(s: SampleSet, epsilon: float) -> float:
    """Monte Carlo standard error of the empirical epsilon-quantile.

    Half the distance between the order statistics one binomial standard
    deviation either side of rank ceil(n * epsilon).
    """
    n = len(s)
    r = quantile_rank(n, epsilon)
    k = max(1, math.ceil(math.sqrt(n * epsilon * (1.0 - epsilon))))
    lo = max(1, r - k)
    hi = min(n, r + k)
    return 0.5 * (order_statistic(s, hi) - order_statistic(s, lo))


def order_statistic_coverage(n: int, r: int, epsilon: float) -> float:
    """Probability I_eps(r, n + 1 - r) that X_(r) does not exceed the epsilon-quantile."""
    if not 1 <= r <= n:
        raise ValueError(f"Order statistic rank {r} outside [1, {n}]")
    return beta_cdf(epsilon, r, n + 1 - r)
