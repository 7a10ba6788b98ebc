"""Normalisation, replicate aggregation and the two curve fits used by the experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class Series:
    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError(f"series {self.label!r} has non-finite values")
        object.__setattr__(self, "values", v)


@dataclass
class FitResult:
    params: dict[str, float]
    r_squared: float
    # notes such as "sigma0_unreliable"; R^2 is always computed in the transformed space
    flags: list[str] = field(default_factory=list)

    def __getitem__(self, key: str) -> float:
        return self.params[key]


class Aggregate(NamedTuple):
    mean: np.ndarray
    sd: np.ndarray
    se: np.ndarray
    n: int


def normalize_minmax(values) -> np.ndarray:
    """Map onto [0, 1]; a constant series maps to 0.5 everywhere."""
    v = np.asarray(values.values if isinstance(values, Series) else values, dtype=float)
    if v.size == 0:
        raise DimensionError("cannot normalise an empty series")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def aggregate_replicates(runs: Sequence) -> Aggregate:
    """Per-index mean, sample SD (n-1) and standard error."""
    arrs = [np.asarray(r.values if isinstance(r, Series) else r, dtype=float) for r in runs]
    if len(arrs) < 2:
        raise DimensionError("need at least two replicates")
    lengths = {a.shape for a in arrs}
    if len(lengths) != 1:
        raise DimensionError(f"replicate lengths differ: {sorted(lengths)}")
    stack = np.vstack(arrs)
    n = stack.shape[0]
    sd = stack.std(axis=0, ddof=1)
    return Aggregate(stack.mean(axis=0), sd, sd / math.sqrt(n), n)


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """OLS slope, intercept and R^2 of y on x."""
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise DomainError("x values are all equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def fit_power_law(x, y) -> FitResult:
    """Fit ``y = A x^p`` by least squares on (ln x, ln y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError("x and y differ in length")
    if x.size < 3:
        raise DimensionError("need at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("power-law fit needs strictly positive x and y")
    slope, intercept, r2 = _linear_fit(np.log(x), np.log(y))
    return FitResult({"exponent": slope, "intercept": intercept}, r2, ["r2_log_space"])


def fit_gaussian_decay(sigma, acc) -> FitResult:
    """Fit ``acc = acc0 * exp(-sigma^2 / (2 sigma0^2))``.

    Linear least squares of ln(acc) on sigma^2. A non-negative slope means
    there is no decay to speak of; sigma0 is then reported as infinite and
    flagged unreliable.
    """
    s = np.asarray(sigma, dtype=float)
    a = np.asarray(acc, dtype=float)
    if s.shape != a.shape:
        raise DimensionError("sigma and acc differ in length")
    if np.any(a <= 0):
        raise DomainError("accuracies must be > 0")
    if np.any(s < 0):
        raise DomainError("noise levels must be >= 0")
    if not np.any(s == 0):
        raise DomainError("noise grid must include 0")
    slope, intercept, r2 = _linear_fit(s * s, np.log(a))
    flags = ["r2_log_space"]
    if slope < 0:
        sigma0 = math.sqrt(-1.0 / (2.0 * slope))
    else:
        sigma0 = math.inf
        flags.append("sigma0_unreliable")
    return FitResult({"acc0": math.exp(intercept), "sigma0": sigma0, "log_slope": slope}, r2, flags)


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties; 0 if either side is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise DimensionError("spearman needs two equal-length sequences of at least 3")
    rx = rankdata(x) - (x.size + 1) / 2
    ry = rankdata(y) - (y.size + 1) / 2
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        return 0.0
    return float(rx @ ry / denom)
