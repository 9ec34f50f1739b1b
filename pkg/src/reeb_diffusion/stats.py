"""Two-sample KS statistics, binomial and bootstrap intervals, log-log scaling fits."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

KS_MIN_SIZE = 100


class StatisticsError(ValueError):
    pass


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    n: int
    m: int

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n, "m": self.m}


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the pooled sample."""
    result = stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float), method="asymp")
    return float(result.statistic)


def ks_two_sample(a, b, min_size: int = KS_MIN_SIZE) -> KSResult:
    """Two-sample KS statistic with the asymptotic Kolmogorov p-value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < min_size or b.size < min_size:
        raise StatisticsError(f"ks: sample sizes {a.size}, {b.size} below the minimum {min_size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise StatisticsError("ks: samples contain non-finite values")
    result = stats.ks_2samp(a, b, method="asymp")
    return KSResult(float(result.statistic), float(result.pvalue), a.size, b.size)


def ks_bootstrap_ci(a, b, n_boot: int = 200, confidence: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval of the KS statistic, resampling both samples independently."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    values = np.array([
        ks_statistic(a[rng.integers(0, a.size, a.size)], b[rng.integers(0, b.size, b.size)])
        for _ in range(n_boot)
    ])
    tail = 50.0 * (1.0 - confidence)
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return float(lo), float(hi)


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        return math.nan, math.nan
    if not 0 <= successes <= n:
        raise StatisticsError(f"wilson: {successes} successes out of {n}")
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def multinomial_intervals(counts: Sequence[int], confidence: float = 0.99) -> list[tuple[float, float]]:
    """Bonferroni-corrected Wilson intervals for each category of a multinomial tally."""
    counts = [int(c) for c in counts]
    n = sum(counts)
    level = 1.0 - (1.0 - confidence) / max(1, len(counts))
    return [wilson_interval(c, n, level) for c in counts]


def bootstrap_ci(
    data,
    statistic: Callable[[np.ndarray], float] = np.mean,
    n_boot: int = 1000,
    confidence: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval of ``statistic``, resampling along axis 0."""
    data = np.asarray(data)
    if data.shape[0] < 2:
        raise StatisticsError("bootstrap: need at least two observations")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.shape[0], size=(n_boot, data.shape[0]))
    values = np.array([statistic(data[row]) for row in idx])
    tail = 50.0 * (1.0 - confidence)
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int

    def contains(self, value: float, band: float = 0.0) -> bool:
        return self.ci_low - band <= value <= self.ci_high + band

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_points": self.n_points,
        }


def _wls(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    design = np.stack([np.ones_like(u), u], axis=1) * np.sqrt(w)[:, None]
    coeffs, *_ = np.linalg.lstsq(design, v * np.sqrt(w), rcond=None)
    return float(coeffs[1]), float(coeffs[0])


def scaling_fit(
    xs: Sequence[float],
    ys: Sequence[float],
    se: Sequence[float] | None = None,
    n_boot: int = 2000,
    confidence: float = 0.95,
    seed: int = 0,
) -> ScalingFit:
    """Weighted least squares of log y on log x, with a residual bootstrap for the slope.

    Weights are (y/se)^2 when standard errors are given, uniform otherwise;
    the bootstrap adds the measurement noise on top of resampled residuals.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise StatisticsError(f"scaling fit: need at least 3 paired points, got {x.size} and {y.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise StatisticsError("scaling fit: values must be positive for a log-log fit")
    u, v = np.log(x), np.log(y)
    rel = None
    if se is not None:
        rel = np.asarray(se, dtype=float) / y
        if not np.all(np.isfinite(rel) & (rel > 0)):
            rel = None
    w = np.ones_like(u) if rel is None else 1.0 / rel ** 2
    w = w / w.sum()
    slope, intercept = _wls(u, v, w)
    fitted = intercept + slope * u
    residuals = v - fitted
    rng = np.random.default_rng(seed)
    slopes = np.empty(n_boot)
    for i in range(n_boot):
        v_star = fitted + rng.choice(residuals, size=residuals.size, replace=True)
        if rel is not None:
            v_star = v_star + rng.standard_normal(residuals.size) * rel
        slopes[i] = _wls(u, v_star, w)[0]
    tail = 50.0 * (1.0 - confidence)
    lo, hi = np.percentile(slopes, [tail, 100.0 - tail])
    logger.debug("Scaling fit over %d points: slope %.4f [%.4f, %.4f]", x.size, slope, lo, hi)
    return ScalingFit(slope, intercept, float(min(lo, slope)), float(max(hi, slope)), int(x.size))
