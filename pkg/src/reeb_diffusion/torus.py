"""Fast ergodic diffusion on the circle: models, invariant measure, stepping."""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
import pandas as pd
from scipy import fft
from scipy.interpolate import CubicSpline

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
DEFAULT_GRID_N = 512
# dt <= C_FAST_MAX * eps**2 keeps the Euler-Maruyama fast step stable
C_FAST_MAX = 0.1
DENSITY_RESIDUAL_TOL = 1e-8


class FastProcessError(ValueError):
    pass


# --- model registry -------------------------------------------------------

def _fourier_series(y: np.ndarray, cos_coeffs, sin_coeffs) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    for k, a in enumerate(cos_coeffs or []):
        out = out + float(a) * np.cos(k * y)
    # sine coefficients start at k = 1
    for k, b in enumerate(sin_coeffs or [], start=1):
        out = out + float(b) * np.sin(k * y)
    return out


def _brownian(y, params):
    sigma = float(params.get("sigma", math.sqrt(2.0)))
    return np.zeros_like(y), np.full_like(y, sigma)


def _gradient(y, params):
    a = float(params.get("a", 1.0))
    sigma = float(params.get("sigma", math.sqrt(2.0)))
    return -a * np.sin(y), np.full_like(y, sigma)


def _constant_drift(y, params):
    c = float(params.get("c", 1.0))
    sigma = float(params.get("sigma", math.sqrt(2.0)))
    return np.full_like(y, c), np.full_like(y, sigma)


def _fourier(y, params):
    v = _fourier_series(y, params.get("v_cos"), params.get("v_sin"))
    sigma = _fourier_series(y, params.get("sigma_cos", [math.sqrt(2.0)]), params.get("sigma_sin"))
    return v, sigma


FAST_MODELS: dict[str, Callable[[np.ndarray, Mapping[str, Any]], tuple[np.ndarray, np.ndarray]]] = {
    "brownian": _brownian,
    "gradient": _gradient,
    "constant_drift": _constant_drift,
    "fourier": _fourier,
}

_CONSTANT_MODELS = {"brownian", "constant_drift"}


@dataclass(frozen=True)
class FastProcessSpec:
    model: str = "brownian"
    params: Mapping[str, Any] = field(default_factory=dict)
    m: int = 1
    grid_n: int = DEFAULT_GRID_N
    lambda_min: float = 1e-10

    def __post_init__(self):
        if self.model not in FAST_MODELS:
            raise FastProcessError(f"model: unknown fast model {self.model!r}; known {sorted(FAST_MODELS)}")
        if self.m != 1:
            raise FastProcessError(f"m: only one-dimensional fast processes are supported, got {self.m}")
        n = int(self.grid_n)
        if n < 8 or n & (n - 1):
            raise FastProcessError(f"grid_n: must be a power of two >= 8, got {self.grid_n}")

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.grid_n) * (TWO_PI / self.grid_n)

    def coefficients(self, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        return FAST_MODELS[self.model](y, self.params)

    def drift(self, y) -> np.ndarray:
        return self.coefficients(y)[0]

    def diffusion(self, y) -> np.ndarray:
        return self.coefficients(y)[1]

    def check(self) -> tuple[np.ndarray, np.ndarray]:
        """Grid values of (v, sigma) after finiteness and ellipticity checks."""
        v, sigma = self.coefficients(self.grid)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(sigma))):
            raise FastProcessError(f"{self.model}: v or sigma is not finite on the grid")
        lam = float(np.min(sigma * sigma))
        if lam < self.lambda_min:
            y_bad = self.grid[int(np.argmin(sigma * sigma))]
            raise FastProcessError(
                f"sigma: not elliptic, sigma^2 = {lam:.3e} < {self.lambda_min:.1e} at y = {y_bad:.6f}"
            )
        return v, sigma


@dataclass(frozen=True)
class InvariantMeasure:
    y: np.ndarray
    density: np.ndarray
    weights: np.ndarray
    normalization: float
    residual: float

    @property
    def grid_n(self) -> int:
        return len(self.y)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"y": self.y, "p": self.density})


# --- spectral helpers on the uniform periodic grid -------------------------

def wavenumbers(n: int) -> np.ndarray:
    return fft.rfftfreq(n, d=1.0 / n)


def spectral_derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    n = len(values)
    coeffs = fft.rfft(values)
    factor = (1j * wavenumbers(n)) ** order
    if order % 2 == 1 and n % 2 == 0:
        factor[-1] = 0.0
    return fft.irfft(coeffs * factor, n=n)


def periodic_antiderivative(values: np.ndarray) -> np.ndarray:
    """Zero-mean periodic antiderivative; the input's mean is ignored."""
    n = len(values)
    coeffs = fft.rfft(values)
    k = wavenumbers(n)
    out = np.zeros_like(coeffs)
    out[1:] = coeffs[1:] / (1j * k[1:])
    if n % 2 == 0:
        out[-1] = 0.0
    return fft.irfft(out, n=n)


def periodic_resolvent(values: np.ndarray, f0: float) -> np.ndarray:
    """Periodic solution z of z' - f0 z = -values (requires f0 != 0 or mean-zero values)."""
    n = len(values)
    coeffs = fft.rfft(values)
    k = wavenumbers(n)
    denom = f0 - 1j * k
    out = np.zeros_like(coeffs)
    if f0 == 0.0:
        out[1:] = coeffs[1:] / denom[1:]
    else:
        out = coeffs / denom
    return fft.irfft(out, n=n)


def _fokker_planck_residual(density: np.ndarray, v: np.ndarray, diff: np.ndarray) -> float:
    flux = spectral_derivative(diff * density) - v * density
    return float(np.max(np.abs(spectral_derivative(flux))))


def stationary_density(spec: FastProcessSpec) -> InvariantMeasure:
    """Density of the invariant measure of L = v d/dy + (sigma^2/2) d^2/dy^2.

    Solves (D p)' - v p = -J on the circle with D = sigma^2/2; J = 0 unless the
    drift has a net circulation, in which case J is fixed by periodicity.
    """
    v, sigma = spec.check()
    n = spec.grid_n
    h = TWO_PI / n
    diff = 0.5 * sigma * sigma
    f = v / diff
    f0 = float(np.mean(f))
    potential = periodic_antiderivative(f - f0)
    potential -= np.max(potential)
    if abs(f0) < 1e-14:
        q = np.exp(potential)
        flux = 0.0
    else:
        q = np.exp(potential) * periodic_resolvent(np.exp(-potential), f0)
        flux = 1.0
    unnormalized = q / diff
    norm = float(np.sum(unnormalized) * h)
    density = unnormalized / norm
    if not np.all(density > 0):
        raise FastProcessError(f"{spec.model}: computed density is not positive (min {density.min():.3e})")
    residual = _fokker_planck_residual(density, v, diff)
    scale = max(1.0, float(np.max(density)) * float(np.max(np.abs(v)) + np.max(diff)))
    if residual > DENSITY_RESIDUAL_TOL * scale:
        raise FastProcessError(f"{spec.model}: stationarity residual {residual:.3e} above tolerance")
    logger.debug(
        "Stationary density for %s: n=%d f0=%.3e flux=%s residual=%.2e", spec.model, n, f0, flux, residual
    )
    weights = np.full(n, h)
    return InvariantMeasure(spec.grid, density, weights, norm, residual)


def measure_mean(f, mu: InvariantMeasure) -> float:
    """Trapezoid quadrature of f against the invariant density (spectrally accurate)."""
    values = f(mu.y) if callable(f) else np.asarray(f, dtype=float)
    values = np.broadcast_to(values, mu.y.shape)
    if not np.all(np.isfinite(values)):
        raise FastProcessError("f: not finite on the measure grid")
    return float(np.sum(values * mu.density * mu.weights))


def wrap(y: np.ndarray) -> np.ndarray:
    """Floored modulo into [0, 2*pi)."""
    y = np.mod(y, TWO_PI)
    return np.where(y >= TWO_PI, y - TWO_PI, y)


def _periodic_spline(grid: np.ndarray, values: np.ndarray) -> CubicSpline:
    return CubicSpline(np.append(grid, TWO_PI), np.append(values, values[0]), bc_type="periodic")


def inverse_cdf(mu: InvariantMeasure, u: np.ndarray) -> np.ndarray:
    y_ext = np.append(mu.y, TWO_PI)
    p_ext = np.append(mu.density, mu.density[0])
    h = np.diff(y_ext)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p_ext[1:] + p_ext[:-1]) * h)])
    cdf /= cdf[-1]
    return np.interp(np.asarray(u, dtype=float), cdf, y_ext) % TWO_PI


def sample_stationary(mu: InvariantMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    return inverse_cdf(mu, rng.random(n))


class FastProcess:
    """Spec, invariant measure and hot-loop coefficient interpolants."""

    def __init__(self, spec: FastProcessSpec, measure: InvariantMeasure | None = None):
        self.spec = spec
        self.measure = measure
        grid = spec.grid
        v, sigma = spec.coefficients(grid)
        self._constant = spec.model in _CONSTANT_MODELS
        if self._constant:
            self._v_const = float(v[0])
            self._sigma_const = float(sigma[0])
        else:
            self._v_spline = _periodic_spline(grid, v)
            self._sigma_spline = _periodic_spline(grid, sigma)

    @classmethod
    def from_spec(cls, spec: FastProcessSpec, compute_measure: bool = True) -> "FastProcess":
        return cls(spec, stationary_density(spec) if compute_measure else None)

    def require_measure(self) -> InvariantMeasure:
        if self.measure is None:
            raise FastProcessError(f"{self.spec.model}: invariant measure was not computed")
        return self.measure

    def coefficients(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._constant:
            return np.full_like(y, self._v_const), np.full_like(y, self._sigma_const)
        return self._v_spline(y), self._sigma_spline(y)


def check_fast_dt(dt: float, eps: float, c_fast_max: float = C_FAST_MAX) -> None:
    if dt <= 0:
        raise FastProcessError(f"dt: must be positive, got {dt}")
    limit = c_fast_max * eps * eps
    if dt > limit * (1.0 + 1e-12):
        raise FastProcessError(f"dt: {dt:.3e} exceeds {c_fast_max}*eps^2 = {limit:.3e} for eps={eps}")


def step_fast(
    process: FastProcess,
    y,
    dt: float,
    eps: float,
    rng: np.random.Generator | None = None,
    *,
    normals: np.ndarray | None = None,
    x: tuple[np.ndarray, np.ndarray] | None = None,
    aux_drift: Callable | None = None,
) -> np.ndarray:
    """Euler-Maruyama step of d xi = eps^-2 v dt + eps^-1 sigma dW (+ c(x, xi) dt)."""
    check_fast_dt(dt, eps)
    y = np.asarray(y, dtype=float)
    v, sigma = process.coefficients(y)
    increment = v * (dt / (eps * eps))
    if np.any(sigma != 0.0):
        if normals is None:
            if rng is None:
                raise FastProcessError("rng: a generator or pre-drawn normals is required")
            normals = rng.standard_normal(y.shape)
        increment = increment + sigma * (math.sqrt(dt) / eps) * normals
    if aux_drift is not None:
        if x is None:
            raise FastProcessError("x: auxiliary drift needs the slow state")
        increment = increment + aux_drift(x[0], x[1], y) * dt
    return wrap(y + increment)


def build_fast_process(config: Mapping[str, Any]) -> FastProcess:
    """FastProcess from the ``fast`` section of an experiment config."""
    spec = FastProcessSpec(
        model=str(config.get("model", "brownian")),
        params=dict(config.get("params") or {}),
        grid_n=int(config.get("grid_n", DEFAULT_GRID_N)),
    )
    return FastProcess.from_spec(spec)
