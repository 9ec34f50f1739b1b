"""Cell problems on the circle: correctors, effective matrices, auxiliary drift."""
import logging
import re
from dataclasses import dataclass
from functools import partial
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from .streams import path_generator
from .torus import (
    TWO_PI,
    FastProcess,
    InvariantMeasure,
    inverse_cdf,
    measure_mean,
    periodic_antiderivative,
    periodic_resolvent,
    spectral_derivative,
    step_fast,
)
from .utils import parallel_map

logger = logging.getLogger(__name__)

TOL_CORRECTOR = 1e-8
TOL_MATRIX_IDENTITY = 1e-10
SOLVABILITY_TOL = 1e-10
SHAPE_RE = re.compile(r"^(cos|sin)(\d*)$")

GREEN_KUBO_STREAM = 7


class CorrectorError(ValueError):
    pass


def _shape_values(name: str, y: np.ndarray) -> np.ndarray:
    match = SHAPE_RE.match(name)
    if match is None:
        raise CorrectorError(f"basis: unknown shape {name!r}, expected cos<k> or sin<k>")
    k = int(match.group(2) or 1)
    return np.cos(k * y) if match.group(1) == "cos" else np.sin(k * y)


@dataclass(frozen=True)
class CellProblemBasis:
    """Mean-zero perturbation shapes phi_j(y) = shape_j(y) - E_mu[shape_j]."""

    shapes: tuple[str, ...]
    means: np.ndarray
    values: np.ndarray  # (J, n) on the measure grid

    @classmethod
    def from_shapes(cls, shapes: Sequence[str], mu: InvariantMeasure) -> "CellProblemBasis":
        shapes = tuple(shapes)
        if not shapes:
            raise CorrectorError("basis: at least one shape is required")
        raw = np.array([_shape_values(s, mu.y) for s in shapes])
        means = np.array([measure_mean(row, mu) for row in raw])
        values = raw - means[:, None]
        gram = (values * mu.density * mu.weights) @ values.T
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise CorrectorError(f"basis: shapes {shapes} are linearly dependent (Gram condition {cond:.2e})")
        return cls(shapes, means, values)

    @property
    def size(self) -> int:
        return len(self.shapes)

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.stack([_shape_values(s, y) - m for s, m in zip(self.shapes, self.means)])


@dataclass(frozen=True)
class CorrectorSet:
    u: np.ndarray  # (J, n)
    du: np.ndarray  # (J, n)
    residuals: np.ndarray

    def to_frame(self, mu: InvariantMeasure) -> pd.DataFrame:
        frame = pd.DataFrame({"y": mu.y})
        for j in range(len(self.u)):
            frame[f"u{j + 1}"] = self.u[j]
            frame[f"du{j + 1}"] = self.du[j]
        return frame


@dataclass(frozen=True)
class EffectiveMatrices:
    A_mat: np.ndarray
    C_mat: np.ndarray
    identity_defect: float

    def to_dict(self) -> dict:
        return {
            "A": self.A_mat.tolist(),
            "C": self.C_mat.tolist(),
            "identity_defect": self.identity_defect,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EffectiveMatrices":
        return cls(np.asarray(payload["A"], dtype=float), np.asarray(payload["C"], dtype=float),
                   float(payload.get("identity_defect", 0.0)))


def generator_apply(process: FastProcess, u: np.ndarray) -> np.ndarray:
    """L u = v u' + (sigma^2/2) u'' on the measure grid, spectrally."""
    v, sigma = process.spec.coefficients(process.require_measure().y)
    return v * spectral_derivative(u) + 0.5 * sigma * sigma * spectral_derivative(u, order=2)


def solve_poisson(process: FastProcess, g: np.ndarray, tol: float = TOL_CORRECTOR) -> np.ndarray:
    """Mean-zero periodic solution of L u = -g.

    With f = v/D = f0 + P', the derivative w = u' satisfies (e^P w)' + f0 e^P w = -e^P g / D.
    """
    mu = process.require_measure()
    g = np.asarray(g, dtype=float)
    mean_g = measure_mean(g, mu)
    if abs(mean_g) > SOLVABILITY_TOL:
        raise CorrectorError(f"g: not mean-zero under mu (mean {mean_g:.3e}), Poisson problem is not solvable")
    v, sigma = process.spec.coefficients(mu.y)
    diff = 0.5 * sigma * sigma
    f = v / diff
    f0 = float(np.mean(f))
    potential = periodic_antiderivative(f - f0)
    rhs = np.exp(potential) * g / diff
    if abs(f0) < 1e-14:
        # zero mode of W is free; fix it so u' has zero mean (u periodic)
        particular = periodic_resolvent(rhs, 0.0)
        decay = np.exp(-potential)
        const = -np.mean(decay * particular) / np.mean(decay)
        w = decay * (particular + const)
    else:
        w = np.exp(-potential) * periodic_resolvent(rhs, -f0)
    u = periodic_antiderivative(w)
    u = u - measure_mean(u, mu)
    residual = float(np.max(np.abs(generator_apply(process, u) + g)))
    if residual > tol:
        raise CorrectorError(f"u: Poisson residual {residual:.3e} above tolerance {tol:.1e}")
    return u


def _solve_one(process: FastProcess, g: np.ndarray) -> tuple[np.ndarray, float]:
    u = solve_poisson(process, g)
    return u, float(np.max(np.abs(generator_apply(process, u) + g)))


def solve_correctors(process: FastProcess, basis: CellProblemBasis, workers: int | None = 1) -> CorrectorSet:
    results = parallel_map(partial(_solve_one, process), list(basis.values), workers=workers)
    u = np.array([r[0] for r in results])
    du = np.array([spectral_derivative(row) for row in u])
    residuals = np.array([r[1] for r in results])
    logger.info("Solved %d cell problems, max residual %.2e", basis.size, residuals.max())
    return CorrectorSet(u, du, residuals)


def effective_matrices(
    correctors: CorrectorSet, basis: CellProblemBasis, process: FastProcess, tol: float = TOL_MATRIX_IDENTITY
) -> EffectiveMatrices:
    mu = process.require_measure()
    if correctors.u.shape != basis.values.shape:
        raise CorrectorError(
            f"correctors: shape {correctors.u.shape} does not match basis shape {basis.values.shape}"
        )
    _, sigma = process.spec.coefficients(mu.y)
    w = mu.density * mu.weights
    A_mat = (correctors.du * sigma * sigma * w) @ correctors.du.T
    C_mat = (correctors.u * w) @ basis.values.T
    A_mat = 0.5 * (A_mat + A_mat.T)
    defect = float(np.max(np.abs(A_mat - (C_mat + C_mat.T))))
    if defect > tol * max(1.0, float(np.max(np.abs(A_mat)))):
        raise CorrectorError(f"A: identity A = C + C^T violated by {defect:.3e} (tolerance {tol:.1e})")
    return EffectiveMatrices(A_mat, C_mat, defect)


class AuxiliaryDrift:
    """c(x, y) = -sum_j div e_j(x) Psi_j(y) / p(y), with Psi_j' = phi_j p.

    Makes div_x(b p) + d/dy(c p) = 0 hold for every x.
    """

    def __init__(self, model, process: FastProcess, basis: CellProblemBasis):
        mu = process.require_measure()
        self.model = model
        self.mu = mu
        self.basis = basis
        weighted = basis.values * mu.density
        solvability = np.abs(weighted.sum(axis=1) * mu.weights[0])
        if np.any(solvability > SOLVABILITY_TOL):
            raise CorrectorError(
                f"auxiliary drift: integral of phi_j p is {solvability.max():.3e}, divergence equation unsolvable"
            )
        self.psi = np.array([periodic_antiderivative(row) for row in weighted])
        self.vanishes = bool(getattr(model, "divergence_vanishes", False))
        ratio = self.psi / mu.density
        grid = np.append(mu.y, TWO_PI)
        self._splines = [CubicSpline(grid, np.append(r, r[0]), bc_type="periodic") for r in ratio]

    def __call__(self, x1, x2, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.vanishes:
            return np.zeros(np.broadcast(np.asarray(x1), y).shape)
        div = self.model.divergence(x1, x2)
        out = np.zeros(np.broadcast(np.asarray(x1), y).shape)
        for j, spline in enumerate(self._splines):
            out = out - div[j] * spline(y)
        return out

    def grid_values(self, x1: float, x2: float) -> np.ndarray:
        """c(x, .) * p on the measure grid."""
        div = np.asarray(self.model.divergence(np.asarray(x1), np.asarray(x2)), dtype=float).reshape(-1)
        return -(div[:, None] * self.psi).sum(axis=0)

    def residual(self, x1: float, x2: float) -> float:
        """sup_y |div_x b p + d/dy(c p)| at one slow point."""
        div = np.asarray(self.model.divergence(np.asarray(x1), np.asarray(x2)), dtype=float).reshape(-1)
        source = (div[:, None] * self.basis.values).sum(axis=0) * self.mu.density
        return float(np.max(np.abs(source + spectral_derivative(self.grid_values(x1, x2)))))


def auxiliary_drift(model, process: FastProcess, basis: CellProblemBasis) -> AuxiliaryDrift:
    return AuxiliaryDrift(model, process, basis)


@dataclass(frozen=True)
class GreenKuboEstimate:
    value: np.ndarray | float
    se: np.ndarray | float
    t_cut: float
    n_paths: int


def green_kubo_matrix(
    process: FastProcess,
    basis: CellProblemBasis,
    n_paths: int = 20000,
    seed: int = 0,
    dt: float = 0.01,
    t_max: float = 20.0,
    weights: np.ndarray | None = None,
    check_every: int = 10,
) -> GreenKuboEstimate:
    """Monte Carlo estimate of G_jl = int_0^inf E_mu[phi_j(xi_s) phi_l(xi_0)] ds.

    With ``weights`` W, returns the scalar sum_jl W_jl G_jl instead. The time
    integral is cut at the first checkpoint where the lag correlation is within
    one standard error of zero.
    """
    mu = process.require_measure()
    rng = path_generator(seed, 0, substream=GREEN_KUBO_STREAM)
    xi = inverse_cdf(mu, rng.random(n_paths))
    phi0 = basis.evaluate(xi)  # (J, N)
    J = basis.size
    integral = np.zeros((J, n_paths))
    n_steps = int(round(t_max / dt))

    def contributions(values: np.ndarray) -> np.ndarray:
        # per-path products values_j * phi0_l, shape (J, J, N) or (N,)
        products = values[:, None, :] * phi0[None, :, :]
        if weights is None:
            return products
        return np.einsum("jl,jln->n", weights, products)

    t_cut = t_max
    prev = basis.evaluate(xi)
    for step in range(1, n_steps + 1):
        xi = step_fast(process, xi, dt, 1.0, rng)
        current = basis.evaluate(xi)
        integral += 0.5 * (prev + current) * dt
        prev = current
        if step % check_every == 0:
            corr = contributions(current)
            mean = corr.mean(axis=-1)
            se = corr.std(axis=-1, ddof=1) / np.sqrt(n_paths)
            if np.all(np.abs(mean) <= se):
                t_cut = step * dt
                break
    samples = contributions(integral)
    value = samples.mean(axis=-1)
    se = samples.std(axis=-1, ddof=1) / np.sqrt(n_paths)
    if np.any(np.asarray(se) > 0.1 * np.maximum(np.abs(value), 1e-3)):
        logger.warning("Green-Kubo estimate has wide error bars (max SE %.3e)", float(np.max(se)))
    logger.debug("Green-Kubo cut at t=%.2f with %d paths", t_cut, n_paths)
    if weights is not None:
        value, se = float(value), float(se)
    return GreenKuboEstimate(value, se, t_cut, n_paths)
