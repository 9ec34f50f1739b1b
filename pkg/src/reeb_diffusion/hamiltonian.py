"""Hamiltonian fields, perturbation bases, critical points and level-curve tracing."""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .autodiff import Jet
from .expression import Expression, ExpressionError

logger = logging.getLogger(__name__)

BUILTIN_FIELDS = {
    "dumbbell": ("(x1^2 - 1)^2/4 + x2^2/2 + tilt*x1*x2^2", {"tilt": 0.0}),
    "harmonic": ("(x1^2 + x2^2)/2", {}),
}

DEFAULT_H_MAX = 4.0
TRACE_TOL = 1e-10
DS_MAX = 0.01
STEP_FACTOR = 0.02
SEPARATRIX_OFFSET = 1e-4
MAX_TRACE_STEPS = 400_000


class FieldError(ValueError):
    pass


class DegenerateCriticalPointError(FieldError):
    pass


class TracingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalarField:
    expression: Expression
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def builtin(cls, name: str, params: Mapping[str, float] | None = None) -> "ScalarField":
        if name not in BUILTIN_FIELDS:
            raise FieldError(f"builtin: unknown Hamiltonian {name!r}; known {sorted(BUILTIN_FIELDS)}")
        source, defaults = BUILTIN_FIELDS[name]
        merged = {**defaults, **(params or {})}
        unknown = set(merged) - set(defaults)
        if unknown:
            raise FieldError(f"params: {sorted(unknown)} not accepted by builtin {name!r}")
        return cls(Expression.parse(source, merged), name, merged)

    @classmethod
    def from_expression(cls, source: str, params: Mapping[str, float] | None = None) -> "ScalarField":
        try:
            return cls(Expression.parse(source, params), "expr", dict(params or {}))
        except ExpressionError as e:
            raise FieldError(f"expr: {e}") from e

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "ScalarField":
        if "builtin" in section:
            return cls.builtin(section["builtin"], section.get("params"))
        if "expr" in section:
            return cls.from_expression(section["expr"], section.get("params"))
        raise FieldError("hamiltonian: needs either 'builtin' or 'expr'")

    def __call__(self, x1, x2) -> np.ndarray:
        return self.expression(x1, x2)

    def jet(self, x1, x2, order: int = 2) -> Jet:
        return self.expression.jet(x1, x2, order=order)

    def gradient(self, x1, x2) -> np.ndarray:
        return self.jet(x1, x2, order=1).grad

    def hessian(self, x1, x2) -> np.ndarray:
        return self.jet(x1, x2, order=2).hess


class PerturbationBasis:
    """Slow vector fields e_j(x) = (e_j1, e_j2) given as expression pairs."""

    def __init__(self, components: Sequence[Sequence[str]], params: Mapping[str, float] | None = None):
        if not components:
            raise FieldError("perturbation: at least one vector field e_j is required")
        self.sources = [tuple(pair) for pair in components]
        try:
            self.fields = [
                (Expression.parse(str(a), params), Expression.parse(str(b), params)) for a, b in self.sources
            ]
        except ExpressionError as e:
            raise FieldError(f"perturbation: {e}") from e
        self.is_constant = all(a.is_constant and b.is_constant for a, b in self.fields)
        self.divergence_vanishes = all(
            "x1" not in a.used_variables and "x2" not in b.used_variables for a, b in self.fields
        )

    @classmethod
    def axes(cls) -> "PerturbationBasis":
        return cls([("1", "0"), ("0", "1")])

    @property
    def size(self) -> int:
        return len(self.fields)

    def evaluate(self, x1, x2) -> np.ndarray:
        """Array of shape (J, 2, *shape)."""
        return np.stack([np.stack([a(x1, x2), b(x1, x2)]) for a, b in self.fields])

    def jets(self, x1, x2, order: int = 1) -> list[tuple[Jet, Jet]]:
        return [(a.jet(x1, x2, order), b.jet(x1, x2, order)) for a, b in self.fields]

    def divergence(self, x1, x2) -> np.ndarray:
        out = []
        for a, b in self.jets(x1, x2, order=1):
            out.append(a.grad[0] + b.grad[1])
        return np.stack(out)


@dataclass
class HamiltonianModel:
    hamiltonian: ScalarField
    perturbation: PerturbationBasis
    h_max: float = DEFAULT_H_MAX

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "HamiltonianModel":
        hamiltonian = ScalarField.from_config(section["hamiltonian"])
        pairs = section.get("perturbation") or [["1", "0"], ["0", "1"]]
        return cls(hamiltonian, PerturbationBasis(pairs, section.get("perturbation_params")),
                   float(section.get("h_max", DEFAULT_H_MAX)))

    @property
    def divergence_vanishes(self) -> bool:
        return self.perturbation.divergence_vanishes

    def divergence(self, x1, x2) -> np.ndarray:
        return self.perturbation.divergence(x1, x2)

    def slow_drift(self, x1, x2, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """b(x, y) = grad-perp H(x) + sum_j e_j(x) phi_j(y), phi of shape (J, *shape)."""
        grad = self.hamiltonian.gradient(x1, x2)
        b1 = -grad[1]
        b2 = grad[0].copy()
        if self.perturbation.is_constant:
            e = self.perturbation.evaluate(0.0, 0.0)
            b1 = b1 + np.tensordot(e[:, 0], phi, axes=(0, 0))
            b2 = b2 + np.tensordot(e[:, 1], phi, axes=(0, 0))
        else:
            e = self.perturbation.evaluate(x1, x2)
            b1 = b1 + np.sum(e[:, 0] * phi, axis=0)
            b2 = b2 + np.sum(e[:, 1] * phi, axis=0)
        return b1, b2

    def hamiltonian_part(self, x1, x2) -> np.ndarray:
        """g_j(x) = grad H . e_j, shape (J, *shape)."""
        grad = self.hamiltonian.gradient(x1, x2)
        e = self.perturbation.evaluate(x1, x2)
        return e[:, 0] * grad[0] + e[:, 1] * grad[1]


# --- critical points --------------------------------------------------------

@dataclass(frozen=True)
class CriticalPoint:
    location: tuple[float, float]
    kind: str  # minimum | maximum | saddle
    value: float
    eigenvalues: tuple[float, float]
    eigenvectors: tuple[tuple[float, float], tuple[float, float]]

    @property
    def point(self) -> np.ndarray:
        return np.asarray(self.location, dtype=float)


def classify(field: ScalarField, location: np.ndarray) -> CriticalPoint:
    jet = field.jet(location[0], location[1], order=2)
    hess = np.asarray(jet.hess, dtype=float).reshape(2, 2)
    det = float(np.linalg.det(hess))
    if abs(det) < 1e-10:
        raise DegenerateCriticalPointError(
            f"critical point at ({location[0]:.6g}, {location[1]:.6g}): degenerate Hessian, det = {det:.3e}"
        )
    eigvals, eigvecs = np.linalg.eigh(hess)
    if eigvals[0] > 0:
        kind = "minimum"
    elif eigvals[1] < 0:
        kind = "maximum"
    else:
        kind = "saddle"
    return CriticalPoint(
        (float(location[0]), float(location[1])),
        kind,
        float(np.asarray(jet.val)),
        (float(eigvals[0]), float(eigvals[1])),
        (tuple(eigvecs[:, 0].tolist()), tuple(eigvecs[:, 1].tolist())),
    )


def find_critical_points(
    field: ScalarField,
    box: Sequence[float] = (-3.0, 3.0, -3.0, 3.0),
    seeds_per_axis: int = 15,
    max_iter: int = 60,
    grad_tol: float = 1e-10,
) -> list[CriticalPoint]:
    """Vectorized Newton from a seed grid, deduplicated at radius 1e-6 and classified."""
    x_lo, x_hi, y_lo, y_hi = box
    s1, s2 = np.meshgrid(np.linspace(x_lo, x_hi, seeds_per_axis), np.linspace(y_lo, y_hi, seeds_per_axis))
    x = np.stack([s1.ravel(), s2.ravel()])
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            jet = field.jet(x[0], x[1], order=2)
            g = jet.grad
            h = jet.hess
            det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
            dx1 = (h[1, 1] * g[0] - h[0, 1] * g[1]) / det
            dx2 = (-h[1, 0] * g[0] + h[0, 0] * g[1]) / det
            x = x - np.stack([dx1, dx2])
        g = field.gradient(x[0], x[1])
    norm = np.hypot(g[0], g[1])
    margin_x = 0.1 * (x_hi - x_lo)
    margin_y = 0.1 * (y_hi - y_lo)
    inside = (
        (x[0] >= x_lo - margin_x) & (x[0] <= x_hi + margin_x) & (x[1] >= y_lo - margin_y) & (x[1] <= y_hi + margin_y)
    )
    converged = np.isfinite(norm) & (norm < grad_tol) & inside
    diverged = int(np.sum(~converged))
    if diverged:
        logger.warning("Newton: %d of %d seeds did not converge inside the box", diverged, converged.size)
    roots: list[np.ndarray] = []
    for point in x[:, converged].T:
        if all(np.hypot(*(point - r)) > 1e-6 for r in roots):
            roots.append(point)
    if not roots:
        logger.warning("Newton did not converge from any seed in box %s", tuple(box))
    criticals = [classify(field, r) for r in roots]
    criticals.sort(key=lambda c: (c.value, c.location))
    logger.info(
        "Found %d critical points: %s", len(criticals), ", ".join(f"{c.kind}@{c.location}" for c in criticals)
    )
    return criticals


# --- level curves -------------------------------------------------------------

@dataclass(frozen=True)
class LevelCurve:
    """Closed polygon on a level set; segment i joins point i to point i+1 (cyclically)."""

    points: np.ndarray  # (n, 2)
    dl: np.ndarray  # (n,) arclength of segment i
    grad_norm: np.ndarray  # (n,)
    h: float
    edge: int | None = None

    @property
    def length(self) -> float:
        return float(np.sum(self.dl))

    def area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def contains(self, x1, x2) -> np.ndarray:
        """Even-odd ray casting test for arrays of points."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        px, py = self.points[:, 0], self.points[:, 1]
        qx, qy = np.roll(px, -1), np.roll(py, -1)
        inside = np.zeros(x1.shape, dtype=bool)
        for ax, ay, bx, by in zip(px, py, qx, qy):
            straddles = (ay > x2) != (by > x2)
            if not np.any(straddles):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                cross_x = ax + (x2 - ay) * (bx - ax) / (by - ay)
            inside ^= straddles & (x1 < cross_x)
        return inside

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x1": self.points[:, 0], "x2": self.points[:, 1], "grad_norm": self.grad_norm})


def _gradient_at(field: ScalarField, point: np.ndarray) -> tuple[float, np.ndarray]:
    jet = field.jet(point[0], point[1], order=1)
    return float(jet.val), np.asarray(jet.grad, dtype=float).reshape(2)


def _tangent(field: ScalarField, point: np.ndarray) -> np.ndarray:
    _, g = _gradient_at(field, point)
    norm = math.hypot(g[0], g[1])
    if norm < 1e-12:
        raise TracingError(f"|grad H| = {norm:.2e} below 1e-12 at ({point[0]:.6g}, {point[1]:.6g})")
    return np.array([-g[1], g[0]]) / norm


def _project_to_level(field: ScalarField, point: np.ndarray, h: float, tol: float, iters: int = 8):
    value, g = _gradient_at(field, point)
    for _ in range(iters):
        if abs(value - h) <= tol * (1.0 + abs(h)):
            break
        point = point - (value - h) * g / float(g @ g)
        value, g = _gradient_at(field, point)
    return point, value, g


def _rk4(field: ScalarField, point: np.ndarray, step: float) -> np.ndarray:
    k1 = _tangent(field, point)
    k2 = _tangent(field, point + 0.5 * step * k1)
    k3 = _tangent(field, point + 0.5 * step * k2)
    k4 = _tangent(field, point + step * k3)
    return point + step * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _step_length(grad_norm: float, ds_max: float, step_factor: float) -> float:
    return min(ds_max, step_factor * grad_norm)


def _batch_gradient(field: ScalarField, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    jet = field.jet(pts[:, 0], pts[:, 1], order=1)
    return np.asarray(jet.val, dtype=float), np.asarray(jet.grad, dtype=float).T


def _batch_tangent(field: ScalarField, pts: np.ndarray) -> np.ndarray:
    _, g = _batch_gradient(field, pts)
    norm = np.hypot(g[:, 0], g[:, 1])
    if np.any(norm < 1e-12):
        i = int(np.argmin(norm))
        raise TracingError(f"|grad H| = {norm[i]:.2e} below 1e-12 at ({pts[i, 0]:.6g}, {pts[i, 1]:.6g})")
    return np.stack([-g[:, 1], g[:, 0]], axis=1) / norm[:, None]


def _batch_project(field: ScalarField, pts: np.ndarray, hs: np.ndarray, tol: float, iters: int = 8):
    values, g = _batch_gradient(field, pts)
    for _ in range(iters):
        off = values - hs
        if np.all(np.abs(off) <= tol * (1.0 + np.abs(hs))):
            break
        pts = pts - (off / np.einsum("ij,ij->i", g, g))[:, None] * g
        values, g = _batch_gradient(field, pts)
    return pts, values, g


def _chord_lengths(points) -> np.ndarray:
    """Length of segment i from point i to point i+1, the last one closing back to the start."""
    closed = np.vstack([points, points[:1]])
    return np.linalg.norm(np.diff(closed, axis=0), axis=1)


def trace_levels(
    field: ScalarField,
    anchors,
    hs,
    edge: int | None = None,
    ds_max: float = DS_MAX,
    step_factor: float = STEP_FACTOR,
    trace_tol: float = TRACE_TOL,
    max_steps: int = MAX_TRACE_STEPS,
) -> list[LevelCurve]:
    """Trace several level components at once, one per (anchor, h) pair.

    Each curve follows grad-perp H/|grad H| by RK4 with step min(ds_max, c*|grad H|),
    is pulled back onto its level by Newton after every step, and closes when its
    start point falls inside the latest segment.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    hs = np.atleast_1d(np.asarray(hs, dtype=float))
    n = len(hs)
    start, values, g = _batch_project(field, anchors, hs, trace_tol)
    bad = np.abs(values - hs) > 1e-6 * (1.0 + np.abs(hs))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise TracingError(f"anchor: H = {values[i]:.10g} is not on level h = {hs[i]:.10g}")
    norms0 = np.hypot(g[:, 0], g[:, 1])
    points = [[start[i]] for i in range(n)]
    norms = [[norms0[i]] for i in range(n)]
    current = start.copy()
    grad_norm = norms0.copy()
    travelled = np.zeros(n)
    done: dict[int, LevelCurve] = {}
    active = np.arange(n)
    for _ in range(max_steps):
        if active.size == 0:
            break
        step = np.minimum(ds_max, step_factor * grad_norm[active])
        if np.any(step < 1e-12):
            i = int(active[np.argmin(step)])
            raise TracingError(f"h={hs[i]:.10g}: step collapsed near a critical point")
        cur = current[active]
        k1 = _batch_tangent(field, cur)
        k2 = _batch_tangent(field, cur + 0.5 * step[:, None] * k1)
        k3 = _batch_tangent(field, cur + 0.5 * step[:, None] * k2)
        k4 = _batch_tangent(field, cur + step[:, None] * k3)
        proposal = cur + step[:, None] * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        proposal, _, g = _batch_project(field, proposal, hs[active], trace_tol)
        travelled[active] += step
        seg = proposal - cur
        rel = start[active] - cur
        seg_len2 = np.einsum("ij,ij->i", seg, seg)
        t = np.einsum("ij,ij->i", rel, seg) / np.where(seg_len2 > 0, seg_len2, np.inf)
        gap = np.hypot(*(rel - t[:, None] * seg).T)
        counts = np.array([len(points[i]) for i in active])
        closing = (counts > 3) & (travelled[active] > 4.0 * step) & (t >= 0.0) & (t <= 1.0) & (gap < 0.5 * step)
        keep = []
        for row, i in enumerate(active):
            if closing[row]:
                done[i] = LevelCurve(
                    np.array(points[i]), _chord_lengths(points[i]), np.array(norms[i]), float(hs[i]), edge
                )
                continue
            points[i].append(proposal[row])
            gn = float(np.hypot(*g[row]))
            norms[i].append(gn)
            current[i] = proposal[row]
            grad_norm[i] = gn
            keep.append(i)
        active = np.asarray(keep, dtype=np.int64)
    if active.size:
        h_bad = ", ".join(f"{hs[i]:.10g}" for i in active[:5])
        raise TracingError(f"h={h_bad}: no closure after {max_steps} steps (level at or beyond a critical value?)")
    return [done[i] for i in range(n)]


def trace_level(
    field: ScalarField,
    anchor,
    h: float,
    edge: int | None = None,
    ds_max: float = DS_MAX,
    step_factor: float = STEP_FACTOR,
    trace_tol: float = TRACE_TOL,
    max_steps: int = MAX_TRACE_STEPS,
) -> LevelCurve:
    """Follow grad-perp H from ``anchor`` around the component of {H = h} until it closes."""
    return trace_levels(
        field, [anchor], [h], edge=edge, ds_max=ds_max, step_factor=step_factor,
        trace_tol=trace_tol, max_steps=max_steps,
    )[0]


def line_integral(curve: LevelCurve, f: Callable | None = None) -> float:
    """Trapezoid sum of f(x)/|grad H(x)| dl around the curve; f = None gives Q(h).

    Points with vanishing gradient (the saddle on a separatrix lobe) contribute zero,
    so only integrands vanishing there should be used on lobes.
    """
    if f is None:
        values = np.ones(len(curve.points))
    else:
        values = np.asarray(f(curve.points[:, 0], curve.points[:, 1]), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(curve.grad_norm > 0, values / curve.grad_norm, 0.0)
    return float(np.sum(0.5 * (integrand + np.roll(integrand, -1)) * curve.dl))


def anchor_on_ray(
    field: ScalarField, origin, direction, h: float, t_max: float = 10.0, samples: int = 400
) -> np.ndarray:
    """First point along origin + t*direction (t > 0) where H crosses h, by bisection."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.hypot(*direction)
    ts = np.linspace(0.0, t_max, samples + 1)
    values = field(origin[0] + ts * direction[0], origin[1] + ts * direction[1]) - h
    signs = np.sign(values)
    for i in range(1, len(ts)):
        if signs[i] == 0.0:
            return origin + ts[i] * direction
        if signs[i - 1] != 0.0 and signs[i] != signs[i - 1]:
            def along(t: float) -> float:
                p = origin + t * direction
                return float(field(p[0], p[1])) - h

            t_star = brentq(along, ts[i - 1], ts[i], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            return origin + t_star * direction
    raise TracingError(f"ray from {tuple(origin)} along {tuple(direction)} never reaches h={h:.6g}")


# --- separatrices -----------------------------------------------------------

def _launch_directions(saddle: CriticalPoint) -> list[np.ndarray]:
    (lam_neg, lam_pos) = saddle.eigenvalues
    v_neg = np.asarray(saddle.eigenvectors[0])
    v_pos = np.asarray(saddle.eigenvectors[1])
    a = math.sqrt(abs(lam_neg))
    b = math.sqrt(abs(lam_pos))
    dirs = []
    for sign in (1.0, -1.0):
        d = a * v_pos + sign * b * v_neg
        d = d / np.hypot(*d)
        dirs.extend([d, -d])
    return dirs


def trace_separatrix(
    field: ScalarField,
    saddle: CriticalPoint,
    delta0: float = SEPARATRIX_OFFSET,
    ds_max: float = DS_MAX,
    step_factor: float = STEP_FACTOR,
    trace_tol: float = TRACE_TOL,
    max_steps: int = MAX_TRACE_STEPS,
) -> list[LevelCurve]:
    """Closed lobes of {H = H(saddle)} leaving and re-entering the saddle.

    Launch points sit delta0 from the saddle along the null directions of the
    Hessian; only branches on which the flow leaves the saddle are followed, so
    every lobe is traced once. Each lobe polygon starts at the saddle itself.
    """
    if saddle.kind != "saddle":
        raise TracingError(f"critical point at {saddle.location} is a {saddle.kind}, not a saddle")
    centre = saddle.point
    h = saddle.value
    lobes: list[LevelCurve] = []
    for direction in _launch_directions(saddle):
        launch, _, _ = _project_to_level(field, centre + delta0 * direction, h, trace_tol)
        if float(_tangent(field, launch) @ (launch - centre)) <= 0.0:
            continue
        points = [centre, launch]
        _, g = _gradient_at(field, launch)
        norms = [0.0, math.hypot(g[0], g[1])]
        current = launch
        travelled = 0.0
        for _ in range(max_steps):
            step = _step_length(norms[-1], ds_max, step_factor)
            proposal = _rk4(field, current, step)
            proposal, _, g = _project_to_level(field, proposal, h, trace_tol)
            travelled += step
            points.append(proposal)
            norms.append(math.hypot(g[0], g[1]))
            current = proposal
            if travelled > 10.0 * delta0 and math.hypot(*(proposal - centre)) < delta0:
                break
        else:
            raise TracingError(f"separatrix from {saddle.location} did not return within {max_steps} steps")
        lobe = LevelCurve(np.array(points), _chord_lengths(points), np.array(norms), float(h))
        centroid = lobe.points.mean(axis=0)
        if all(np.hypot(*(centroid - other.points.mean(axis=0))) > 1e-6 for other in lobes):
            lobes.append(lobe)
    logger.info("Traced %d separatrix lobes at saddle %s", len(lobes), saddle.location)
    return lobes
