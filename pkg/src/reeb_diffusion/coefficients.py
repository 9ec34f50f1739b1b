"""Limiting generator coefficients on the Reeb graph and gluing weights at interior vertices."""
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline, PchipInterpolator

from .corrector import CellProblemBasis, EffectiveMatrices, GreenKuboEstimate, green_kubo_matrix
from .hamiltonian import HamiltonianModel, line_integral
from .reeb import EXTERIOR, INFINITY, INTERIOR, ReebGraph, ReebGraphError
from .torus import FastProcess
from .utils import parallel_map

logger = logging.getLogger(__name__)

IDENTITY_TOL = 0.02
GLUING_TOL = 0.02


class CoefficientError(RuntimeError):
    pass


class GluingWeightsError(CoefficientError):
    pass


@dataclass
class PointwiseCoefficients:
    """A(x), B(x) and B~(x) for the separable drift b = grad-perp H + sum_j e_j phi_j."""

    model: HamiltonianModel
    matrices: EffectiveMatrices

    def terms(self, x1, x2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(g_j, K_jl = grad g_j . e_l, div e_j) at the given points."""
        hjet = self.model.hamiltonian.jet(x1, x2, order=2)
        grad, hess = hjet.grad, hjet.hess
        g, dg, e, div = [], [], [], []
        for a, b in self.model.perturbation.jets(x1, x2, order=1):
            g.append(a.val * grad[0] + b.val * grad[1])
            dg.append(
                np.stack([
                    hess[0, 0] * a.val + hess[0, 1] * b.val + a.grad[0] * grad[0] + b.grad[0] * grad[1],
                    hess[1, 0] * a.val + hess[1, 1] * b.val + a.grad[1] * grad[0] + b.grad[1] * grad[1],
                ])
            )
            e.append(np.stack([a.val, b.val]))
            div.append(a.grad[0] + b.grad[1])
        g = np.stack(g)
        dg = np.stack(dg)
        e = np.stack(e)
        K = np.einsum("ji...,li...->jl...", dg, e)
        return g, K, np.stack(div)

    def A(self, x1, x2) -> np.ndarray:
        g, _, _ = self.terms(x1, x2)
        return np.einsum("j...,jl,l...->...", g, self.matrices.A_mat, g)

    def B(self, x1, x2) -> np.ndarray:
        _, K, _ = self.terms(x1, x2)
        return np.einsum("jl...,jl->...", K, self.matrices.C_mat)

    def Btilde(self, x1, x2) -> np.ndarray:
        g, K, div = self.terms(x1, x2)
        C = self.matrices.C_mat
        return np.einsum("jl...,jl->...", K, C) + np.einsum("j...,l...,jl->...", g, div, C)


def pointwise_AB(model: HamiltonianModel, matrices: EffectiveMatrices) -> PointwiseCoefficients:
    if matrices.A_mat.shape != (model.perturbation.size,) * 2:
        raise CoefficientError(
            f"matrices: shape {matrices.A_mat.shape} does not match {model.perturbation.size} perturbation fields"
        )
    return PointwiseCoefficients(model, matrices)


@dataclass(frozen=True)
class TableGridSpec:
    graded_base: float = 0.1
    graded_levels: int = 11
    graded_refine: int = 2
    n_uniform: int = 24
    delta_min: float = 1e-3
    extrapolation_points: int = 8

    def offsets(self) -> np.ndarray:
        """delta_j = base * 2^(-j / refine); the refine=1 subset is base * 2^-j, j = 0..levels-1."""
        j = np.arange((self.graded_levels - 1) * self.graded_refine + 1)
        return self.graded_base * 2.0 ** (-j / self.graded_refine)


def edge_grid(graph: ReebGraph, edge_id: int, spec: TableGridSpec) -> np.ndarray:
    e = graph.edges[edge_id]
    lo_kind = graph.vertices[e.vertices[0]].kind
    hi_kind = graph.vertices[e.vertices[1]].kind
    width = e.h_hi - e.h_lo
    offsets = spec.offsets()
    offsets = offsets[offsets < 0.5 * width]
    smallest = float(offsets.min()) if offsets.size else spec.delta_min
    points = []
    a = e.h_lo + (smallest if lo_kind == INTERIOR else spec.delta_min)
    b = e.h_hi - {INTERIOR: smallest, EXTERIOR: spec.delta_min, INFINITY: 0.0}[hi_kind]
    points.append(np.linspace(a, b, spec.n_uniform))
    if lo_kind == INTERIOR:
        points.append(e.h_lo + offsets)
    if hi_kind == INTERIOR:
        points.append(e.h_hi - offsets)
    return np.unique(np.concatenate(points))


def _extend_low(coord: np.ndarray, values: np.ndarray, interp, c: np.ndarray) -> np.ndarray:
    # linear continuation below the grid, clamping above it
    out = interp(np.clip(c, coord[0], coord[-1]))
    low = c < coord[0]
    if np.any(low):
        slope = (values[1] - values[0]) / (coord[1] - coord[0])
        out = np.where(low, values[0] + slope * (c - coord[0]), out)
    return out


@dataclass
class EdgeCoefficientTable:
    edge: int
    h: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Btilde: np.ndarray
    vertex_value: float | None = None
    h_lo: float = field(default=0.0)
    h_hi: float = field(default=0.0)

    def __post_init__(self):
        order = np.argsort(self.h)
        for name in ("h", "Q", "A", "B", "Btilde"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float)[order])
        if np.any(self.Q[1:-1] <= 0) or np.any(self.A[1:-1] <= 0):
            raise CoefficientError(f"edge {self.edge}: Q and A must be positive on interior grid points")
        coord = self.coordinate(self.h)
        corder = np.argsort(coord)
        self._coord = coord[corder]
        self._P = (self.A * self.Q)[corder]
        self._BQ = (self.B * self.Q)[corder]
        self._BtQ = (self.Btilde * self.Q)[corder]
        self._Qc = self.Q[corder]
        self._p_interp = PchipInterpolator(self._coord, self._P)
        self._bq_interp = PchipInterpolator(self._coord, self._BQ)
        self._q_interp = PchipInterpolator(self._coord, self._Qc)

    def coordinate(self, h) -> np.ndarray:
        """log-distance to the interior vertex, or h itself on edges without one."""
        h = np.asarray(h, dtype=float)
        if self.vertex_value is None:
            return h
        return np.log(np.maximum(np.abs(h - self.vertex_value), 1e-300))

    @property
    def P(self) -> np.ndarray:
        return self.A * self.Q

    def Q_at(self, h) -> np.ndarray:
        c = self.coordinate(h)
        if self.vertex_value is None:
            return self._q_interp(np.clip(c, self._coord[0], self._coord[-1]))
        return _extend_low(self._coord, self._Qc, self._q_interp, c)

    def P_at(self, h) -> np.ndarray:
        return self._p_interp(np.clip(self.coordinate(h), self._coord[0], self._coord[-1]))

    def A_at(self, h) -> np.ndarray:
        return self.P_at(h) / self.Q_at(h)

    def B_at(self, h) -> np.ndarray:
        return self._bq_interp(np.clip(self.coordinate(h), self._coord[0], self._coord[-1])) / self.Q_at(h)

    def AB_at(self, h) -> tuple[np.ndarray, np.ndarray]:
        """A and B at once, sharing the Q evaluation."""
        c = np.clip(self.coordinate(h), self._coord[0], self._coord[-1])
        q = self.Q_at(h)
        return self._p_interp(c) / q, self._bq_interp(c) / q

    @property
    def min_offset(self) -> float:
        """Smallest tabulated distance to the interior vertex."""
        if self.vertex_value is None:
            return 0.0
        return float(np.min(np.abs(self.h - self.vertex_value)))

    def vertex_side(self) -> int:
        """+1 if the interior vertex is the lower end of the edge, -1 if it is the upper end."""
        return 1 if abs(self.h_lo - self.vertex_value) <= abs(self.h_hi - self.vertex_value) else -1

    def identity_defect(self, trim: int = 2) -> float:
        """max relative defect of (A Q)'/2 = B~ Q over the grid, ends trimmed."""
        spline = CubicSpline(self._coord, self._P)
        dP_dc = spline(self._coord, 1)
        if self.vertex_value is None:
            dP_dh = dP_dc
        else:
            # c = log|h - h_O|, dc/dh = 1/(h - h_O)
            h = self._h_from_coord(self._coord)
            dP_dh = dP_dc / (h - self.vertex_value)
        lhs = 0.5 * dP_dh
        rhs = self._BtQ
        floor = 1e-2 * float(np.max(np.abs(rhs)))
        rel = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), floor)
        inner = rel[trim:-trim] if len(rel) > 2 * trim + 1 else rel
        return float(np.max(inner))

    def _h_from_coord(self, c: np.ndarray) -> np.ndarray:
        side = 1.0 if np.mean(self.h) > self.vertex_value else -1.0
        return self.vertex_value + side * np.exp(c)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"k": self.edge, "h": self.h, "Q": self.Q, "A": self.A, "B": self.B, "Btilde": self.Btilde}
        )


def _tabulate_edge(graph: ReebGraph, pointwise: PointwiseCoefficients, job: tuple[int, np.ndarray]):
    edge_id, hs = job
    curves = graph.level_curves(edge_id, hs)
    rows = []
    for curve in curves:
        q = line_integral(curve)
        rows.append((
            curve.h,
            q,
            line_integral(curve, pointwise.A) / q,
            line_integral(curve, pointwise.B) / q,
            line_integral(curve, pointwise.Btilde) / q,
        ))
    return edge_id, np.array(rows)


def edge_tables(
    graph: ReebGraph,
    pointwise: PointwiseCoefficients,
    spec: TableGridSpec | None = None,
    workers: int | None = None,
) -> dict[int, EdgeCoefficientTable]:
    """Level-averaged Q, A, B, B~ on each edge's graded grid."""
    spec = spec or TableGridSpec()
    jobs = [(k, edge_grid(graph, k, spec)) for k in sorted(graph.edges)]
    results = parallel_map(partial(_tabulate_edge, graph, pointwise), jobs, workers=workers)
    tables = {}
    for edge_id, rows in results:
        vertex = graph.interior_end(edge_id)
        e = graph.edges[edge_id]
        tables[edge_id] = EdgeCoefficientTable(
            edge_id, rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4],
            None if vertex is None else vertex.value, e.h_lo, e.h_hi,
        )
        logger.info("Tabulated edge %d: %d heights in [%.4g, %.4g]", edge_id, len(rows), rows[0, 0], rows[-1, 0])
    return tables


def tables_to_frame(tables: Mapping[int, EdgeCoefficientTable]) -> pd.DataFrame:
    return pd.concat([tables[k].to_frame() for k in sorted(tables)], ignore_index=True)


def tables_from_frame(frame: pd.DataFrame, graph: ReebGraph) -> dict[int, EdgeCoefficientTable]:
    missing = {"k", "h", "Q", "A", "B", "Btilde"} - set(frame.columns)
    if missing:
        raise CoefficientError(f"table frame: missing columns {sorted(missing)}")
    tables = {}
    for k, group in frame.groupby("k"):
        k = int(k)
        vertex = graph.interior_end(k)
        e = graph.edges[k]
        tables[k] = EdgeCoefficientTable(
            k, group["h"].to_numpy(), group["Q"].to_numpy(), group["A"].to_numpy(), group["B"].to_numpy(),
            group["Btilde"].to_numpy(), None if vertex is None else vertex.value, e.h_lo, e.h_hi,
        )
    return tables


# --- gluing weights ---------------------------------------------------------

@dataclass(frozen=True)
class GluingWeights:
    vertex: int
    p: dict[int, float]
    signs: dict[int, int]
    route_a: dict[int, float]
    route_b: dict[int, float]
    discrepancy: dict[int, float]

    @property
    def p_hat(self) -> dict[int, float]:
        total = sum(self.p.values())
        return {k: v / total for k, v in self.p.items()}

    @property
    def flux_balance(self) -> float:
        return _signed_imbalance(self.p, self.signs)

    @property
    def extrapolated_flux_balance(self) -> float:
        """Imbalance of the edge-wise A_k Q_k limits, independent of the lobe quadrature."""
        return _signed_imbalance(self.route_a, self.signs)

    def to_dict(self) -> dict:
        return {
            "vertex": self.vertex,
            "p": {str(k): v for k, v in self.p.items()},
            "p_hat": {str(k): v for k, v in self.p_hat.items()},
            "signs": {str(k): v for k, v in self.signs.items()},
            "route_a": {str(k): v for k, v in self.route_a.items()},
            "route_b": {str(k): v for k, v in self.route_b.items()},
            "discrepancy": {str(k): v for k, v in self.discrepancy.items()},
            "flux_balance": self.flux_balance,
            "extrapolated_flux_balance": self.extrapolated_flux_balance,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GluingWeights":
        def ints(d):
            return {int(k): v for k, v in d.items()}

        return cls(
            int(payload["vertex"]), ints(payload["p"]), {int(k): int(v) for k, v in payload["signs"].items()},
            ints(payload["route_a"]), ints(payload.get("route_b", {})), ints(payload.get("discrepancy", {})),
        )


def _signed_imbalance(p: Mapping[int, float], signs: Mapping[int, int]) -> float:
    return abs(sum(signs[k] * p[k] for k in p)) / max(abs(v) for v in p.values())


def extrapolate_product(table: EdgeCoefficientTable, n_points: int = 8) -> float:
    """Least-squares fit P(delta) = p + a*delta*log(delta) + b*delta on the closest grid points."""
    if table.vertex_value is None:
        raise CoefficientError(f"edge {table.edge}: no interior vertex to extrapolate towards")
    delta = np.abs(table.h - table.vertex_value)
    order = np.argsort(delta)[:n_points]
    d = delta[order]
    design = np.stack([np.ones_like(d), d * np.log(d), d], axis=1)
    coeffs, *_ = np.linalg.lstsq(design, table.P[order], rcond=None)
    return float(coeffs[0])


def separatrix_integrals(
    graph: ReebGraph, vertex_id: int, pointwise: PointwiseCoefficients, offset: float = 1e-3
) -> dict[int, float]:
    """Sum of lobe integrals of A/|grad H| over the lobes bounding each incident edge."""
    v = graph.vertices[vertex_id]
    centre = np.asarray(v.location, dtype=float)
    hamiltonian = graph.hamiltonian
    totals: dict[int, float] = {}
    for lobe in graph.lobes:
        if np.hypot(*(lobe.points[0] - centre)) > 1e-9:
            continue
        integral = line_integral(lobe, pointwise.A)
        mid = lobe.points[len(lobe.points) // 2]
        grad = np.asarray(hamiltonian.gradient(mid[0], mid[1]), dtype=float)
        normal = grad / np.hypot(*grad)
        probes = np.stack([mid - offset * normal, mid + offset * normal])
        edges, _ = graph.project_many(probes[:, 0], probes[:, 1])
        for k in set(int(e) for e in edges):
            totals[k] = totals.get(k, 0.0) + integral
    return totals


def gluing_weights(
    graph: ReebGraph,
    vertex_id: int,
    tables: Mapping[int, EdgeCoefficientTable],
    pointwise: PointwiseCoefficients | None = None,
    spec: TableGridSpec | None = None,
    tolerance: float = GLUING_TOL,
) -> GluingWeights:
    """p_k = lim A_k Q_k at the vertex, by extrapolation and by separatrix quadrature."""
    spec = spec or TableGridSpec()
    if graph.vertices[vertex_id].kind != INTERIOR:
        raise CoefficientError(f"vertex {vertex_id}: gluing weights exist only at interior vertices")
    incident = [e.id for e in graph.incident_edges(vertex_id)]
    route_a = {k: extrapolate_product(tables[k], spec.extrapolation_points) for k in incident}
    route_b: dict[int, float] = {}
    if pointwise is not None and graph.lobes:
        try:
            route_b = separatrix_integrals(graph, vertex_id, pointwise)
        except ReebGraphError as e:
            raise GluingWeightsError(f"vertex {vertex_id}: lobe-to-edge mapping failed: {e}") from e
    discrepancy = {}
    for k in incident:
        if k in route_b:
            a, b = route_a[k], route_b[k]
            discrepancy[k] = abs(a - b) / max(abs(a), abs(b))
            if discrepancy[k] > tolerance:
                raise GluingWeightsError(
                    f"edge {k}: extrapolated p={a:.6g} and separatrix p={b:.6g} differ by {discrepancy[k]:.2%}"
                )
    p = {k: route_b.get(k, route_a[k]) for k in incident}
    signs = {k: graph.sign(k, vertex_id) for k in incident}
    weights = GluingWeights(vertex_id, p, signs, route_a, {k: route_b[k] for k in incident if k in route_b},
                            discrepancy)
    logger.info("Gluing weights at vertex %d: %s (flux balance %.2e, extrapolated %.2e)", vertex_id,
                weights.p_hat, weights.flux_balance, weights.extrapolated_flux_balance)
    return weights


def stationary_weights(tables: Mapping[int, EdgeCoefficientTable]) -> dict[int, float]:
    """Edge masses of the measure Q_k(h) dh, normalized over the graph."""
    masses = {}
    for k, t in tables.items():
        mass = float(trapezoid(t.Q, t.h))
        # end pieces not covered by the grid, Q taken from the nearest node
        mass += (t.h[0] - t.h_lo) * t.Q[0] + (t.h_hi - t.h[-1]) * t.Q[-1]
        masses[k] = mass
    total = sum(masses.values())
    return {k: m / total for k, m in masses.items()}


# --- Green-Kubo cross-checks --------------------------------------------------

def autocorrelation_A(
    x: Sequence[float],
    pointwise: PointwiseCoefficients,
    process: FastProcess,
    basis: CellProblemBasis,
    **mc,
) -> GreenKuboEstimate:
    """int_0^inf E_mu[b_h(x, xi_s) b_h(x, xi_0)] ds, which equals A(x)/2."""
    g, _, _ = pointwise.terms(np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float))
    g = np.asarray(g, dtype=float).reshape(-1)
    return green_kubo_matrix(process, basis, weights=np.outer(g, g), **mc)


def autocorrelation_B(
    x: Sequence[float],
    pointwise: PointwiseCoefficients,
    process: FastProcess,
    basis: CellProblemBasis,
    **mc,
) -> GreenKuboEstimate:
    """int_0^inf E_mu[grad_x b_h(x, xi_s) . (b - grad-perp H)(x, xi_0)] ds, which equals B(x)."""
    _, K, _ = pointwise.terms(np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float))
    K = np.asarray(K, dtype=float).reshape(basis.size, basis.size)
    return green_kubo_matrix(process, basis, weights=K, **mc)


def nearest_offset_ratio(tables: Mapping[int, EdgeCoefficientTable], k_from: int, k_to: int, delta):
    """sqrt(A_to / A_from) at the same distance delta from the shared vertex.

    delta is raised to the finest tabulated offset of either edge, so both
    sides are read at a matched grid offset.
    """
    t_from, t_to = tables[k_from], tables[k_to]
    delta = np.maximum(np.asarray(delta, dtype=float), max(t_from.min_offset, t_to.min_offset))
    a_from = t_from.A_at(t_from.vertex_value + t_from.vertex_side() * delta)
    a_to = t_to.A_at(t_to.vertex_value + t_to.vertex_side() * delta)
    ratio = np.sqrt(a_to / a_from)
    return float(ratio) if ratio.ndim == 0 else ratio
