"""Limiting diffusion on the Reeb graph: Monte Carlo in h and a backward Kolmogorov solver.

On edge k the process has generator (1/2) A_k f'' + B_k f'. At an interior
vertex continuity is imposed together with the flux condition
sum_k p_k D_k f = 0, D_k the derivative pointing away from the vertex.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from .coefficients import EdgeCoefficientTable, GluingWeights, nearest_offset_ratio
from .fastslow import EnsembleResult
from .reeb import EXTERIOR, INFINITY, INTERIOR, GraphPoint, ReebGraph
from .stats import multinomial_intervals
from .streams import PathNoise, initial_uniforms, path_blocks
from .utils import parallel_map

logger = logging.getLogger(__name__)

GRAPH_STREAM = 2
ENTRY_STREAM = 3
THRESHOLD_FACTOR = 10.0
STABILITY_FRACTION = 0.1
NEAR_VERTEX = 0.1


class GraphProcessError(ValueError):
    pass


class PDESolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class GraphDiffusionConfig:
    graph: ReebGraph
    tables: Mapping[int, EdgeCoefficientTable]
    weights: Mapping[int, GluingWeights]
    dt: float = 1e-4
    T: float = 1.0
    n_paths: int = 10_000
    seed: int = 0
    h_star: float | None = None
    delta_min: float = 1e-3
    output_times: tuple[float, ...] = ()
    block_size: int = 4096
    chunk: int = 256

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise GraphProcessError(f"dt/T: must be positive, got dt={self.dt}, T={self.T}")
        if self.n_paths < 1:
            raise GraphProcessError(f"n_paths: must be at least 1, got {self.n_paths}")
        missing = [v.id for v in self.graph.interior_vertices if v.id not in self.weights]
        if missing:
            raise GraphProcessError(f"weights: no gluing weights for vertices {missing}")
        missing = sorted(set(self.graph.edges) - set(self.tables))
        if missing:
            raise GraphProcessError(f"tables: no coefficient table for edges {missing}")
        times = tuple(float(t) for t in (self.output_times or (self.T,)))
        if any(not 0.0 <= t <= self.T for t in times):
            raise GraphProcessError(f"output_times: {times} outside [0, T={self.T}]")
        object.__setattr__(self, "output_times", tuple(sorted(set(times))))
        a_near = self.max_A_near_vertex()
        floor = THRESHOLD_FACTOR * math.sqrt(a_near * self.dt)
        if self.h_star is None:
            object.__setattr__(self, "h_star", floor)
        elif self.h_star < floor:
            raise GraphProcessError(
                f"h_star: {self.h_star:.3g} is below 10*sqrt(A_near*dt) = {floor:.3g}"
            )
        width = min(e.h_hi - e.h_lo for e in self.graph.edges.values())
        a_max = max(float(np.max(t.A)) for t in self.tables.values())
        b_max = max(float(np.max(np.abs(t.B))) for t in self.tables.values())
        if math.sqrt(a_max * self.dt) > STABILITY_FRACTION * width or b_max * self.dt > STABILITY_FRACTION * width:
            raise GraphProcessError(
                f"dt: {self.dt:.3g} too large for max A={a_max:.3g}, max |B|={b_max:.3g} on edges of width {width:.3g}"
            )

    def max_A_near_vertex(self) -> float:
        values = [0.0]
        for t in self.tables.values():
            if t.vertex_value is None:
                continue
            near = np.abs(t.h - t.vertex_value) <= NEAR_VERTEX
            if np.any(near):
                values.append(float(np.max(t.A[near])))
        return max(values)

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.dt - 1e-9))

    @property
    def step(self) -> float:
        return self.T / self.n_steps

    def output_steps(self) -> np.ndarray:
        return np.rint(np.asarray(self.output_times) / self.step).astype(np.int64)


class _VertexChoice:
    """Edge ids and cumulative normalized weights at one vertex."""

    def __init__(self, weights: GluingWeights):
        p_hat = weights.p_hat
        self.edges = np.array(sorted(p_hat), dtype=np.int64)
        self.cdf = np.cumsum([p_hat[k] for k in self.edges])
        self.cdf[-1] = 1.0

    def pick(self, u: np.ndarray) -> np.ndarray:
        idx = np.minimum(np.searchsorted(self.cdf, u, side="right"), len(self.edges) - 1)
        return self.edges[idx]


def _redirect(config, choices, vertex, k_from, excess, u):
    """New (edge, h) for overshoots of size ``excess`` past the vertex from edge ``k_from``."""
    new_k = choices[vertex.id].pick(u)
    new_h = np.empty_like(excess)
    for k_to in np.unique(new_k):
        m = new_k == k_to
        ratio = nearest_offset_ratio(config.tables, k_from, int(k_to), excess[m])
        side = config.tables[int(k_to)].vertex_side()
        new_h[m] = vertex.value + side * excess[m] * ratio
    return new_k, new_h


def _step_many(config: GraphDiffusionConfig, choices, edges, h, z, u):
    """One Euler-Maruyama step in h for many paths, with the vertex and end rules."""
    dt = config.step
    graph = config.graph
    new_k = edges.copy()
    new_h = h.copy()
    for k, table in config.tables.items():
        m = edges == k
        if not np.any(m):
            continue
        A, B = table.AB_at(h[m])
        new_h[m] = h[m] + B * dt + np.sqrt(np.maximum(A, 0.0) * dt) * z[m]
    for k in config.tables:
        e = graph.edges[k]
        m = edges == k
        if not np.any(m):
            continue
        for end, vid in (("lo", e.vertices[0]), ("hi", e.vertices[1])):
            vertex = graph.vertices[vid]
            if end == "lo":
                bound = e.h_lo + (config.delta_min if vertex.kind == EXTERIOR else 0.0)
                out = m & (new_h < bound)
            else:
                bound = {EXTERIOR: e.h_hi - config.delta_min, INFINITY: graph.h_max}.get(vertex.kind, e.h_hi)
                out = m & (new_h > bound)
            if not np.any(out):
                continue
            if vertex.kind == INTERIOR:
                excess = np.abs(new_h[out] - vertex.value)
                new_k[out], new_h[out] = _redirect(config, choices, vertex, k, excess, u[out])
            else:
                new_h[out] = 2.0 * bound - new_h[out]
    ids = np.array(sorted(graph.edges), dtype=np.int64)
    pos = np.searchsorted(ids, new_k)
    lo = np.array([graph.edges[int(k)].h_lo for k in ids])[pos]
    hi = np.array([graph.edges[int(k)].h_hi for k in ids])[pos]
    bad = (new_h < lo - 1e-12) | (new_h > hi + 1e-12) | ~np.isfinite(new_h)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise GraphProcessError(
            f"step: h={new_h[i]:.6g} left edge {int(new_k[i])} range [{lo[i]:.6g}, {hi[i]:.6g}]; reduce dt"
        )
    return new_k, new_h


def _choices(config: GraphDiffusionConfig) -> dict[int, _VertexChoice]:
    return {vid: _VertexChoice(w) for vid, w in config.weights.items()}


def step_graph_diffusion(state: GraphPoint, config: GraphDiffusionConfig, rng: np.random.Generator) -> GraphPoint:
    config.graph.validate_point(state)
    k, h = _step_many(
        config, _choices(config), np.array([state.k]), np.array([state.h], dtype=float),
        np.array([rng.standard_normal()]), np.array([rng.random()]),
    )
    return GraphPoint(int(k[0]), float(h[0]))


def _exterior_values(graph: ReebGraph) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {}
    for k, e in graph.edges.items():
        out[k] = [graph.vertices[v].value for v in e.vertices if graph.vertices[v].kind == EXTERIOR]
    return out


def _graph_block(config: GraphDiffusionConfig, start: GraphPoint, path_ids: np.ndarray):
    n = len(path_ids)
    noise = PathNoise(config.seed, path_ids, chunk=config.chunk, substream=GRAPH_STREAM)
    choices = _choices(config)
    edges = np.full(n, start.k, dtype=np.int64)
    h = np.full(n, start.h, dtype=float)
    out_steps = config.output_steps()
    rec_k = np.empty((len(out_steps), n), dtype=np.int64)
    rec_h = np.empty((len(out_steps), n))
    exterior = _exterior_values(config.graph)
    ids = np.array(sorted(config.graph.edges), dtype=np.int64)
    occupation = np.zeros(len(ids))
    min_exterior = math.inf
    slot = 0
    while slot < len(out_steps) and out_steps[slot] == 0:
        rec_k[slot], rec_h[slot] = edges, h
        slot += 1
    for step in range(1, config.n_steps + 1):
        z, u = noise.next()
        edges, h = _step_many(config, choices, edges, h, z, u)
        occupation += np.bincount(np.searchsorted(ids, edges), minlength=len(ids))
        for k, values in exterior.items():
            m = edges == k
            if values and np.any(m):
                min_exterior = min(min_exterior, min(float(np.min(np.abs(h[m] - v))) for v in values))
        while slot < len(out_steps) and out_steps[slot] == step:
            rec_k[slot], rec_h[slot] = edges, h
            slot += 1
    return path_ids, rec_k, rec_h, occupation, min_exterior


def simulate_graph_diffusion(
    config: GraphDiffusionConfig, start: GraphPoint, workers: int | None = None
) -> EnsembleResult:
    """Ensemble of graph-diffusion paths from ``start`` with the fast-slow result schema."""
    config.graph.validate_point(start)
    blocks = path_blocks(config.n_paths, config.block_size)
    logger.info("Graph diffusion: %d paths, %d steps of dt=%.3e, h*=%.3g", config.n_paths, config.n_steps,
                config.step, config.h_star)
    results = parallel_map(partial(_graph_block, config, start), blocks, workers=workers)
    occupation = np.sum([r[3] for r in results], axis=0)
    occupation = occupation / occupation.sum()
    ids = sorted(config.graph.edges)
    tallies = {
        "occupation": {str(k): float(f) for k, f in zip(ids, occupation)},
        "min_exterior_distance": float(min(r[4] for r in results)),
    }
    return EnsembleResult(
        np.asarray(config.output_times),
        np.concatenate([r[1] for r in results], axis=1),
        np.concatenate([r[2] for r in results], axis=1),
        np.concatenate([r[0] for r in results]),
        config.seed,
        tallies=tallies,
        source="graph",
    )


@dataclass(frozen=True)
class EntryTally:
    vertex: int
    edges: list[int]
    counts: list[int]
    p_hat: list[float]
    intervals: list[tuple[float, float]]
    unresolved: int

    @property
    def frequencies(self) -> list[float]:
        total = sum(self.counts)
        return [c / total for c in self.counts]

    @property
    def consistent(self) -> bool:
        return all(lo <= p <= hi for p, (lo, hi) in zip(self.p_hat, self.intervals))

    def to_dict(self) -> dict:
        return {
            "vertex": self.vertex,
            "edges": self.edges,
            "counts": self.counts,
            "frequencies": self.frequencies,
            "p_hat": self.p_hat,
            "intervals": [list(i) for i in self.intervals],
            "unresolved": self.unresolved,
            "consistent": self.consistent,
        }


def _entry_block(config: GraphDiffusionConfig, vertex_id: int, max_steps: int, path_ids: np.ndarray):
    vertex = config.graph.vertices[vertex_id]
    choices = _choices(config)
    edges = choices[vertex_id].pick(initial_uniforms(config.seed, path_ids, substream=ENTRY_STREAM))
    h = np.full(len(path_ids), vertex.value)
    noise = PathNoise(config.seed, path_ids, chunk=config.chunk, substream=ENTRY_STREAM + 1)
    entered = np.full(len(path_ids), -1, dtype=np.int64)
    for _ in range(max_steps):
        z, u = noise.next()
        edges, h = _step_many(config, choices, edges, h, z, u)
        fresh = (entered < 0) & (np.abs(h - vertex.value) >= config.h_star)
        entered[fresh] = edges[fresh]
        if np.all(entered >= 0):
            break
    return entered


def vertex_entry_tally(
    config: GraphDiffusionConfig,
    vertex_id: int | None = None,
    max_steps: int = 100_000,
    confidence: float = 0.99,
    workers: int | None = None,
) -> EntryTally:
    """First edge on which paths started at the vertex reach distance h* from it."""
    if vertex_id is None:
        vertex_id = config.graph.interior_vertices[0].id
    blocks = path_blocks(config.n_paths, config.block_size)
    entered = np.concatenate(parallel_map(partial(_entry_block, config, vertex_id, max_steps), blocks,
                                          workers=workers))
    weights = config.weights[vertex_id]
    ids = sorted(weights.p_hat)
    counts = [int(np.sum(entered == k)) for k in ids]
    tally = EntryTally(vertex_id, ids, counts, [weights.p_hat[k] for k in ids],
                       multinomial_intervals(counts, confidence), int(np.sum(entered < 0)))
    logger.info("Vertex %d first entries %s vs p_hat %s", vertex_id, tally.frequencies, tally.p_hat)
    return tally


# --- backward Kolmogorov equation -------------------------------------------------

@dataclass(frozen=True)
class PDEGridSpec:
    n_per_edge: int = 201
    dt: float = 1e-3
    delta_min: float = 1e-3
    rannacher_steps: int = 2

    def refined(self) -> "PDEGridSpec":
        return replace(self, n_per_edge=2 * self.n_per_edge - 1, dt=self.dt / 2)


@dataclass
class PDEGrid:
    """Per-edge node sets sharing one unknown per interior vertex, and the generator matrix."""

    nodes: dict[int, np.ndarray]
    index: dict[int, np.ndarray]
    vertex_index: dict[int, int]
    size: int
    generator: sparse.csr_matrix = field(repr=False)

    @property
    def constraint_rows(self) -> np.ndarray:
        return np.array(sorted(self.vertex_index.values()), dtype=np.int64)


def _edge_nodes(graph: ReebGraph, k: int, spec: PDEGridSpec) -> np.ndarray:
    e = graph.edges[k]
    lo_kind = graph.vertices[e.vertices[0]].kind
    hi_kind = graph.vertices[e.vertices[1]].kind
    a = e.h_lo + (spec.delta_min if lo_kind == EXTERIOR else 0.0)
    b = e.h_hi - (spec.delta_min if hi_kind == EXTERIOR else 0.0)
    if hi_kind == INFINITY:
        b = graph.h_max
    return np.linspace(a, b, spec.n_per_edge)


def build_pde_grid(
    graph: ReebGraph,
    tables: Mapping[int, EdgeCoefficientTable],
    weights: Mapping[int, GluingWeights],
    spec: PDEGridSpec,
) -> PDEGrid:
    vertex_index: dict[int, int] = {}
    index: dict[int, np.ndarray] = {}
    nodes: dict[int, np.ndarray] = {}
    counter = 0
    for v in graph.interior_vertices:
        vertex_index[v.id] = counter
        counter += 1
    for k in sorted(graph.edges):
        e = graph.edges[k]
        hs = _edge_nodes(graph, k, spec)
        idx = np.empty(len(hs), dtype=np.int64)
        inner = len(hs) - sum(graph.vertices[v].kind == INTERIOR for v in e.vertices)
        start = 1 if graph.vertices[e.vertices[0]].kind == INTERIOR else 0
        idx[start:start + inner] = np.arange(counter, counter + inner)
        counter += inner
        if start:
            idx[0] = vertex_index[e.vertices[0]]
        if graph.vertices[e.vertices[1]].kind == INTERIOR:
            idx[-1] = vertex_index[e.vertices[1]]
        nodes[k], index[k] = hs, idx
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for k in sorted(graph.edges):
        e = graph.edges[k]
        hs, idx = nodes[k], index[k]
        dx = hs[1] - hs[0]
        A, B = tables[k].AB_at(hs)
        A = np.maximum(A, 0.0)
        for i in range(1, len(hs) - 1):
            diff = 0.5 * A[i] / dx ** 2
            adv = B[i] / (2.0 * dx)
            put(idx[i], idx[i - 1], diff - adv)
            put(idx[i], idx[i], -2.0 * diff)
            put(idx[i], idx[i + 1], diff + adv)
        for end, i, inward in (("lo", 0, 1), ("hi", len(hs) - 1, -1)):
            vertex = graph.vertices[e.vertices[0 if end == "lo" else 1]]
            if vertex.kind == INTERIOR:
                continue
            j1, j2 = i + inward, i + 2 * inward
            if vertex.kind == INFINITY:
                # reflecting end: ghost node mirrors the inward neighbour
                put(idx[i], idx[j1], A[i] / dx ** 2)
                put(idx[i], idx[i], -A[i] / dx ** 2)
                continue
            # degenerate end: one-sided difference towards the interior
            diff = 0.5 * A[i] / dx ** 2
            put(idx[i], idx[i], diff)
            put(idx[i], idx[j1], -2.0 * diff)
            put(idx[i], idx[j2], diff)
            adv = B[i] / dx * inward
            put(idx[i], idx[j1], adv)
            put(idx[i], idx[i], -adv)
    for v in graph.interior_vertices:
        row = vertex_index[v.id]
        p = weights[v.id].p
        for e in graph.incident_edges(v.id):
            hs, idx = nodes[e.id], index[e.id]
            dx = hs[1] - hs[0]
            first, second = (idx[1], idx[2]) if idx[0] == row else (idx[-2], idx[-3])
            scale = p[e.id] / (2.0 * dx)
            put(row, row, -3.0 * scale)
            put(row, first, 4.0 * scale)
            put(row, second, -1.0 * scale)
    generator = sparse.csr_matrix((vals, (rows, cols)), shape=(counter, counter))
    return PDEGrid(nodes, index, vertex_index, counter, generator)


GraphFunction = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class PDESolution:
    grid: PDEGrid
    values: np.ndarray
    T: float

    def edge_values(self, k: int) -> np.ndarray:
        return self.values[self.grid.index[k]]

    def value_at(self, point: GraphPoint) -> float:
        hs = self.grid.nodes[point.k]
        return float(np.interp(point.h, hs, self.edge_values(point.k)))

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.DataFrame({"edge": k, "h": self.grid.nodes[k], "f": self.edge_values(k)})
            for k in sorted(self.grid.nodes)
        ]
        return pd.concat(frames, ignore_index=True)


def _condition_estimate(matrix: sparse.spmatrix, lu=None) -> float:
    norm = onenormest(matrix)
    if lu is None:
        return math.inf
    n = matrix.shape[0]
    inverse = LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="T"), dtype=float)
    return float(norm * onenormest(inverse))


def _initial_vector(grid: PDEGrid, graph: ReebGraph, f0: GraphFunction) -> np.ndarray:
    u = np.empty(grid.size)
    vertex_values: dict[int, list[float]] = {}
    for k, hs in grid.nodes.items():
        values = np.asarray(f0(k, hs), dtype=float) * np.ones_like(hs)
        idx = grid.index[k]
        u[idx] = values
        for end, pos in ((0, 0), (1, -1)):
            vid = graph.edges[k].vertices[end]
            if vid in grid.vertex_index:
                vertex_values.setdefault(vid, []).append(float(values[pos]))
    for vid, values in vertex_values.items():
        if max(values) - min(values) > 1e-8 * max(1.0, max(abs(x) for x in values)):
            raise GraphProcessError(f"f0: discontinuous at vertex {vid}, edge limits {values}")
        u[grid.vertex_index[vid]] = values[0]
    return u


def _factorize(matrix: sparse.csc_matrix):
    try:
        return splu(matrix)
    except RuntimeError as e:
        raise PDESolverError(f"factorization failed ({e}); one-norm {onenormest(matrix):.3e}") from e


def solve_backward_pde(
    f0: GraphFunction,
    T: float,
    graph: ReebGraph,
    tables: Mapping[int, EdgeCoefficientTable],
    weights: Mapping[int, GluingWeights],
    spec: PDEGridSpec | None = None,
) -> PDESolution:
    """u(T) for u_t = L u, u(0) = f0, so that u(T, x) = E_x f0(h_T).

    Crank-Nicolson in time after ``rannacher_steps`` implicit Euler half steps;
    vertex rows are algebraic and enforced at the new time level.
    """
    spec = spec or PDEGridSpec()
    grid = build_pde_grid(graph, tables, weights, spec)
    u = _initial_vector(grid, graph, f0)
    n_steps = max(1, math.ceil(T / spec.dt - 1e-9))
    dt = T / n_steps
    mass = np.ones(grid.size)
    mass[grid.constraint_rows] = 0.0
    M = sparse.diags(mass)
    L = grid.generator

    def system(theta: float, step: float):
        lhs = (M - theta * step * L).tocsc()
        rhs = M + (1.0 - theta) * step * L
        # constraint rows: L_v u = 0 at the new level only
        lhs = lhs.tolil()
        rhs = rhs.tolil()
        for r in grid.constraint_rows:
            lhs[r, :] = L[r, :]
            rhs[r, :] = 0.0
        return lhs.tocsc(), rhs.tocsr()

    def advance(u, lhs, rhs, lu, steps):
        for _ in range(steps):
            u = lu.solve(rhs @ u)
            if not np.all(np.isfinite(u)):
                raise PDESolverError(f"non-finite solution; condition estimate {_condition_estimate(lhs, lu):.3e}")
        return u

    smoothing = min(spec.rannacher_steps, n_steps)
    if smoothing:
        lhs, rhs = system(1.0, dt / 2)
        u = advance(u, lhs, rhs, _factorize(lhs), 2 * smoothing)
    if n_steps > smoothing:
        lhs, rhs = system(0.5, dt)
        u = advance(u, lhs, rhs, _factorize(lhs), n_steps - smoothing)
    logger.debug("Backward PDE: %d unknowns, %d steps to T=%g", grid.size, n_steps, T)
    return PDESolution(grid, u, T)


# --- test functions and expectations ---------------------------------------------

def constant_function(c: float) -> GraphFunction:
    return lambda k, h: np.full(np.shape(h), float(c))


def height_function() -> GraphFunction:
    return lambda k, h: np.asarray(h, dtype=float)


def bump_function(edge: int, centre: float, width: float) -> GraphFunction:
    """C-infinity bump exp(1 - 1/(1 - r^2)) on one edge, zero elsewhere."""

    def f(k, h):
        h = np.asarray(h, dtype=float)
        if k != edge:
            return np.zeros(h.shape)
        r2 = ((h - centre) / width) ** 2
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(r2 < 1.0, np.exp(1.0 - 1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)

    return f


def graph_function(spec: Mapping) -> GraphFunction:
    kind = str(spec.get("kind", "")).lower()
    if kind == "constant":
        return constant_function(float(spec.get("value", 1.0)))
    if kind == "height":
        return height_function()
    if kind == "bump":
        return bump_function(int(spec["edge"]), float(spec["centre"]), float(spec["width"]))
    raise GraphProcessError(f"test function: unknown kind {kind!r}")


def evaluate_on_graph(f: GraphFunction, edges: np.ndarray, heights: np.ndarray) -> np.ndarray:
    out = np.empty(heights.shape)
    for k in np.unique(edges):
        m = edges == k
        out[m] = f(int(k), heights[m])
    return out


@dataclass(frozen=True)
class ExpectationResult:
    value: float
    error: float
    method: str

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "method": self.method}


def expectation(
    fs: Sequence[GraphFunction],
    start: GraphPoint,
    T: float,
    config: GraphDiffusionConfig,
    method: str = "mc",
    pde_spec: PDEGridSpec | None = None,
    workers: int | None = None,
) -> list[ExpectationResult]:
    """E f(h_T) from ``start``; the error is one SE (mc) or the coarse/fine gap (pde)."""
    config.graph.validate_point(start)
    if method == "mc":
        result = simulate_graph_diffusion(replace(config, T=T, output_times=(T,)), start, workers)
        edges, heights = result.marginal(T)
        out = []
        for f in fs:
            values = evaluate_on_graph(f, edges, heights)
            out.append(ExpectationResult(float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size)),
                                         "mc"))
        return out
    if method == "pde":
        spec = pde_spec or PDEGridSpec(delta_min=config.delta_min)
        out = []
        for f in fs:
            coarse = solve_backward_pde(f, T, config.graph, config.tables, config.weights, spec)
            fine = solve_backward_pde(f, T, config.graph, config.tables, config.weights, spec.refined())
            value = fine.value_at(start)
            out.append(ExpectationResult(value, abs(value - coarse.value_at(start)), "pde"))
        return out
    raise GraphProcessError(f"method: expected 'mc' or 'pde', got {method!r}")
