"""Fast-slow system on the rescaled time scale, graph projections and stopping-time bookkeeping.

The slow state moves by dX = eps^-1 b(X, xi) dt with xi frozen over each step
(Heun update); the fast state then takes an Euler-Maruyama step. Paths are
processed in fixed blocks, each path drawing from its own counter-based
stream, so results do not depend on how blocks are spread over workers.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .corrector import CellProblemBasis
from .expression import Expression
from .hamiltonian import DEFAULT_H_MAX, HamiltonianModel
from .reeb import GraphPoint, ReebGraph
from .stats import ScalingFit, scaling_fit, wilson_interval
from .streams import PathNoise, initial_uniforms, path_blocks
from .torus import C_FAST_MAX, FastProcess, check_fast_dt, inverse_cdf, step_fast
from .utils import parallel_map

logger = logging.getLogger(__name__)

REFLECTION_WARN_FRACTION = 1e-3
RESOLUTION_FRACTION = 0.1


class SimConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class ExcursionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    eps: float
    T: float
    n_paths: int
    seed: int = 0
    c_fast: float = 0.05
    c_out: float = 0.25
    alpha: float = 0.4
    output_times: tuple[float, ...] = ()
    h_max: float = DEFAULT_H_MAX
    block_size: int = 1024
    chunk: int = 256
    auxiliary: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise SimConfigError(f"eps: must be positive, got {self.eps}")
        if not self.T > 0:
            raise SimConfigError(f"T: must be positive, got {self.T}")
        if self.n_paths < 1:
            raise SimConfigError(f"n_paths: must be at least 1, got {self.n_paths}")
        if not 0.0 < self.alpha < 0.5:
            raise SimConfigError(f"alpha: must lie in (0, 1/2), got {self.alpha}")
        if not 0.0 < self.c_fast <= C_FAST_MAX:
            raise SimConfigError(f"c_fast: must lie in (0, {C_FAST_MAX}], got {self.c_fast}")
        if not self.c_out > 0:
            raise SimConfigError(f"c_out: must be positive, got {self.c_out}")
        if self.block_size < 1 or self.chunk < 1:
            raise SimConfigError("block_size/chunk: must be positive")
        times = tuple(float(t) for t in (self.output_times or (self.T,)))
        bad = [t for t in times if not 0.0 <= t <= self.T]
        if bad:
            raise SimConfigError(f"output_times: {bad} outside [0, T={self.T}]")
        object.__setattr__(self, "output_times", tuple(sorted(set(times))))
        check_fast_dt(self.dt, self.eps)

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / (self.c_fast * self.eps * self.eps) - 1e-9))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def out_every(self) -> int:
        return max(1, int(round(self.c_out * self.eps * self.eps / self.dt)))

    @property
    def band(self) -> float:
        """Width eps^alpha of the layer around the separatrix."""
        return self.eps ** self.alpha

    def output_steps(self) -> np.ndarray:
        return np.rint(np.asarray(self.output_times) / self.dt).astype(np.int64)

    def with_eps(self, eps: float) -> "SimConfig":
        return replace(self, eps=float(eps))


# --- path state --------------------------------------------------------------

class PathBatch:
    """Slow/fast state for a block of paths with their noise streams."""

    def __init__(
        self,
        config: SimConfig,
        model: HamiltonianModel,
        process: FastProcess,
        basis: CellProblemBasis,
        x0,
        path_ids: Sequence[int],
        aux_drift: Callable | None = None,
        integrand: Callable | None = None,
    ):
        self.config = config
        self.model = model
        self.process = process
        self.basis = basis
        self.path_ids = np.asarray(path_ids, dtype=np.int64)
        n = len(self.path_ids)
        x0 = np.asarray(x0, dtype=float)
        x0 = np.broadcast_to(x0, (n, 2)) if x0.ndim == 1 else x0
        self.x1 = x0[:, 0].copy()
        self.x2 = x0[:, 1].copy()
        self.xi = inverse_cdf(process.require_measure(), initial_uniforms(config.seed, self.path_ids))
        self.noise = PathNoise(config.seed, self.path_ids, chunk=config.chunk, with_uniforms=False)
        self.aux_drift = aux_drift
        self.integrand = integrand
        self.integral = np.zeros(n)
        self.reflections = np.zeros(n, dtype=np.int64)
        self.failed_at = np.full(n, -1, dtype=np.int64)
        self.H = np.asarray(model.hamiltonian(self.x1, self.x2), dtype=float)
        self.step_index = 0

    @property
    def size(self) -> int:
        return len(self.path_ids)

    def step(self) -> np.ndarray:
        """Advance every path by dt; returns H at the new slow states."""
        cfg = self.config
        dt = cfg.dt
        scale = dt / cfg.eps
        x1, x2 = self.x1, self.x2
        phi = self.basis.evaluate(self.xi)
        if self.integrand is not None:
            self.integral += self.integrand(x1, x2, phi) * dt
        b1, b2 = self.model.slow_drift(x1, x2, phi)
        c1, c2 = self.model.slow_drift(x1 + scale * b1, x2 + scale * b2, phi)
        n1 = x1 + 0.5 * scale * (b1 + c1)
        n2 = x2 + 0.5 * scale * (b2 + c2)
        normals, _ = self.noise.next()
        with np.errstate(all="ignore"):
            xi = step_fast(
                self.process, self.xi, dt, cfg.eps, normals=normals,
                x=(x1, x2), aux_drift=self.aux_drift,
            )
            H = np.asarray(self.model.hamiltonian(n1, n2), dtype=float)
            above = H > cfg.h_max
            if np.any(above):
                n1, n2, H = self._reflect(n1, n2, H, above)
        ok = np.isfinite(n1) & np.isfinite(n2) & np.isfinite(xi) & np.isfinite(H)
        fresh = ~ok & (self.failed_at < 0)
        if np.any(fresh):
            self.failed_at[fresh] = self.step_index + 1
            logger.warning("Step %d: non-finite state on paths %s", self.step_index + 1,
                           self.path_ids[fresh][:10].tolist())
        frozen = self.failed_at >= 0
        self.x1 = np.where(frozen, self.x1, n1)
        self.x2 = np.where(frozen, self.x2, n2)
        self.xi = np.where(frozen, self.xi, xi)
        self.H = np.where(frozen, self.H, H)
        self.step_index += 1
        return self.H

    def _reflect(self, n1, n2, H, above):
        n1, n2, H = n1.copy(), n2.copy(), H.copy()
        r1, r2, rH, projected = reflect_below_level(
            self.model.hamiltonian, n1[above], n2[above], H[above], self.config.h_max
        )
        n1[above], n2[above], H[above] = r1, r2, rH
        if np.any(projected):
            logger.debug("Step %d: %d reflected paths projected onto H_max", self.step_index + 1,
                         int(np.sum(projected)))
        self.reflections[above] += 1
        return n1, n2, H


def reflect_below_level(hamiltonian, x1, x2, H, h_max: float, newton_steps: int = 20):
    """Mirror points with H > h_max across the level along grad H.

    Points the mirror step leaves outside are pulled onto the level by Newton steps along
    grad H. Returns the new coordinates, their H and the mask of projected points.
    """
    x1 = np.array(x1, dtype=float)
    x2 = np.array(x2, dtype=float)
    H = np.array(H, dtype=float)
    grad = np.asarray(hamiltonian.gradient(x1, x2), dtype=float)
    shift = 2.0 * (H - h_max) / np.maximum(grad[0] ** 2 + grad[1] ** 2, 1e-300)
    x1 -= shift * grad[0]
    x2 -= shift * grad[1]
    H = np.asarray(hamiltonian(x1, x2), dtype=float)
    projected = H > h_max
    target = h_max - 1e-10 * max(1.0, abs(h_max))
    for _ in range(newton_steps):
        outside = H > h_max
        if not np.any(outside):
            break
        g = np.asarray(hamiltonian.gradient(x1[outside], x2[outside]), dtype=float)
        step = (H[outside] - target) / np.maximum(g[0] ** 2 + g[1] ** 2, 1e-300)
        x1[outside] -= step * g[0]
        x2[outside] -= step * g[1]
        H[outside] = hamiltonian(x1[outside], x2[outside])
    return x1, x2, H, projected

    def keep(self, mask: np.ndarray) -> None:
        """Drop the paths where ``mask`` is False."""
        for name in ("path_ids", "x1", "x2", "xi", "integral", "reflections", "failed_at", "H"):
            setattr(self, name, getattr(self, name)[mask])
        self.noise.select(mask)


@dataclass
class PathRecord:
    """Output of a block of paths: slow states at output times and optional dense H."""

    path_ids: np.ndarray
    output_times: np.ndarray
    x1: np.ndarray  # (n_times, n)
    x2: np.ndarray
    reflections: np.ndarray
    failed_at: np.ndarray
    integral: np.ndarray
    dense_times: np.ndarray | None = None
    dense_H: np.ndarray | None = None  # (n_dense, n)


def _make_aux(config: SimConfig, model, process, basis):
    if not config.auxiliary or model.divergence_vanishes:
        return None
    from .corrector import auxiliary_drift

    return auxiliary_drift(model, process, basis)


def integrate_paths(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    x0,
    path_ids: Sequence[int],
    dense: bool = False,
    integrand: Callable | None = None,
) -> PathRecord:
    batch = PathBatch(config, model, process, basis, x0, path_ids, _make_aux(config, model, process, basis),
                      integrand)
    out_steps = config.output_steps()
    n = batch.size
    xs1 = np.empty((len(out_steps), n))
    xs2 = np.empty((len(out_steps), n))
    dense_H = [batch.H.copy()] if dense else None
    dense_t = [0.0] if dense else None
    slot = 0
    while slot < len(out_steps) and out_steps[slot] == 0:
        xs1[slot], xs2[slot] = batch.x1, batch.x2
        slot += 1
    for step in range(1, config.n_steps + 1):
        H = batch.step()
        if dense and step % config.out_every == 0:
            dense_H.append(H.copy())
            dense_t.append(step * config.dt)
        while slot < len(out_steps) and out_steps[slot] == step:
            xs1[slot], xs2[slot] = batch.x1, batch.x2
            slot += 1
    return PathRecord(
        batch.path_ids, np.asarray(config.output_times), xs1, xs2, batch.reflections, batch.failed_at,
        batch.integral,
        np.asarray(dense_t) if dense else None,
        np.stack(dense_H) if dense else None,
    )


def integrate_path(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    x0,
    path_id: int = 0,
    dense: bool = True,
) -> PathRecord:
    """One path of the coupled system; raises on a non-finite state."""
    record = integrate_paths(config, model, process, basis, np.asarray(x0, dtype=float), [path_id], dense=dense)
    if record.failed_at[0] >= 0:
        raise SimulationError(f"path {path_id}: non-finite state at step {int(record.failed_at[0])}")
    return record


# --- stopping times --------------------------------------------------------------

@dataclass(frozen=True)
class ExcursionLog:
    """Alternating separatrix hits sigma_0 <= tau_1 <= sigma_1 <= ... and layer-boundary hits tau_n."""

    sigma: np.ndarray
    tau: np.ndarray
    horizon: float

    def __post_init__(self):
        if not (len(self.tau) <= len(self.sigma) <= len(self.tau) + 1):
            raise ExcursionError(f"excursion log: {len(self.sigma)} sigma vs {len(self.tau)} tau times")
        merged = np.empty(len(self.sigma) + len(self.tau))
        merged[0::2] = self.sigma
        merged[1::2] = self.tau
        if np.any(np.diff(merged) < 0):
            raise ExcursionError("excursion log: stopping times are not alternating")

    @property
    def count(self) -> int:
        return len(self.tau)

    @property
    def rate(self) -> float:
        return self.count / self.horizon


def _crossing_times(values: np.ndarray) -> np.ndarray:
    """Indices i with a sign change (or touch) of ``values`` on [i, i+1]."""
    a, b = values[:-1], values[1:]
    return np.flatnonzero((a * b <= 0.0) & ~((a == 0.0) & (b == 0.0)))


def _interpolate(times: np.ndarray, values: np.ndarray, i: int) -> float:
    f0, f1 = values[i], values[i + 1]
    if f0 == f1:
        return float(times[i])
    return float(times[i] + (times[i + 1] - times[i]) * f0 / (f0 - f1))


def detect_stopping(
    times: np.ndarray,
    H: np.ndarray,
    vertex_value: float,
    alpha: float,
    eps: float,
    check_resolution: bool = True,
) -> ExcursionLog:
    """Separatrix hits (sign change of H - h_O) and layer hits (|H - h_O| = eps^alpha) of one path."""
    times = np.asarray(times, dtype=float)
    d = np.asarray(H, dtype=float) - vertex_value
    band = eps ** alpha
    if check_resolution and len(d) > 1:
        near = (np.abs(d[:-1]) < 2.0 * band) | (np.abs(d[1:]) < 2.0 * band)
        jumps = np.abs(np.diff(d))[near]
        if jumps.size and jumps.max() >= RESOLUTION_FRACTION * band:
            raise ExcursionError(
                f"dense output: |dH| = {jumps.max():.3g} per output step exceeds eps^alpha/10 = "
                f"{RESOLUTION_FRACTION * band:.3g}; reduce c_out"
            )
    layer = np.abs(d) - band
    zero_idx = _crossing_times(d)
    layer_idx = _crossing_times(layer)
    sigma, tau = [], []
    pos, last = 0, -math.inf
    while True:
        j = np.searchsorted(zero_idx, pos)
        if j == len(zero_idx):
            break
        i = int(zero_idx[j])
        s = _interpolate(times, d, i)
        if s < last:
            raise ExcursionError(f"t={s:.6g}: separatrix hit before the previous layer hit at {last:.6g}")
        sigma.append(s)
        k = np.searchsorted(layer_idx, i)
        if k == len(layer_idx):
            break
        i2 = int(layer_idx[k])
        t = _interpolate(times, layer, i2)
        if t < s:
            raise ExcursionError(f"t={t:.6g}: layer hit precedes separatrix hit at {s:.6g} in one output step")
        tau.append(t)
        last = t
        pos = i2 if i2 > i else i2 + 1
    return ExcursionLog(np.asarray(sigma), np.asarray(tau), float(times[-1] - times[0]))


# --- ensembles -------------------------------------------------------------------

@dataclass
class EnsembleResult:
    """Graph points of every path at every output time, plus run bookkeeping."""

    times: np.ndarray
    edges: np.ndarray  # (n_times, n_paths)
    heights: np.ndarray
    path_ids: np.ndarray
    seed: int
    reflections: np.ndarray | None = None
    excursions: list[ExcursionLog] | None = None
    tallies: dict = field(default_factory=dict)
    source: str = "fastslow"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.edges = np.atleast_2d(np.asarray(self.edges, dtype=np.int64))
        self.heights = np.atleast_2d(np.asarray(self.heights, dtype=float))
        expected = (len(self.times), len(self.path_ids))
        if self.edges.shape != expected or self.heights.shape != expected:
            raise SimulationError(
                f"ensemble: edges {self.edges.shape} / heights {self.heights.shape}, expected {expected}"
            )

    @property
    def n_paths(self) -> int:
        return len(self.path_ids)

    def marginal(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise SimulationError(f"marginal: t={t} is not an output time ({self.times.tolist()})")
        return self.edges[i], self.heights[i]

    def to_frame(self) -> pd.DataFrame:
        n_t, n = self.edges.shape
        return pd.DataFrame({
            "path_id": np.tile(self.path_ids, n_t),
            "t": np.repeat(self.times, n),
            "edge": self.edges.reshape(-1),
            "h": self.heights.reshape(-1),
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, seed: int = 0, source: str = "fastslow") -> "EnsembleResult":
        frame = frame.sort_values(["t", "path_id"], kind="stable")
        times = np.unique(frame["t"].to_numpy())
        path_ids = np.unique(frame["path_id"].to_numpy())
        shape = (len(times), len(path_ids))
        return cls(times, frame["edge"].to_numpy().reshape(shape), frame["h"].to_numpy().reshape(shape),
                   path_ids, seed, source=source)

    def summary(self) -> dict:
        per_time = []
        for i, t in enumerate(self.times):
            edges, counts = np.unique(self.edges[i], return_counts=True)
            per_time.append({
                "t": float(t),
                "mean_h": float(np.mean(self.heights[i])),
                "edge_fractions": {str(int(k)): float(c) / self.n_paths for k, c in zip(edges, counts)},
            })
        out = {"source": self.source, "n_paths": self.n_paths, "seed": self.seed, "marginals": per_time}
        if self.reflections is not None:
            out["reflected_fraction"] = float(np.mean(self.reflections > 0))
        if self.excursions is not None:
            counts = np.array([log.count for log in self.excursions])
            out["excursions"] = {"mean": float(counts.mean()), "se": _se(counts)}
        if self.tallies:
            out["tallies"] = self.tallies
        return out


def _se(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(values.size))


def _start_point(graph: ReebGraph, start) -> np.ndarray:
    if isinstance(start, GraphPoint):
        graph.validate_point(start)
        return graph.anchor(start.k, start.h)
    return np.asarray(start, dtype=float)


def _ensemble_block(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    graph: ReebGraph,
    x0: np.ndarray,
    excursion_vertex: float | None,
    path_ids: np.ndarray,
):
    dense = excursion_vertex is not None
    record = integrate_paths(config, model, process, basis, x0, path_ids, dense=dense)
    ok = record.failed_at < 0
    edges = np.zeros(record.x1.shape, dtype=np.int64)
    heights = np.zeros(record.x1.shape)
    for i in range(record.x1.shape[0]):
        e, h = graph.project_many(record.x1[i][ok], record.x2[i][ok])
        edges[i][ok], heights[i][ok] = e, h
    logs = None
    if dense:
        logs = [
            detect_stopping(record.dense_times, record.dense_H[:, j], excursion_vertex, config.alpha, config.eps)
            for j in range(len(path_ids))
        ]
    return record.path_ids, edges, heights, record.reflections, record.failed_at, logs


def ensemble_run(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    graph: ReebGraph,
    start,
    workers: int | None = None,
    excursions: bool = False,
) -> EnsembleResult:
    """N independent paths from ``start`` (a GraphPoint or a plane point), projected at output times."""
    x0 = _start_point(graph, start)
    vertex = None
    if excursions:
        if not graph.interior_vertices:
            raise SimulationError("excursions: graph has no interior vertex")
        vertex = graph.interior_vertices[0].value
    blocks = path_blocks(config.n_paths, config.block_size)
    logger.info("Fast-slow ensemble: eps=%g, %d paths, %d steps of dt=%.3e in %d blocks",
                config.eps, config.n_paths, config.n_steps, config.dt, len(blocks))
    results = parallel_map(
        partial(_ensemble_block, config, model, process, basis, graph, x0, vertex), blocks, workers=workers
    )
    path_ids = np.concatenate([r[0] for r in results])
    failed_at = np.concatenate([r[4] for r in results])
    failed = np.flatnonzero(failed_at >= 0)
    if failed.size:
        detail = ", ".join(f"{int(path_ids[i])}@step{int(failed_at[i])}" for i in failed[:20])
        raise SimulationError(f"{failed.size} of {len(path_ids)} paths failed: {detail}")
    reflections = np.concatenate([r[3] for r in results])
    reflected = float(np.mean(reflections > 0))
    if reflected > REFLECTION_WARN_FRACTION:
        logger.warning("%.3f%% of paths reflected at H_max=%g", 100.0 * reflected, config.h_max)
    logs = [log for r in results for log in r[5]] if excursions else None
    return EnsembleResult(
        np.asarray(config.output_times),
        np.concatenate([r[1] for r in results], axis=1),
        np.concatenate([r[2] for r in results], axis=1),
        path_ids,
        config.seed,
        reflections=reflections,
        excursions=logs,
    )


# --- stopping-time experiments ------------------------------------------------------

def _first_exit_block(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    x0: np.ndarray,
    bounds: tuple[float, float],
    max_steps: int,
    path_ids: np.ndarray,
):
    """First time H leaves (lower, upper) and which side it left by; nan if unresolved."""
    lower, upper = bounds
    batch = PathBatch(config, model, process, basis, x0, path_ids)
    exit_time = np.full(len(path_ids), np.nan)
    hit_upper = np.zeros(len(path_ids), dtype=bool)
    slot = np.arange(len(path_ids))
    prev = batch.H.copy()
    for step in range(1, max_steps + 1):
        if batch.size == 0:
            break
        H = batch.step()
        low_hit = H <= lower
        up_hit = H >= upper
        done = low_hit | up_hit
        if np.any(done):
            level = np.where(up_hit, upper, lower)[done]
            h0, h1 = prev[done], H[done]
            frac = np.where(h1 != h0, (level - h0) / np.where(h1 != h0, h1 - h0, 1.0), 1.0)
            exit_time[slot[done]] = (step - 1 + np.clip(frac, 0.0, 1.0)) * config.dt
            hit_upper[slot[done]] = up_hit[done]
            keep = ~done
            batch.keep(keep)
            slot = slot[keep]
            prev = H[keep].copy()
        else:
            prev = H.copy()
    return exit_time, hit_upper


def _run_exits(config, model, process, basis, x0, bounds, max_steps, workers):
    blocks = path_blocks(config.n_paths, config.block_size)
    results = parallel_map(
        partial(_first_exit_block, config, model, process, basis, x0, bounds, max_steps), blocks, workers=workers
    )
    return np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results])


def _default_t_max(config: SimConfig) -> float:
    return 20.0 * config.band ** 2 * max(1.0, abs(math.log(config.eps)))


def _edge_on_side(graph: ReebGraph, vertex_id: int, side: int, edge: int | None) -> int:
    """An incident edge below (side=-1) or above (side=+1) the vertex."""
    if edge is not None:
        return edge
    for e in sorted(graph.incident_edges(vertex_id), key=lambda e: e.id):
        if graph.sign(e.id, vertex_id) == side:
            return e.id
    raise SimulationError(f"vertex {vertex_id}: no incident edge on side {side:+d}")


@dataclass(frozen=True)
class ExitTally:
    u: float
    hits: int
    n: int
    unresolved: int
    p_hat: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def exit_probability_experiment(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    graph: ReebGraph,
    us: Sequence[float],
    edge: int | None = None,
    t_max: float | None = None,
    confidence: float = 0.95,
    workers: int | None = None,
) -> list[ExitTally]:
    """P(reach |H - h_O| = eps^alpha before the separatrix) from |H - h_O| = u eps^alpha in a well."""
    vertex = graph.interior_vertices[0]
    k = _edge_on_side(graph, vertex.id, -1, edge)
    side = graph.sign(k, vertex.id)
    band = config.band
    target = vertex.value + side * band
    bounds = (min(target, vertex.value), max(target, vertex.value))
    max_steps = math.ceil((t_max or _default_t_max(config)) / config.dt)
    tallies = []
    for u in us:
        if not 0.0 < u < 1.0:
            raise SimConfigError(f"u: start fractions must lie in (0, 1), got {u}")
        x0 = graph.anchor(k, vertex.value + side * u * band)
        times, hit_upper = _run_exits(config, model, process, basis, x0, bounds, max_steps, workers)
        resolved = np.isfinite(times)
        reached_target = hit_upper if side > 0 else ~hit_upper
        hits = int(np.sum(reached_target & resolved))
        n = int(resolved.sum())
        lo, hi = wilson_interval(hits, n, confidence)
        tallies.append(ExitTally(float(u), hits, n, int((~resolved).sum()), hits / n if n else math.nan, lo, hi))
        logger.info("Exit probability u=%.3g eps=%g: %d/%d (unresolved %d)", u, config.eps, hits, n,
                    tallies[-1].unresolved)
    return tallies


@dataclass(frozen=True)
class ExitTimeResult:
    eps: float
    mean: float
    se: float
    n: int
    unresolved: int


@dataclass(frozen=True)
class ScalingStudy:
    points: list
    fit: ScalingFit

    def to_dict(self) -> dict:
        return {"points": [dict(p.__dict__) for p in self.points], "fit": self.fit.to_dict()}


def exit_time_experiment(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    graph: ReebGraph,
    eps_list: Sequence[float],
    start_fraction: float = 0.0,
    edge: int | None = None,
    t_max: float | None = None,
    workers: int | None = None,
) -> ScalingStudy:
    """Mean exit time from {|H - h_O| < eps^alpha} per eps, with a log-log fit.

    Starts on the separatrix, or at h_O + start_fraction * eps^alpha on the
    edge above the vertex when ``start_fraction`` is positive.
    """
    vertex = graph.interior_vertices[0]
    points = []
    for eps in eps_list:
        cfg = config.with_eps(eps)
        band = cfg.band
        if start_fraction > 0.0:
            k = _edge_on_side(graph, vertex.id, 1, edge)
            x0 = graph.anchor(k, vertex.value + start_fraction * band)
        else:
            x0 = _separatrix_point(graph, vertex.id)
        bounds = (vertex.value - band, vertex.value + band)
        max_steps = math.ceil((t_max or _default_t_max(cfg)) / cfg.dt)
        times, _ = _run_exits(cfg, model, process, basis, x0, bounds, max_steps, workers)
        resolved = times[np.isfinite(times)]
        points.append(ExitTimeResult(float(eps), float(np.mean(resolved)), _se(resolved), resolved.size,
                                     int(times.size - resolved.size)))
        logger.info("Exit time eps=%g: mean %.4g (SE %.2g, unresolved %d)", eps, points[-1].mean,
                    points[-1].se, points[-1].unresolved)
    fit = scaling_fit([p.eps for p in points], [p.mean for p in points], [p.se for p in points],
                      seed=config.seed)
    return ScalingStudy(points, fit)


def _separatrix_point(graph: ReebGraph, vertex_id: int) -> np.ndarray:
    centre = np.asarray(graph.vertices[vertex_id].location, dtype=float)
    for lobe in graph.lobes:
        if np.hypot(*(lobe.points[0] - centre)) <= 1e-9:
            return lobe.points[len(lobe.points) // 2].copy()
    raise SimulationError(f"vertex {vertex_id}: no separatrix lobe recorded on the graph")


@dataclass(frozen=True)
class CountResult:
    eps: float
    mean: float
    se: float
    n: int


def excursion_count_experiment(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    graph: ReebGraph,
    eps_list: Sequence[float],
    start: GraphPoint,
    workers: int | None = None,
) -> ScalingStudy:
    """Mean number of completed excursions by time T per eps, with a log-log fit."""
    points = []
    for eps in eps_list:
        result = ensemble_run(config.with_eps(eps), model, process, basis, graph, start, workers, excursions=True)
        counts = np.array([log.count for log in result.excursions], dtype=float)
        points.append(CountResult(float(eps), float(counts.mean()), _se(counts), counts.size))
        logger.info("Excursions eps=%g: mean count %.3f (SE %.2g)", eps, points[-1].mean, points[-1].se)
    fit = scaling_fit([p.eps for p in points], [p.mean for p in points], [p.se for p in points],
                      seed=config.seed)
    return ScalingStudy(points, fit)


def _functional_block(config, model, process, basis, x0, weight: Expression, path_ids):
    def integrand(x1, x2, phi):
        return np.asarray(weight(x1, x2), dtype=float) * phi[0]

    record = integrate_paths(config, model, process, basis, x0, path_ids, integrand=integrand)
    return record.integral


def mean_zero_functional_experiment(
    config: SimConfig,
    model: HamiltonianModel,
    process: FastProcess,
    basis: CellProblemBasis,
    graph: ReebGraph,
    eps_list: Sequence[float],
    start: GraphPoint,
    weight: str = "x1",
    workers: int | None = None,
) -> ScalingStudy:
    """|E int_0^T w(X_s) phi_1(xi_s) ds| per eps; phi_1 has mean zero under the invariant measure."""
    w = Expression.parse(weight)
    x0 = _start_point(graph, start)
    points = []
    for eps in eps_list:
        cfg = config.with_eps(eps)
        blocks = path_blocks(cfg.n_paths, cfg.block_size)
        values = np.concatenate(parallel_map(
            partial(_functional_block, cfg, model, process, basis, x0, w), blocks, workers=workers
        ))
        points.append(CountResult(float(eps), float(abs(values.mean())), _se(values), values.size))
        logger.info("Mean-zero functional eps=%g: |E| = %.3g (SE %.2g)", eps, points[-1].mean, points[-1].se)
    fit = scaling_fit([p.eps for p in points], [max(p.mean, 1e-300) for p in points], [p.se for p in points],
                      seed=config.seed)
    return ScalingStudy(points, fit)
