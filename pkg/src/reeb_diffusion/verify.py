"""Acceptance checks run by the verification stage.

Each check takes the pipeline (for the model, graph, tables and ensembles it
has already built), the merged tolerances and its own settings block from
``verify.<name>``, and returns a CheckResult.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from .coefficients import autocorrelation_A
from .corrector import CellProblemBasis, auxiliary_drift, effective_matrices, green_kubo_matrix, solve_correctors
from .fastslow import (
    EnsembleResult,
    ensemble_run,
    excursion_count_experiment,
    exit_probability_experiment,
    exit_time_experiment,
    mean_zero_functional_experiment,
)
from .graph_process import expectation, graph_function, simulate_graph_diffusion, vertex_entry_tally
from .hamiltonian import HamiltonianModel, PerturbationBasis, ScalarField, anchor_on_ray, line_integral, trace_level
from .reeb import EXTERIOR, INFINITY, ReebGraph
from .stats import ks_bootstrap_ci, ks_two_sample
from .torus import FastProcess, FastProcessSpec

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCES: Dict[str, float] = {
    "corrector_residual": 1e-8,
    "analytic_corrector": 1e-10,
    "corrector_seconds": 1.0,
    "matrix_identity": 1e-10,
    "analytic_matrix": 1e-8,
    "green_kubo_se": 3.0,
    "harmonic_q": 1e-6,
    "area_derivative": 0.01,
    "coefficient_identity": 0.02,
    "gluing_routes": 0.01,
    "flux_balance": 0.01,
    "symmetry": 0.005,
    "drift_sign": 1e-8,
    "mc_pde_se": 3.0,
    "mc_pde_abs": 0.005,
    "entry_confidence": 0.99,
    "ks_final": 0.05,
    "ks_slack": 0.0,
    "reflection_fraction": 1e-3,
    "exit_band": 0.05,
    "slope_band": 0.15,
    "mean_zero_band": 0.5,
    "auxiliary_residual": 1e-8,
}

ANALYTIC_SIGMA = math.sqrt(2.0)
AUXILIARY_VARIANTS = (
    [["1 + 0.3*sin(x2)", "0"], ["0", "1"]],
    [["1 + 0.3*sin(x1)", "0"], ["0", "1 + 0.2*cos(x2)"]],
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: Dict[str, Any] = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "metrics": self.metrics, "message": self.message}

    @classmethod
    def from_dict(cls, payload: dict) -> "CheckResult":
        return cls(payload["name"], bool(payload["passed"]), dict(payload.get("metrics", {})),
                   payload.get("message", ""))


CheckFn = Callable[[Any, Mapping[str, float], Mapping[str, Any]], CheckResult]
CHECKS: Dict[str, CheckFn] = {}


def check(name: str):
    def register(fn: CheckFn) -> CheckFn:
        CHECKS[name] = fn
        return fn

    return register


def merged_tolerances(overrides: Mapping[str, float] | None) -> Dict[str, float]:
    return {**DEFAULT_TOLERANCES, **(overrides or {})}


def _analytic_process(grid_n: int) -> tuple[FastProcess, CellProblemBasis]:
    process = FastProcess.from_spec(FastProcessSpec("brownian", {"sigma": ANALYTIC_SIGMA}, grid_n=grid_n))
    return process, CellProblemBasis.from_shapes(["cos", "sin"], process.require_measure())


def _interior_heights(graph: ReebGraph, edge_id: int, count: int, margin: float = 0.2) -> np.ndarray:
    e = graph.edges[edge_id]
    hi = e.h_hi
    if graph.vertices[e.vertices[1]].kind == INFINITY:
        hi = min(hi, e.h_lo + 2.0)
    width = hi - e.h_lo
    return np.linspace(e.h_lo + margin * width, hi - margin * width, count)


# --- cell problem and effective matrices -----------------------------------------

@check("corrector")
def check_corrector(ctx, tol, settings) -> CheckResult:
    residual = float(np.max(ctx.correctors.residuals))
    started = time.perf_counter()
    process, basis = _analytic_process(ctx.process.spec.grid_n)
    analytic = solve_correctors(process, basis)
    seconds = time.perf_counter() - started
    error = float(np.max(np.abs(analytic.u - basis.values)))
    metrics = {"max_residual": residual, "analytic_error": error, "analytic_seconds": seconds}
    passed = (residual < tol["corrector_residual"] and error < tol["analytic_corrector"]
              and seconds < tol["corrector_seconds"])
    return CheckResult("corrector", passed, metrics)


@check("matrices")
def check_matrices(ctx, tol, settings) -> CheckResult:
    m = ctx.matrices
    symmetric = float(np.max(np.abs(m.A_mat - (m.C_mat + m.C_mat.T))))
    process, basis = _analytic_process(ctx.process.spec.grid_n)
    analytic = effective_matrices(solve_correctors(process, basis), basis, process)
    identity = float(np.max(np.abs(analytic.A_mat - np.eye(basis.size))))
    metrics = {"A_minus_C_sym": symmetric, "analytic_identity_error": identity, "A": m.A_mat.tolist()}
    return CheckResult("matrices", symmetric < tol["matrix_identity"] and identity < tol["analytic_matrix"], metrics)


@check("green_kubo")
def check_green_kubo(ctx, tol, settings) -> CheckResult:
    n_paths = int(settings.get("n_paths", 20000))
    per_edge = int(settings.get("points_per_edge", 5))
    seed = ctx.config["run"]["seed"]
    rows = []
    for k in sorted(ctx.graph.edges):
        for h in _interior_heights(ctx.graph, k, per_edge):
            x = ctx.graph.anchor(k, float(h))
            est = autocorrelation_A(x, ctx.pointwise, ctx.process, ctx.basis, n_paths=n_paths, seed=seed)
            exact = float(ctx.pointwise.A(x[0], x[1]))
            rows.append({"edge": k, "h": float(h), "A": exact, "green_kubo": 2.0 * est.value, "se": 2.0 * est.se})
    process, basis = _analytic_process(ctx.process.spec.grid_n)
    est = green_kubo_matrix(process, basis, n_paths=n_paths, seed=seed, weights=np.diag([1.0, 0.0]))
    within = [abs(r["green_kubo"] - r["A"]) <= tol["green_kubo_se"] * r["se"] for r in rows]
    analytic_ok = abs(2.0 * est.value - 1.0) <= tol["green_kubo_se"] * 2.0 * est.se
    metrics = {"points": rows, "analytic": {"value": 2.0 * est.value, "se": 2.0 * est.se}}
    return CheckResult("green_kubo", all(within) and analytic_ok, metrics,
                       f"{sum(within)}/{len(within)} points within {tol['green_kubo_se']:g} SE")


# --- geometry and averaged coefficients ----------------------------------------

def _area_derivative(graph: ReebGraph, k: int, h: float, step: float = 1e-3) -> float:
    upper = graph.level_curve(k, h + step).area()
    lower = graph.level_curve(k, h - step).area()
    return (upper - lower) / (2.0 * step)


@check("geometry")
def check_geometry(ctx, tol, settings) -> CheckResult:
    harmonic = ScalarField.builtin("harmonic")
    q_errors = {}
    for h in (0.5, 1.0, 2.0):
        curve = trace_level(harmonic, anchor_on_ray(harmonic, (0.0, 0.0), (1.0, 0.0), h), h)
        q_errors[str(h)] = abs(line_integral(curve) - 2.0 * math.pi)
    rows = []
    for k in sorted(ctx.graph.edges):
        for h in _interior_heights(ctx.graph, k, 3):
            q = line_integral(ctx.graph.level_curve(k, float(h)))
            oracle = _area_derivative(ctx.graph, k, float(h))
            rows.append({"edge": k, "h": float(h), "Q": q, "area_derivative": oracle,
                         "relative_error": abs(q - oracle) / abs(oracle)})
    passed = (max(q_errors.values()) < tol["harmonic_q"]
              and all(r["relative_error"] < tol["area_derivative"] for r in rows))
    return CheckResult("geometry", passed, {"harmonic_q_error": q_errors, "area_oracle": rows})


@check("identity")
def check_identity(ctx, tol, settings) -> CheckResult:
    defects = {str(k): float(t.identity_defect()) for k, t in sorted(ctx.tables.items())}
    return CheckResult("identity", max(defects.values()) < tol["coefficient_identity"], {"defects": defects})


def _mirror_symmetric(model: HamiltonianModel, samples: int = 64, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    x1, x2 = rng.uniform(-2.0, 2.0, size=(2, samples))
    same = np.allclose(model.hamiltonian(x1, x2), model.hamiltonian(-x1, x2), rtol=0.0, atol=1e-12)
    return bool(same and model.perturbation.is_constant)


@check("gluing")
def check_gluing(ctx, tol, settings) -> CheckResult:
    if not ctx.weights:
        return CheckResult("gluing", True, {}, "graph has no interior vertex")
    metrics: Dict[str, Any] = {}
    passed = True
    symmetric = _mirror_symmetric(ctx.model)
    for vertex_id, w in sorted(ctx.weights.items()):
        entry = w.to_dict()
        disc = max(w.discrepancy.values(), default=0.0)
        passed &= disc < tol["gluing_routes"] and w.flux_balance < tol["flux_balance"]
        passed &= w.extrapolated_flux_balance < tol["flux_balance"]
        lower = [w.p[k] for k in sorted(w.p) if w.signs[k] < 0]
        if symmetric and len(lower) == 2:
            asymmetry = abs(lower[0] - lower[1]) / max(lower)
            entry["lower_asymmetry"] = asymmetry
            passed &= asymmetry < tol["symmetry"]
        metrics[str(vertex_id)] = entry
    return CheckResult("gluing", bool(passed), metrics)


@check("drift_sign")
def check_drift_sign(ctx, tol, settings) -> CheckResult:
    rows = []
    for v in sorted(ctx.graph.vertices.values(), key=lambda v: v.id):
        if v.kind != EXTERIOR or v.location is None:
            continue
        x1, x2 = v.location
        hess = np.asarray(ctx.model.hamiltonian.hessian(x1, x2), dtype=float).reshape(2, 2)
        e = np.asarray(ctx.model.perturbation.evaluate(x1, x2), dtype=float).reshape(-1, 2)
        expected = 0.5 * float(np.sum((e @ hess @ e.T) * ctx.matrices.A_mat))
        computed = float(ctx.pointwise.B(x1, x2))
        minimum = np.all(np.linalg.eigvalsh(hess) > 0)
        sign_ok = computed > 0 if minimum else computed < 0
        rows.append({"vertex": v.id, "B": computed, "expected": expected, "minimum": bool(minimum),
                     "ok": bool(abs(computed - expected) < tol["drift_sign"] and sign_ok)})
    return CheckResult("drift_sign", bool(rows) and all(r["ok"] for r in rows), {"extrema": rows})


@check("auxiliary")
def check_auxiliary(ctx, tol, settings) -> CheckResult:
    rng = np.random.default_rng(ctx.config["run"]["seed"])
    points = rng.uniform(-1.5, 1.5, size=(5, 2))
    residual = 0.0
    for pairs in AUXILIARY_VARIANTS:
        variant = HamiltonianModel(ctx.model.hamiltonian, PerturbationBasis(pairs), ctx.model.h_max)
        drift = auxiliary_drift(variant, ctx.process, ctx.basis)
        residual = max([residual] + [drift.residual(x1, x2) for x1, x2 in points])
    default = auxiliary_drift(ctx.model, ctx.process, ctx.basis)
    y = ctx.process.require_measure().y
    default_max = max(float(np.max(np.abs(default(x1, x2, y)))) for x1, x2 in points)
    default_ok = default_max == 0.0 if ctx.model.divergence_vanishes else True
    metrics = {"variant_residual": residual, "default_max_abs": default_max,
               "default_divergence_free": ctx.model.divergence_vanishes}
    return CheckResult("auxiliary", residual < tol["auxiliary_residual"] and default_ok, metrics)


# --- graph process --------------------------------------------------------------

def default_functions(graph: ReebGraph) -> List[dict]:
    specs: List[dict] = [{"kind": "height"}]
    ids = sorted(graph.edges)
    for k in sorted({ids[0], ids[-1]}):
        e = graph.edges[k]
        hi = min(e.h_hi, e.h_lo + 2.0)
        specs.append({"kind": "bump", "edge": k, "centre": 0.5 * (e.h_lo + hi), "width": 0.45 * (hi - e.h_lo)})
    return specs


@check("graph_mc_pde")
def check_graph_mc_pde(ctx, tol, settings) -> CheckResult:
    specs = ctx.config["verify"]["functions"] or default_functions(ctx.graph)
    fs = [graph_function(s) for s in specs]
    T = float(settings.get("T", 1.0))
    config = ctx.graph_config(n_paths=int(settings.get("n_paths", ctx.config["graph"]["n_paths"])))
    mc = expectation(fs, ctx.start, T, config, "mc", workers=ctx.workers)
    pde = expectation(fs, ctx.start, T, config, "pde", pde_spec=ctx.pde_spec)
    rows = []
    for spec, a, b in zip(specs, mc, pde):
        gap = abs(a.value - b.value)
        rows.append({"function": spec, "mc": a.to_dict(), "pde": b.to_dict(), "gap": gap,
                     "ok": gap < tol["mc_pde_se"] * a.error + tol["mc_pde_abs"] + b.error})
    return CheckResult("graph_mc_pde", all(r["ok"] for r in rows), {"functions": rows})


@check("vertex_entry")
def check_vertex_entry(ctx, tol, settings) -> CheckResult:
    if not ctx.graph.interior_vertices:
        return CheckResult("vertex_entry", True, {}, "graph has no interior vertex")
    config = ctx.graph_config(n_paths=int(settings.get("n_paths", 100_000)))
    tally = vertex_entry_tally(config, confidence=tol["entry_confidence"], workers=ctx.workers)
    return CheckResult("vertex_entry", tally.consistent and tally.unresolved == 0, tally.to_dict())


# --- convergence of marginals ----------------------------------------------------

@dataclass
class ComparisonReport:
    """KS statistics of fast-slow against graph-diffusion marginals per (eps, t)."""

    rows: List[dict]
    final_tolerance: float
    slack: float = 0.0

    def by_time(self) -> Dict[float, List[tuple[float, float]]]:
        out: Dict[float, List[tuple[float, float]]] = {}
        for r in self.rows:
            out.setdefault(r["t"], []).append((r["eps"], r["statistic"]))
        return {t: sorted(v, reverse=True) for t, v in out.items()}

    @property
    def monotone(self) -> bool:
        for series in self.by_time().values():
            stats_ = [s for _, s in series]
            if any(b > a + self.slack for a, b in zip(stats_, stats_[1:])):
                return False
        return True

    @property
    def final_ok(self) -> bool:
        return all(series[-1][1] < self.final_tolerance for series in self.by_time().values())

    @property
    def passed(self) -> bool:
        return self.monotone and self.final_ok

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "final_tolerance": self.final_tolerance,
            "slack": self.slack,
            "monotone": self.monotone,
            "final_ok": self.final_ok,
            "passed": self.passed,
        }

    @classmethod
    def compare(
        cls,
        graph: ReebGraph,
        fastslow: Mapping[float, EnsembleResult],
        reference: EnsembleResult,
        final_tolerance: float = 0.05,
        slack: float = 0.0,
        seed: int = 0,
    ) -> "ComparisonReport":
        rows = []
        for eps in sorted(fastslow, reverse=True):
            result = fastslow[eps]
            for t in result.times:
                a = graph.signed_height_encoding(*result.marginal(float(t)))
                b = graph.signed_height_encoding(*reference.marginal(float(t)))
                ks = ks_two_sample(a, b)
                lo, hi = ks_bootstrap_ci(a, b, seed=seed)
                rows.append({"eps": float(eps), "t": float(t), **ks.to_dict(), "ci_low": lo, "ci_high": hi})
                logger.info("KS eps=%g t=%g: %.4f (p=%.3g)", eps, t, ks.statistic, ks.p_value)
        return cls(rows, final_tolerance, slack)


@check("convergence")
def check_convergence(ctx, tol, settings) -> CheckResult:
    fastslow = ctx.fastslow_results
    report = ComparisonReport.compare(ctx.graph, fastslow, ctx.graph_result, tol["ks_final"], tol["ks_slack"],
                                      ctx.config["run"]["seed"])
    reflected = {str(eps): float(np.mean(r.reflections > 0)) for eps, r in fastslow.items()
                 if r.reflections is not None}
    reflections_ok = all(f <= tol["reflection_fraction"] for f in reflected.values())
    metrics = {**report.to_dict(), "reflected_fraction": reflected}
    return CheckResult("convergence", report.passed and reflections_ok, metrics)


# --- stopping times and scaling laws ----------------------------------------------

def _require_vertex(ctx, name: str) -> CheckResult | None:
    if ctx.graph.interior_vertices:
        return None
    return CheckResult(name, False, {}, "graph has no interior vertex")


@check("exit_probability")
def check_exit_probability(ctx, tol, settings) -> CheckResult:
    missing = _require_vertex(ctx, "exit_probability")
    if missing:
        return missing
    config = ctx.sim_config(float(settings.get("eps", 0.01)), n_paths=int(settings.get("n_paths", 2000)))
    us = [float(u) for u in settings.get("us", (0.25, 0.5, 0.75))]
    tallies = exit_probability_experiment(config, ctx.model, ctx.process, ctx.basis, ctx.graph, us,
                                          t_max=settings.get("t_max"), workers=ctx.workers)
    rows = []
    for t in tallies:
        half = 0.5 * (t.ci_high - t.ci_low)
        rows.append({**t.to_dict(), "ok": abs(t.p_hat - t.u) < half + tol["exit_band"]})
    return CheckResult("exit_probability", all(r["ok"] for r in rows), {"eps": config.eps, "tallies": rows})


@check("exit_time")
def check_exit_time(ctx, tol, settings) -> CheckResult:
    missing = _require_vertex(ctx, "exit_time")
    if missing:
        return missing
    eps_list = [float(e) for e in settings.get("eps", (0.04, 0.02, 0.01, 0.005))]
    config = ctx.sim_config(eps_list[0], n_paths=int(settings.get("n_paths", 1000)))
    study = exit_time_experiment(config, ctx.model, ctx.process, ctx.basis, ctx.graph, eps_list,
                                 start_fraction=float(settings.get("start_fraction", 0.0)),
                                 t_max=settings.get("t_max"), workers=ctx.workers)
    target = 2.0 * config.alpha
    passed = abs(study.fit.slope - target) <= tol["slope_band"]
    return CheckResult("exit_time", passed, {**study.to_dict(), "target_slope": target})


@check("excursions")
def check_excursions(ctx, tol, settings) -> CheckResult:
    missing = _require_vertex(ctx, "excursions")
    if missing:
        return missing
    eps_list = [float(e) for e in settings.get("eps", (0.1, 0.05, 0.025))]
    config = ctx.sim_config(eps_list[0], n_paths=int(settings.get("n_paths", 500)),
                            T=float(settings.get("T", ctx.config["run"]["T"])), output_times=())
    study = excursion_count_experiment(config, ctx.model, ctx.process, ctx.basis, ctx.graph, eps_list, ctx.start,
                                       workers=ctx.workers)
    target = -config.alpha
    passed = abs(study.fit.slope - target) <= tol["slope_band"]
    return CheckResult("excursions", passed, {**study.to_dict(), "target_slope": target})


@check("mean_zero")
def check_mean_zero(ctx, tol, settings) -> CheckResult:
    eps_list = [float(e) for e in settings.get("eps", (0.1, 0.05, 0.025))]
    config = ctx.sim_config(eps_list[0], n_paths=int(settings.get("n_paths", 2000)),
                            T=float(settings.get("T", ctx.config["run"]["T"])), output_times=())
    study = mean_zero_functional_experiment(config, ctx.model, ctx.process, ctx.basis, ctx.graph, eps_list,
                                            ctx.start, weight=str(settings.get("weight", "x1")),
                                            workers=ctx.workers)
    passed = abs(study.fit.slope - 1.0) <= tol["mean_zero_band"]
    return CheckResult("mean_zero", passed, {**study.to_dict(), "target_slope": 1.0})


@check("determinism")
def check_determinism(ctx, tol, settings) -> CheckResult:
    workers = max(2, int(settings.get("workers", 4)))
    config = ctx.sim_config(float(settings.get("eps", 0.2)), n_paths=int(settings.get("n_paths", 64)),
                            T=float(settings.get("T", 0.05)), output_times=(), block_size=16)
    frames = [
        _csv_text(ensemble_run(config, ctx.model, ctx.process, ctx.basis, ctx.graph, ctx.start, workers=w))
        for w in (1, workers)
    ]
    metrics = {"fastslow_identical": frames[0] == frames[1]}
    gconfig = ctx.graph_config(n_paths=64, T=0.05, block_size=16, output_times=())
    graph_frames = [_csv_text(simulate_graph_diffusion(gconfig, ctx.start, workers=w)) for w in (1, workers)]
    metrics["graph_identical"] = graph_frames[0] == graph_frames[1]
    return CheckResult("determinism", all(metrics.values()), metrics)


def _csv_text(result: EnsembleResult) -> str:
    return result.to_frame().to_csv(index=False, float_format="%.17g")


def run_checks(ctx, names: Sequence[str], tolerances: Mapping[str, float] | None = None) -> List[CheckResult]:
    tol = merged_tolerances(tolerances)
    results = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"experiment: unknown check {name!r}; known {sorted(CHECKS)}")
        settings = ctx.config["verify"].get(name) or {}
        started = time.perf_counter()
        result = CHECKS[name](ctx, tol, settings)
        result.metrics["elapsed_seconds"] = round(time.perf_counter() - started, 3)
        logger.info("Check %s: %s", name, "PASS" if result.passed else "FAIL")
        results.append(result)
    return results
