"""Staged experiment runner: graph -> correctors -> coefficients -> simulations -> verification.

Every stage writes its artifacts under ``<output>/<stage>/<key>`` and records
them in the cache ledger; a stage whose key and artifacts are already on disk
is reloaded instead of recomputed.
"""
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import pandas as pd
import yaml

from .cache import load_ledger, lookup, record_stage, save_ledger, stage_dir, stage_key
from .coefficients import (
    GluingWeights,
    TableGridSpec,
    edge_tables,
    gluing_weights,
    pointwise_AB,
    stationary_weights,
    tables_from_frame,
    tables_to_frame,
)
from .corrector import CellProblemBasis, EffectiveMatrices, effective_matrices, solve_correctors
from .fastslow import EnsembleResult, SimConfig, ensemble_run
from .graph_process import GraphDiffusionConfig, PDEGridSpec, simulate_graph_diffusion
from .hamiltonian import HamiltonianModel
from .normalization import normalize_experiment_config
from .reeb import GraphPoint, ReebGraph, build_from_model
from .schema import KNOWN_EXPERIMENTS, SchemaValidationError, validate_experiment_config
from .torus import build_fast_process
from .utils import (
    config_hash,
    get_output_dir,
    get_worker_count,
    load_json_artifact,
    save_csv_artifact,
    save_json_artifact,
)
from .verify import CheckResult, run_checks

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

STAGES = ("graph", "correctors", "coefficients", "fastslow", "graph_diffusion", "verification")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")


def load_config(path: str | Path) -> Dict[str, Any]:
    """Parse a YAML or TOML experiment config, then normalize and validate it."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                payload = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                payload = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError, tomllib.TOMLDecodeError) as e:
        raise SchemaValidationError(f"config: cannot read {path}: {e}") from e
    payload = normalize_experiment_config(payload)
    validate_experiment_config(payload)
    return payload


def eps_label(eps: float) -> str:
    return f"{eps:g}".replace(".", "p")


@dataclass
class PipelineResult:
    config_hash: str
    output_dir: Path
    stages: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "output_dir": str(self.output_dir),
            "stages": self.stages,
            "checks": [c.to_dict() for c in self.checks],
            "passed": self.passed,
        }


class ReebPipeline:
    """Builds model objects lazily and runs the cached stages on demand."""

    def __init__(
        self,
        config: Dict[str, Any],
        output_dir: str | Path | None = None,
        workers: int | None = None,
        use_cache: bool = True,
    ):
        self.config = config
        self.output_dir = Path(output_dir) if output_dir else get_output_dir(config["output"]["dir"])
        self.workers = workers or get_worker_count()
        self.use_cache = use_cache
        self.ledger = load_ledger(self.output_dir)
        self.result = PipelineResult(config_hash(config), self.output_dir)
        self._state: Dict[str, Any] = {}

    # --- model objects ---------------------------------------------------------

    @cached_property
    def model(self) -> HamiltonianModel:
        return HamiltonianModel.from_config(self.config["model"])

    @cached_property
    def process(self):
        return build_fast_process(self.config["model"]["fast"])

    @cached_property
    def basis(self) -> CellProblemBasis:
        return CellProblemBasis.from_shapes(self.config["model"]["shapes"], self.process.require_measure())

    @cached_property
    def correctors(self):
        return solve_correctors(self.process, self.basis, workers=self.workers)

    @cached_property
    def pointwise(self):
        return pointwise_AB(self.model, self.matrices)

    @property
    def start(self) -> GraphPoint:
        start = self.config["run"]["start"]
        return GraphPoint(int(start["edge"]), float(start["h"]))

    @property
    def table_spec(self) -> TableGridSpec:
        c = self.config["coefficients"]
        return TableGridSpec(c["graded_base"], c["graded_levels"], c["graded_refine"], c["n_uniform"],
                             c["delta_min"], c["extrapolation_points"])

    @property
    def pde_spec(self) -> PDEGridSpec:
        p = self.config["pde"]
        return PDEGridSpec(p["n_per_edge"], p["dt"], self.config["graph"]["delta_min"], p["rannacher_steps"])

    def sim_config(self, eps: float, **overrides) -> SimConfig:
        run = self.config["run"]
        config = SimConfig(
            eps=float(eps), T=float(run["T"]), n_paths=int(run["n_paths"]), seed=int(run["seed"]),
            c_fast=float(run["c_fast"]), c_out=float(run["c_out"]), alpha=float(run["alpha"]),
            output_times=tuple(run["output_times"]), h_max=float(self.config["model"]["h_max"]),
            block_size=int(run["block_size"]), auxiliary=bool(run["auxiliary"]),
        )
        return replace(config, **overrides) if overrides else config

    def graph_config(self, **overrides) -> GraphDiffusionConfig:
        g = self.config["graph"]
        run = self.config["run"]
        values = dict(
            graph=self.graph, tables=self.tables, weights=self.weights, dt=float(g["dt"]), T=float(run["T"]),
            n_paths=int(g["n_paths"]), seed=int(run["seed"]), h_star=g["h_star"], delta_min=float(g["delta_min"]),
            output_times=tuple(run["output_times"]), block_size=int(g["block_size"]),
        )
        values.update(overrides)
        return GraphDiffusionConfig(**values)

    # --- stage results ---------------------------------------------------------------

    @property
    def graph(self) -> ReebGraph:
        return self._need("graph")

    @property
    def matrices(self) -> EffectiveMatrices:
        return self._need("correctors")

    @property
    def tables(self):
        return self._need("coefficients")["tables"]

    @property
    def weights(self) -> Dict[int, GluingWeights]:
        return self._need("coefficients")["weights"]

    @property
    def fastslow_results(self) -> Dict[float, EnsembleResult]:
        return self._need("fastslow")

    @property
    def graph_result(self) -> EnsembleResult:
        return self._need("graph_diffusion")

    def _need(self, stage: str):
        if stage not in self._state:
            self.run_stage(stage)
        return self._state[stage]

    # --- stage runner ---------------------------------------------------------------

    def run_stage(self, stage: str, **options) -> Dict[str, Any]:
        compute: Callable[[Path], List[Path]] = getattr(self, f"_compute_{stage}")
        load: Callable[[Path, Dict[str, Any]], None] = getattr(self, f"_load_{stage}")
        key = stage_key(self.config, stage, **options)
        directory = stage_dir(self.output_dir, stage, key)
        started = time.perf_counter()
        try:
            entry = lookup(self.ledger, stage, key, self.output_dir) if self.use_cache else None
            if entry is not None:
                logger.info("Stage %s: cache hit %s", stage, key[:16])
                load(directory, options)
            else:
                logger.info("Stage %s: computing into %s", stage, directory)
                artifacts = compute(directory, options)
                elapsed = time.perf_counter() - started
                entry = record_stage(
                    self.ledger, stage, key,
                    [str(Path(a).relative_to(self.output_dir)) for a in artifacts], elapsed,
                )
                save_ledger(self.ledger, self.output_dir)
                logger.info("Stage %s finished in %.2fs, %d artifacts", stage, elapsed, len(artifacts))
        except StageError:
            raise
        except Exception as e:
            logger.error("Stage %s failed: %s: %s", stage, type(e).__name__, e)
            raise StageError(stage, e) from e
        self.result.stages[stage] = {"key": key, "directory": str(directory), "artifacts": entry["artifacts"]}
        return entry

    # graph

    def _compute_graph(self, directory: Path, options) -> List[Path]:
        graph = self._build_graph()
        self._state["graph"] = graph
        return [save_json_artifact(graph.to_dict(), directory / "graph.json")]

    def _load_graph(self, directory: Path, options) -> None:
        # traced lobes and region signatures are not serialized; rebuild them
        self._state["graph"] = self._build_graph()

    def _build_graph(self) -> ReebGraph:
        m = self.config["model"]
        graph = build_from_model(self.model.hamiltonian, float(m["h_max"]), m["box"], int(m["seeds_per_axis"]))
        finite = [v.value for v in graph.vertices.values() if v.location is not None]
        if finite and max(finite) >= graph.h_max:
            raise SchemaValidationError(
                f"model.h_max: {graph.h_max} is not above the largest critical value {max(finite):.6g}"
            )
        return graph

    # correctors

    def _compute_correctors(self, directory: Path, options) -> List[Path]:
        matrices = effective_matrices(self.correctors, self.basis, self.process)
        self._state["correctors"] = matrices
        mu = self.process.require_measure()
        return [
            save_json_artifact(matrices.to_dict(), directory / "matrices.json"),
            save_csv_artifact(self.correctors.to_frame(mu), directory / "correctors.csv"),
            save_csv_artifact(mu.to_frame(), directory / "density.csv"),
        ]

    def _load_correctors(self, directory: Path, options) -> None:
        self._state["correctors"] = EffectiveMatrices.from_dict(load_json_artifact(directory / "matrices.json"))

    # coefficients

    def _compute_coefficients(self, directory: Path, options) -> List[Path]:
        spec = self.table_spec
        tables = edge_tables(self.graph, self.pointwise, spec, workers=self.workers)
        tolerance = float(self.config["coefficients"]["gluing_tolerance"])
        weights = {
            v.id: gluing_weights(self.graph, v.id, tables, self.pointwise, spec, tolerance)
            for v in self.graph.interior_vertices
        }
        self._state["coefficients"] = {"tables": tables, "weights": weights}
        stationary = {str(k): v for k, v in stationary_weights(tables).items()}
        return [
            save_csv_artifact(tables_to_frame(tables), directory / "tables.csv"),
            save_json_artifact([w.to_dict() for w in weights.values()], directory / "gluing.json"),
            save_json_artifact(stationary, directory / "stationary.json"),
        ]

    def _load_coefficients(self, directory: Path, options) -> None:
        tables = tables_from_frame(pd.read_csv(directory / "tables.csv"), self.graph)
        weights = {}
        for payload in load_json_artifact(directory / "gluing.json"):
            w = GluingWeights.from_dict(payload)
            weights[w.vertex] = w
        self._state["coefficients"] = {"tables": tables, "weights": weights}

    # simulations

    def _compute_fastslow(self, directory: Path, options) -> List[Path]:
        results = {}
        artifacts = []
        for eps in self.config["run"]["eps"]:
            result = ensemble_run(self.sim_config(eps), self.model, self.process, self.basis, self.graph,
                                  self.start, workers=self.workers)
            results[float(eps)] = result
            artifacts.append(save_csv_artifact(result.to_frame(), directory / f"fastslow_eps{eps_label(eps)}.csv"))
            artifacts.append(save_json_artifact(result.summary(), directory / f"fastslow_eps{eps_label(eps)}.json"))
        self._state["fastslow"] = results
        return artifacts

    def _load_fastslow(self, directory: Path, options) -> None:
        seed = int(self.config["run"]["seed"])
        self._state["fastslow"] = {
            float(eps): EnsembleResult.from_frame(pd.read_csv(directory / f"fastslow_eps{eps_label(eps)}.csv"), seed)
            for eps in self.config["run"]["eps"]
        }

    def _compute_graph_diffusion(self, directory: Path, options) -> List[Path]:
        result = simulate_graph_diffusion(self.graph_config(), self.start, workers=self.workers)
        self._state["graph_diffusion"] = result
        return [
            save_csv_artifact(result.to_frame(), directory / "graph.csv"),
            save_json_artifact(result.summary(), directory / "graph.json"),
        ]

    def _load_graph_diffusion(self, directory: Path, options) -> None:
        frame = pd.read_csv(directory / "graph.csv")
        self._state["graph_diffusion"] = EnsembleResult.from_frame(frame, int(self.config["run"]["seed"]), "graph")

    # verification

    def _compute_verification(self, directory: Path, options) -> List[Path]:
        names = options.get("experiments") or []
        checks = run_checks(self, names, self.config["verify"]["tolerances"])
        self._state["verification"] = checks
        return [save_json_artifact([c.to_dict() for c in checks], directory / "report.json")]

    def _load_verification(self, directory: Path, options) -> None:
        self._state["verification"] = [CheckResult.from_dict(p) for p in load_json_artifact(directory / "report.json")]

    # --- entry points ---------------------------------------------------------------

    def verify(self, experiments: Sequence[str] | None = None) -> List[CheckResult]:
        names = list(experiments or self.config["verify"]["experiments"] or KNOWN_EXPERIMENTS)
        self.run_stage("verification", experiments=names)
        self.result.checks = list(self._state.pop("verification"))
        return self.result.checks

    def run(self, stages: Sequence[str] = STAGES, experiments: Sequence[str] | None = None) -> PipelineResult:
        for stage in STAGES:
            if stage not in stages:
                continue
            if stage == "verification":
                self.verify(experiments)
            else:
                self._need(stage)
        self.save_summary()
        return self.result

    def save_summary(self) -> Path:
        """After-run hook: the summary JSON naming every stage artifact and check outcome."""
        path = save_json_artifact(self.result.to_dict(), self.output_dir / "summary.json")
        logger.info("Summary written to %s", path)
        return path
