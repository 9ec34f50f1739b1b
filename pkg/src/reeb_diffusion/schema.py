import math
from numbers import Real
from typing import Any

from .corrector import SHAPE_RE
from .hamiltonian import BUILTIN_FIELDS
from .torus import C_FAST_MAX, FAST_MODELS

KNOWN_EXPERIMENTS = (
    "corrector",
    "matrices",
    "green_kubo",
    "geometry",
    "identity",
    "gluing",
    "drift_sign",
    "graph_mc_pde",
    "vertex_entry",
    "convergence",
    "exit_probability",
    "exit_time",
    "excursions",
    "mean_zero",
    "auxiliary",
    "determinism",
)

SECTION_KEYS = {
    "model": {
        "hamiltonian", "perturbation", "perturbation_params", "h_max", "fast", "shapes", "box", "seeds_per_axis",
    },
    "coefficients": {
        "graded_base", "graded_levels", "graded_refine", "n_uniform", "delta_min", "extrapolation_points",
        "gluing_tolerance",
    },
    "run": {
        "eps", "T", "output_times", "n_paths", "seed", "alpha", "c_fast", "c_out", "block_size", "start",
        "auxiliary",
    },
    "graph": {"dt", "n_paths", "delta_min", "h_star", "block_size"},
    "pde": {"n_per_edge", "dt", "rannacher_steps"},
    "verify": {
        "experiments", "tolerances", "functions", "exit_probability", "exit_time", "excursions", "mean_zero",
        "green_kubo", "graph_mc_pde", "vertex_entry", "determinism",
    },
    "output": {"dir", "gnuplot"},
}

REQUIRED_SECTIONS = ("model", "run")
FUNCTION_KINDS = {"constant": set(), "height": set(), "bump": {"edge", "centre", "width"}}


class SchemaValidationError(ValueError):
    pass


def _is_number(value: Any) -> bool:
    return isinstance(value, Real) and not isinstance(value, bool) and math.isfinite(value)


def _require_positive(section: dict, key: str, label: str, integer: bool = False) -> None:
    value = section.get(key)
    if integer:
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise SchemaValidationError(f"{label}.{key} must be a positive integer")
    elif not _is_number(value) or value <= 0:
        raise SchemaValidationError(f"{label}.{key} must be a positive number")


def _reject_unknown(section: dict, name: str) -> None:
    unknown = sorted(set(section) - SECTION_KEYS[name])
    if unknown:
        raise SchemaValidationError(f"{name}: unknown keys {unknown}")


def _validate_model(model: dict) -> None:
    hamiltonian = model.get("hamiltonian")
    if not isinstance(hamiltonian, dict):
        raise SchemaValidationError("model.hamiltonian must be an object")
    if ("builtin" in hamiltonian) == ("expr" in hamiltonian):
        raise SchemaValidationError("model.hamiltonian needs exactly one of 'builtin' or 'expr'")
    if "builtin" in hamiltonian and hamiltonian["builtin"] not in BUILTIN_FIELDS:
        raise SchemaValidationError(
            f"model.hamiltonian.builtin must be one of {sorted(BUILTIN_FIELDS)}, got {hamiltonian['builtin']!r}"
        )
    if "expr" in hamiltonian and (not isinstance(hamiltonian["expr"], str) or not hamiltonian["expr"]):
        raise SchemaValidationError("model.hamiltonian.expr must be a non-empty string")
    extra = sorted(set(hamiltonian) - {"builtin", "expr", "params"})
    if extra:
        raise SchemaValidationError(f"model.hamiltonian: unknown keys {extra}")
    for key, value in (hamiltonian.get("params") or {}).items():
        if not _is_number(value):
            raise SchemaValidationError(f"model.hamiltonian.params.{key} must be a number")

    pairs = model.get("perturbation")
    if not isinstance(pairs, list) or not pairs:
        raise SchemaValidationError("model.perturbation must be a non-empty list of [e1, e2] expression pairs")
    for i, pair in enumerate(pairs):
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(c, str) for c in pair):
            raise SchemaValidationError(f"model.perturbation[{i}] must be a pair of expression strings")

    _require_positive(model, "h_max", "model")
    fast = model.get("fast")
    if not isinstance(fast, dict):
        raise SchemaValidationError("model.fast must be an object")
    if fast.get("model") not in FAST_MODELS:
        raise SchemaValidationError(f"model.fast.model must be one of {sorted(FAST_MODELS)}, got {fast.get('model')!r}")
    grid_n = fast.get("grid_n")
    if not isinstance(grid_n, int) or grid_n < 8 or grid_n & (grid_n - 1):
        raise SchemaValidationError("model.fast.grid_n must be a power of two of at least 8")
    shapes = model.get("shapes")
    if len(shapes) != len(pairs):
        raise SchemaValidationError(
            f"model.shapes has {len(shapes)} entries but model.perturbation has {len(pairs)}"
        )
    for shape in shapes:
        if not isinstance(shape, str) or not SHAPE_RE.match(shape):
            raise SchemaValidationError(f"model.shapes: {shape!r} is not of the form cos<k> or sin<k>")
    box = model.get("box")
    if not isinstance(box, list) or len(box) != 4 or not all(_is_number(b) for b in box):
        raise SchemaValidationError("model.box must be [x1_min, x1_max, x2_min, x2_max]")
    if not (box[0] < box[1] and box[2] < box[3]):
        raise SchemaValidationError("model.box must have min < max on both axes")
    _require_positive(model, "seeds_per_axis", "model", integer=True)


def _validate_run(run: dict) -> None:
    eps = run.get("eps")
    if not eps or not all(_is_number(e) and e > 0 for e in eps):
        raise SchemaValidationError("run.eps must be a non-empty list of positive numbers")
    _require_positive(run, "T", "run")
    _require_positive(run, "n_paths", "run", integer=True)
    _require_positive(run, "block_size", "run", integer=True)
    _require_positive(run, "c_out", "run")
    alpha = run.get("alpha")
    if not _is_number(alpha) or not 0.0 < alpha < 0.5:
        raise SchemaValidationError(f"run.alpha must lie in (0, 1/2), got {alpha!r}")
    c_fast = run.get("c_fast")
    if not _is_number(c_fast) or not 0.0 < c_fast <= C_FAST_MAX:
        raise SchemaValidationError(f"run.c_fast must lie in (0, {C_FAST_MAX}], got {c_fast!r}")
    if not isinstance(run.get("seed"), int) or run["seed"] < 0:
        raise SchemaValidationError("run.seed must be a non-negative integer")
    for t in run.get("output_times"):
        if not _is_number(t) or not 0.0 <= t <= run["T"]:
            raise SchemaValidationError(f"run.output_times: {t!r} outside [0, T]")
    start = run.get("start")
    if not isinstance(start, dict) or not isinstance(start.get("edge"), int) or not _is_number(start.get("h")):
        raise SchemaValidationError("run.start must be {edge: int, h: number}")
    if not isinstance(run.get("auxiliary"), bool):
        raise SchemaValidationError("run.auxiliary must be a boolean")


def _validate_functions(functions: list) -> None:
    for i, spec in enumerate(functions):
        if not isinstance(spec, dict) or spec.get("kind") not in FUNCTION_KINDS:
            raise SchemaValidationError(f"verify.functions[{i}] must have kind in {sorted(FUNCTION_KINDS)}")
        missing = FUNCTION_KINDS[spec["kind"]] - set(spec)
        if missing:
            raise SchemaValidationError(f"verify.functions[{i}]: missing {sorted(missing)}")


def validate_experiment_config(payload: dict) -> None:
    if not isinstance(payload, dict):
        raise SchemaValidationError("Top-level config must be an object")
    unknown = sorted(set(payload) - set(SECTION_KEYS))
    if unknown:
        raise SchemaValidationError(f"Unknown top-level sections: {unknown}")
    for name in REQUIRED_SECTIONS:
        if name not in payload:
            raise SchemaValidationError(f"Missing required section: {name}")
    for name, section in payload.items():
        if not isinstance(section, dict):
            raise SchemaValidationError(f"{name} must be an object")
        _reject_unknown(section, name)

    _validate_model(payload["model"])
    _validate_run(payload["run"])

    coefficients = payload.get("coefficients", {})
    for key in ("graded_base", "delta_min", "gluing_tolerance"):
        if key in coefficients:
            _require_positive(coefficients, key, "coefficients")
    for key in ("graded_levels", "graded_refine", "n_uniform", "extrapolation_points"):
        if key in coefficients:
            _require_positive(coefficients, key, "coefficients", integer=True)
    if coefficients.get("extrapolation_points", 3) < 3:
        raise SchemaValidationError("coefficients.extrapolation_points must be at least 3")

    graph = payload.get("graph", {})
    for key in ("dt", "delta_min"):
        if key in graph:
            _require_positive(graph, key, "graph")
    for key in ("n_paths", "block_size"):
        if key in graph:
            _require_positive(graph, key, "graph", integer=True)
    if graph.get("h_star") is not None:
        _require_positive(graph, "h_star", "graph")

    pde = payload.get("pde", {})
    if "dt" in pde:
        _require_positive(pde, "dt", "pde")
    if "n_per_edge" in pde and (not isinstance(pde["n_per_edge"], int) or pde["n_per_edge"] < 5):
        raise SchemaValidationError("pde.n_per_edge must be an integer of at least 5")

    verify = payload.get("verify", {})
    bad = sorted(set(verify.get("experiments", [])) - set(KNOWN_EXPERIMENTS))
    if bad:
        raise SchemaValidationError(f"verify.experiments: unknown experiments {bad}")
    for key, value in (verify.get("tolerances") or {}).items():
        if not _is_number(value) or value <= 0:
            raise SchemaValidationError(f"verify.tolerances.{key} must be a positive number")
    _validate_functions(verify.get("functions", []))
    for key in SECTION_KEYS["verify"] - {"experiments", "tolerances", "functions"}:
        if not isinstance(verify.get(key, {}), dict):
            raise SchemaValidationError(f"verify.{key} must be an object of experiment settings")
