import copy
from typing import Any, Dict

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "model": {
        "hamiltonian": {"builtin": "dumbbell"},
        "perturbation": [["1", "0"], ["0", "1"]],
        "perturbation_params": {},
        "h_max": 4.0,
        "fast": {"model": "brownian", "params": {}, "grid_n": 512},
        "shapes": ["cos", "sin"],
        "box": [-3.0, 3.0, -3.0, 3.0],
        "seeds_per_axis": 15,
    },
    "coefficients": {
        "graded_base": 0.1,
        "graded_levels": 11,
        "graded_refine": 2,
        "n_uniform": 24,
        "delta_min": 1e-3,
        "extrapolation_points": 8,
        "gluing_tolerance": 0.02,
    },
    "run": {
        "eps": [0.2, 0.1, 0.05],
        "T": 1.0,
        "output_times": [],
        "n_paths": 10000,
        "seed": 20240601,
        "alpha": 0.4,
        "c_fast": 0.05,
        "c_out": 0.25,
        "block_size": 1024,
        "start": {"edge": 3, "h": 0.75},
        "auxiliary": False,
    },
    "graph": {
        "dt": 1e-4,
        "n_paths": 10000,
        "delta_min": 1e-3,
        "h_star": None,
        "block_size": 4096,
    },
    "pde": {"n_per_edge": 201, "dt": 1e-3, "rannacher_steps": 2},
    "verify": {
        "experiments": [],
        "tolerances": {},
        "functions": [],
        "exit_probability": {},
        "exit_time": {},
        "excursions": {},
        "mean_zero": {},
        "green_kubo": {},
        "graph_mc_pde": {},
        "vertex_entry": {},
        "determinism": {},
    },
    "output": {"dir": "artifacts", "gnuplot": True},
}

OPAQUE_KEYS = {"params", "tolerances", "hamiltonian"}
LOWER_CASE_KEYS = {("model", "fast", "model"), ("model", "hamiltonian", "builtin")}


def _strip_strings(value: Any) -> Any:
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, dict):
        return {k: _strip_strings(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_strip_strings(v) for v in value]
    return value


def _as_list(value: Any) -> Any:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _merge_defaults(section: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in section.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key not in OPAQUE_KEYS:
            merged[key] = _merge_defaults(value, merged[key])
        else:
            merged[key] = value
    return merged


def normalize_experiment_config(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Fill defaults, strip strings, lower-case model names and coerce scalars to lists."""
    if not isinstance(payload, dict):
        return payload
    payload = _strip_strings(copy.deepcopy(payload))
    for name, defaults in DEFAULTS.items():
        section = payload.get(name, {})
        if section is None:
            section = {}
        if isinstance(section, dict):
            payload[name] = _merge_defaults(section, defaults)

    model = payload.get("model")
    if isinstance(model, dict):
        if isinstance(model.get("hamiltonian"), str):
            model["hamiltonian"] = {"builtin": model["hamiltonian"]}
        if isinstance(model.get("fast"), str):
            model["fast"] = {**DEFAULTS["model"]["fast"], "model": model["fast"]}
        model["shapes"] = _as_list(model.get("shapes"))
    for path in LOWER_CASE_KEYS:
        node = payload
        for key in path[:-1]:
            node = node.get(key) if isinstance(node, dict) else None
        if isinstance(node, dict) and isinstance(node.get(path[-1]), str):
            node[path[-1]] = node[path[-1]].lower()

    run = payload.get("run")
    if isinstance(run, dict):
        run["eps"] = _as_list(run.get("eps"))
        run["output_times"] = _as_list(run.get("output_times"))
    verify = payload.get("verify")
    if isinstance(verify, dict):
        verify["experiments"] = [str(e).lower() for e in _as_list(verify.get("experiments"))]
        verify["functions"] = _as_list(verify.get("functions"))
    return payload
