import pytest

from reeb_diffusion.normalization import normalize_experiment_config
from reeb_diffusion.schema import SchemaValidationError, validate_experiment_config


def build_valid_payload():
    return normalize_experiment_config({
        "model": {
            "hamiltonian": {"builtin": "dumbbell"},
            "fast": {"model": "gradient", "params": {"a": 0.5}, "grid_n": 256},
        },
        "run": {"eps": [0.2, 0.1], "T": 0.5, "n_paths": 200, "start": {"edge": 3, "h": 0.75}},
        "verify": {"experiments": ["identity", "gluing"], "functions": [{"kind": "height"}]},
    })


def test_validate_experiment_config_accepts_valid_payload():
    validate_experiment_config(build_valid_payload())


def test_normalization_fills_defaults():
    payload = build_valid_payload()
    assert payload["model"]["perturbation"] == [["1", "0"], ["0", "1"]]
    assert payload["model"]["shapes"] == ["cos", "sin"]
    assert payload["run"]["alpha"] == 0.4
    assert payload["run"]["seed"] == 20240601
    assert payload["graph"]["h_star"] is None
    assert payload["pde"]["n_per_edge"] == 201


def test_normalization_coerces_shorthand_values():
    payload = normalize_experiment_config({
        "model": {"hamiltonian": " Harmonic ", "fast": "Brownian", "shapes": "cos"},
        "run": {"eps": 0.1, "output_times": 0.5},
        "verify": {"experiments": "Identity"},
    })
    assert payload["model"]["hamiltonian"] == {"builtin": "harmonic"}
    assert payload["model"]["fast"]["model"] == "brownian"
    assert payload["model"]["fast"]["grid_n"] == 512
    assert payload["model"]["shapes"] == ["cos"]
    assert payload["run"]["eps"] == [0.1]
    assert payload["run"]["output_times"] == [0.5]
    assert payload["verify"]["experiments"] == ["identity"]


def test_normalization_keeps_hamiltonian_opaque():
    payload = normalize_experiment_config({"model": {"hamiltonian": {"expr": "x1^2 + x2^2"}}})
    assert payload["model"]["hamiltonian"] == {"expr": "x1^2 + x2^2"}


def test_normalization_leaves_caller_payload_untouched():
    raw = {"run": {"eps": 0.1}}
    normalize_experiment_config(raw)
    assert raw == {"run": {"eps": 0.1}}


@pytest.mark.parametrize(
    "section, key, value, match",
    [
        ("run", "alpha", 0.6, "run.alpha"),
        ("run", "c_fast", 0.5, "run.c_fast"),
        ("run", "eps", [], "run.eps"),
        ("run", "n_paths", 0, "run.n_paths"),
        ("run", "output_times", [2.0], "run.output_times"),
        ("model", "shapes", ["cos", "sin", "cos2"], "model.shapes has 3 entries"),
        ("model", "box", [1.0, -1.0, -1.0, 1.0], "model.box"),
        ("model", "h_max", -1.0, "model.h_max"),
    ],
)
def test_validate_experiment_config_rejects_bad_values(section, key, value, match):
    payload = build_valid_payload()
    payload[section][key] = value

    with pytest.raises(SchemaValidationError, match=match):
        validate_experiment_config(payload)


def test_validate_experiment_config_rejects_unknown_keys():
    payload = build_valid_payload()
    payload["run"]["dt"] = 1e-4

    with pytest.raises(SchemaValidationError, match=r"run: unknown keys \['dt'\]"):
        validate_experiment_config(payload)


def test_validate_experiment_config_rejects_unknown_section():
    payload = build_valid_payload()
    payload["plots"] = {}

    with pytest.raises(SchemaValidationError, match="Unknown top-level sections"):
        validate_experiment_config(payload)


def test_validate_experiment_config_requires_one_hamiltonian_source():
    payload = build_valid_payload()
    payload["model"]["hamiltonian"] = {"builtin": "dumbbell", "expr": "x1^2"}

    with pytest.raises(SchemaValidationError, match="exactly one"):
        validate_experiment_config(payload)


def test_validate_experiment_config_rejects_unknown_experiment():
    payload = build_valid_payload()
    payload["verify"]["experiments"].append("spectral_gap")

    with pytest.raises(SchemaValidationError, match="unknown experiments"):
        validate_experiment_config(payload)


def test_validate_experiment_config_checks_function_fields():
    payload = build_valid_payload()
    payload["verify"]["functions"] = [{"kind": "bump", "edge": 3}]

    with pytest.raises(SchemaValidationError, match="missing"):
        validate_experiment_config(payload)


def test_validate_experiment_config_rejects_fast_grid_size():
    payload = build_valid_payload()
    payload["model"]["fast"]["grid_n"] = 100

    with pytest.raises(SchemaValidationError, match="power of two"):
        validate_experiment_config(payload)
