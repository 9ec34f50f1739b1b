import json

from reeb_diffusion.cache import (
    get_ledger_filename,
    load_ledger,
    lookup,
    record_stage,
    save_ledger,
    stage_dir,
    stage_key,
)
from reeb_diffusion.normalization import normalize_experiment_config


def _config(**run):
    return normalize_experiment_config({"model": {"hamiltonian": "harmonic"}, "run": run})


class TestStageKey:
    def test_depends_only_on_stage_sections(self):
        a = _config(n_paths=100)
        b = _config(n_paths=500)
        assert stage_key(a, "graph") == stage_key(b, "graph")
        assert stage_key(a, "fastslow") != stage_key(b, "fastslow")

    def test_options_enter_the_key(self):
        config = _config()
        assert stage_key(config, "fastslow", eps=0.1) != stage_key(config, "fastslow", eps=0.2)

    def test_stage_dir_uses_a_key_prefix(self, tmp_path):
        key = stage_key(_config(), "graph")
        assert stage_dir(tmp_path, "graph", key) == tmp_path / "graph" / key[:16]


def test_missing_ledger_starts_empty(tmp_path):
    ledger = load_ledger(tmp_path)
    assert ledger["metadata"]["version"] == "1.0"
    assert ledger["stages"]["graph"] == []


def test_unreadable_ledger_starts_empty(tmp_path):
    get_ledger_filename(tmp_path).write_text("{not json", encoding="utf-8")
    assert load_ledger(tmp_path)["stages"]["coefficients"] == []


def test_record_stage_upserts_by_key(tmp_path):
    ledger = load_ledger(tmp_path)
    record_stage(ledger, "graph", "abc", ["graph/abc/graph.json"], 1.0)
    record_stage(ledger, "graph", "abc", ["graph/abc/graph.json"], 2.5, {"n_edges": 3})
    record_stage(ledger, "graph", "def", ["graph/def/graph.json"], 0.5)

    entries = ledger["stages"]["graph"]
    assert [e["key"] for e in entries] == ["abc", "def"]
    assert entries[0]["elapsed_seconds"] == 2.5
    assert entries[0]["n_edges"] == 3


def test_save_ledger_round_trip(tmp_path):
    ledger = load_ledger(tmp_path)
    record_stage(ledger, "correctors", "k1", ["correctors/k1/matrices.json"], 0.1)
    path = save_ledger(ledger, tmp_path)

    stored = json.loads(path.read_text(encoding="utf-8"))
    assert stored["stages"]["correctors"][0]["key"] == "k1"
    assert load_ledger(tmp_path)["stages"]["correctors"][0]["artifacts"] == ["correctors/k1/matrices.json"]


def test_lookup_requires_artifacts_on_disk(tmp_path):
    ledger = load_ledger(tmp_path)
    record_stage(ledger, "graph", "abc", ["graph/abc/graph.json"], 1.0)
    assert lookup(ledger, "graph", "abc", tmp_path) is None

    artifact = tmp_path / "graph" / "abc" / "graph.json"
    artifact.parent.mkdir(parents=True)
    artifact.write_text("{}", encoding="utf-8")
    assert lookup(ledger, "graph", "abc", tmp_path)["key"] == "abc"
    assert lookup(ledger, "graph", "other", tmp_path) is None
