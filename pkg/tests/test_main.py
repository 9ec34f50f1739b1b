import pytest

from reeb_diffusion.main import EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, build_parser, main
from reeb_diffusion.pipeline import ReebPipeline
from reeb_diffusion.verify import CheckResult, ComparisonReport


def _args(config, out, *extra):
    return [*extra, "--config", str(config), "--output-dir", str(out), "--workers", "1"]


class TestParser:
    def test_fastslow_overrides(self):
        args = build_parser().parse_args(["sim", "fastslow", "--eps", "0.1", "0.05", "--n-paths", "10"])
        assert (args.group, args.action) == ("sim", "fastslow")
        assert args.eps == [0.1, 0.05]
        assert args.n_paths == 10
        assert not args.no_cache

    def test_verify_takes_experiment_names(self):
        args = build_parser().parse_args(["verify", "identity", "gluing", "--no-cache"])
        assert args.experiments == ["identity", "gluing"]
        assert args.no_cache

    def test_group_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


def test_graph_build_prints_edges(harmonic_config_file, tmp_path, capsys):
    assert main(_args(harmonic_config_file, tmp_path / "out", "graph", "build")) == EXIT_OK
    out = capsys.readouterr().out
    assert "2 vertices, 1 edges" in out
    assert (tmp_path / "out" / "summary.json").exists()


def test_unknown_experiment_is_a_configuration_error(harmonic_config_file, tmp_path):
    assert main(_args(harmonic_config_file, tmp_path, "verify", "spectral_gap")) == EXIT_ERROR


def test_missing_config_is_an_error(tmp_path):
    assert main(_args(tmp_path / "absent.yaml", tmp_path, "graph", "build")) == EXIT_ERROR


def test_failed_check_sets_exit_code(harmonic_config_file, tmp_path, monkeypatch):
    monkeypatch.setattr(ReebPipeline, "verify", lambda self, names: [CheckResult("identity", False, {}, "defect")])
    assert main(_args(harmonic_config_file, tmp_path, "verify", "identity")) == EXIT_CHECK_FAILED


def test_passing_checks_exit_cleanly(harmonic_config_file, tmp_path, monkeypatch):
    monkeypatch.setattr(ReebPipeline, "verify", lambda self, names: [CheckResult(n, True) for n in names])
    assert main(_args(harmonic_config_file, tmp_path, "verify", "identity", "gluing")) == EXIT_OK


def _stub_report(statistic):
    rows = [{"eps": 0.2, "t": 0.1, "statistic": statistic, "p_value": 0.5, "n": 100, "m": 100,
             "ci_low": statistic / 2, "ci_high": statistic * 2}]
    return classmethod(lambda cls, *args, **kwargs: cls(rows, 0.05))


class TestReport:
    def test_failed_comparison_sets_exit_code(self, harmonic_config_file, tmp_path, monkeypatch):
        monkeypatch.setattr(ComparisonReport, "compare", _stub_report(0.3))
        assert main(_args(harmonic_config_file, tmp_path, "report")) == EXIT_CHECK_FAILED
        assert (tmp_path / "comparison.json").exists()

    def test_passing_comparison_exits_cleanly(self, harmonic_config_file, tmp_path, monkeypatch):
        monkeypatch.setattr(ComparisonReport, "compare", _stub_report(0.01))
        assert main(_args(harmonic_config_file, tmp_path, "report")) == EXIT_OK
