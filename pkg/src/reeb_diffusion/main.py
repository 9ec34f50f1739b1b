#!/usr/bin/env python
"""reeb_diffusion command line.

Usage:
    reeb_diffusion graph build      [--config PATH]
    reeb_diffusion coeffs compute   [--config PATH]
    reeb_diffusion sim fastslow     [--config PATH] [--eps E ...] [--n-paths N]
    reeb_diffusion sim graph        [--config PATH] [--n-paths N]
    reeb_diffusion pde solve        [--config PATH] [--T T]
    reeb_diffusion verify NAME ...  [--config PATH]   (NAME may be "all")
    reeb_diffusion report           [--config PATH]

Exit codes: 0 when every requested check passes, 1 on configuration or stage
errors, 2 when a verification check fails.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

import pandas as pd

from .fastslow import EnsembleResult
from .graph_process import graph_function, solve_backward_pde
from .pipeline import ReebPipeline, StageError, eps_label, load_config
from .schema import KNOWN_EXPERIMENTS, SchemaValidationError
from .utils import load_env, save_csv_artifact, save_json_artifact, save_text_artifact
from .verify import ComparisonReport, default_functions, merged_tolerances

CONFIG_DIR = Path(__file__).parent / "config"
DEFAULT_CONFIG = CONFIG_DIR / "dumbbell.yaml"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

logger = logging.getLogger(__name__)


def setup_logging():
    load_env()
    level = os.getenv("REEB_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[logging.StreamHandler(sys.stdout)],
    )


def _pipeline(args, config=None) -> ReebPipeline:
    config = config or load_config(args.config)
    return ReebPipeline(config, output_dir=args.output_dir, workers=args.workers, use_cache=not args.no_cache)


def cmd_graph_build(args) -> int:
    pipeline = _pipeline(args)
    entry = pipeline.run_stage("graph")
    graph = pipeline.graph
    print(f"\nReeb graph: {len(graph.vertices)} vertices, {len(graph.edges)} edges\n")
    for e in sorted(graph.edges.values(), key=lambda e: e.id):
        lo, hi = (graph.vertices[v] for v in e.vertices)
        print(f"  edge {e.id:<3} {lo.kind:<9} {e.h_lo:>10.6g} -> {hi.kind:<9} {e.h_hi:>10.6g}")
    print(f"\n  artifacts: {', '.join(entry['artifacts'])}\n")
    pipeline.save_summary()
    return EXIT_OK


def cmd_coeffs_compute(args) -> int:
    pipeline = _pipeline(args)
    for stage in ("graph", "correctors", "coefficients"):
        pipeline.run_stage(stage)
    print(f"\nEffective matrix A:\n{pipeline.matrices.A_mat}\n")
    for vertex_id, w in sorted(pipeline.weights.items()):
        print(f"  vertex {vertex_id}: p_hat = {w.p_hat}, flux balance {w.flux_balance:.2e}")
    pipeline.save_summary()
    return EXIT_OK


def cmd_sim_fastslow(args) -> int:
    config = load_config(args.config)
    if args.eps:
        config["run"]["eps"] = [float(e) for e in args.eps]
    if args.n_paths:
        config["run"]["n_paths"] = int(args.n_paths)
    pipeline = _pipeline(args, config)
    pipeline.run_stage("fastslow")
    for eps, result in sorted(pipeline.fastslow_results.items(), reverse=True):
        for row in result.summary()["marginals"]:
            print(f"  eps={eps:<8g} t={row['t']:<6g} mean h={row['mean_h']:.5f}  edges {row['edge_fractions']}")
    pipeline.save_summary()
    return EXIT_OK


def cmd_sim_graph(args) -> int:
    config = load_config(args.config)
    if args.n_paths:
        config["graph"]["n_paths"] = int(args.n_paths)
    pipeline = _pipeline(args, config)
    pipeline.run_stage("graph_diffusion")
    for row in pipeline.graph_result.summary()["marginals"]:
        print(f"  t={row['t']:<6g} mean h={row['mean_h']:.5f}  edges {row['edge_fractions']}")
    pipeline.save_summary()
    return EXIT_OK


def cmd_pde_solve(args) -> int:
    pipeline = _pipeline(args)
    T = float(args.T if args.T is not None else pipeline.config["run"]["T"])
    specs = pipeline.config["verify"]["functions"] or default_functions(pipeline.graph)
    directory = pipeline.output_dir / "pde" / pipeline.result.config_hash[:16]
    values = []
    for i, spec in enumerate(specs):
        solution = solve_backward_pde(graph_function(spec), T, pipeline.graph, pipeline.tables, pipeline.weights,
                                      pipeline.pde_spec)
        save_csv_artifact(solution.to_frame(), directory / f"f{i}_{spec['kind']}.csv")
        value = solution.value_at(pipeline.start)
        values.append({"function": spec, "T": T, "value_at_start": value})
        print(f"  {spec}: E f(h_T) from ({pipeline.start.k}, {pipeline.start.h}) = {value:.6f}")
    save_json_artifact(values, directory / "pde.json")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(KNOWN_EXPERIMENTS) if "all" in args.experiments else args.experiments
    unknown = sorted(set(names) - set(KNOWN_EXPERIMENTS))
    if unknown:
        raise SchemaValidationError(f"verify: unknown experiments {unknown}; known {list(KNOWN_EXPERIMENTS)}")
    pipeline = _pipeline(args)
    checks = pipeline.verify(names)
    pipeline.save_summary()
    print()
    for c in checks:
        note = f"  ({c.message})" if c.message else ""
        print(f"  {c.name:<18} {'PASS' if c.passed else 'FAIL'}{note}")
    print()
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


GNUPLOT_TEMPLATE = """\
set datafile separator ","
set key autotitle columnhead
set logscale x
set xlabel "eps"
set ylabel "KS statistic"
set terminal pngcairo size 900,600
set output "{png}"
plot for [t in "{times}"] "< awk -F, -v t=" . t . " 'NR==1 || $2==t' {csv}" using 1:3 with linespoints title "t=" . t
"""


def cmd_report(args) -> int:
    """Recompute the KS comparison from the stored ensemble CSVs and write summary + plot script."""
    pipeline = _pipeline(args)
    for stage in ("graph", "fastslow", "graph_diffusion"):
        pipeline.run_stage(stage)
    seed = int(pipeline.config["run"]["seed"])
    fs_dir = Path(pipeline.result.stages["fastslow"]["directory"])
    g_dir = Path(pipeline.result.stages["graph_diffusion"]["directory"])
    fastslow = {
        float(eps): EnsembleResult.from_frame(pd.read_csv(fs_dir / f"fastslow_eps{eps_label(eps)}.csv"), seed)
        for eps in pipeline.config["run"]["eps"]
    }
    reference = EnsembleResult.from_frame(pd.read_csv(g_dir / "graph.csv"), seed, "graph")
    tol = merged_tolerances(pipeline.config["verify"]["tolerances"])
    report = ComparisonReport.compare(pipeline.graph, fastslow, reference, tol["ks_final"], tol["ks_slack"], seed)
    csv_path = save_csv_artifact(report.to_frame(), pipeline.output_dir / "comparison.csv")
    save_json_artifact(report.to_dict(), pipeline.output_dir / "comparison.json")
    if pipeline.config["output"]["gnuplot"]:
        times = " ".join(f"{t:g}" for t in sorted(report.by_time()))
        script = GNUPLOT_TEMPLATE.format(png="comparison.png", times=times, csv=csv_path.name)
        save_text_artifact(script, pipeline.output_dir / "comparison.gp")
    pipeline.save_summary()
    for row in report.rows:
        print(f"  eps={row['eps']:<8g} t={row['t']:<6g} KS={row['statistic']:.4f} "
              f"[{row['ci_low']:.4f}, {row['ci_high']:.4f}] p={row['p_value']:.3g}")
    print(f"\n  monotone: {report.monotone}, final below {report.final_tolerance:g}: {report.final_ok}\n")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


COMMANDS = {
    ("graph", "build"): cmd_graph_build,
    ("coeffs", "compute"): cmd_coeffs_compute,
    ("sim", "fastslow"): cmd_sim_fastslow,
    ("sim", "graph"): cmd_sim_graph,
    ("pde", "solve"): cmd_pde_solve,
    ("verify", None): cmd_verify,
    ("report", None): cmd_report,
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=str(DEFAULT_CONFIG), help="YAML or TOML experiment config")
    parser.add_argument("--output-dir", default=None, help="Overrides output.dir and REEB_OUTPUT_DIR")
    parser.add_argument("--workers", type=int, default=None, help="Process-pool size (default REEB_WORKERS)")
    parser.add_argument("--no-cache", action="store_true", help="Recompute every stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reeb_diffusion", description="Reeb-graph averaging toolkit")
    groups = parser.add_subparsers(dest="group", required=True)

    graph = groups.add_parser("graph", help="Reeb graph construction").add_subparsers(dest="action", required=True)
    _common(graph.add_parser("build", help="Find critical points and build the Reeb graph"))

    coeffs = groups.add_parser("coeffs", help="Averaged coefficients").add_subparsers(dest="action", required=True)
    _common(coeffs.add_parser("compute", help="Correctors, edge tables and gluing weights"))

    sim = groups.add_parser("sim", help="Ensemble simulations").add_subparsers(dest="action", required=True)
    fastslow = sim.add_parser("fastslow", help="Fast-slow ensembles for each eps")
    _common(fastslow)
    fastslow.add_argument("--eps", type=float, nargs="+", help="Overrides run.eps")
    fastslow.add_argument("--n-paths", type=int, help="Overrides run.n_paths")
    graph_sim = sim.add_parser("graph", help="Graph-diffusion ensemble")
    _common(graph_sim)
    graph_sim.add_argument("--n-paths", type=int, help="Overrides graph.n_paths")

    pde = groups.add_parser("pde", help="Backward Kolmogorov equation").add_subparsers(dest="action", required=True)
    solve = pde.add_parser("solve", help="Solve for the configured test functions")
    _common(solve)
    solve.add_argument("--T", type=float, default=None, help="Horizon (default run.T)")

    verify = groups.add_parser("verify", help="Run acceptance checks")
    _common(verify)
    verify.add_argument("experiments", nargs="+", help=f"'all' or any of {', '.join(KNOWN_EXPERIMENTS)}")

    report = groups.add_parser("report", help="KS comparison, summary.json and gnuplot script")
    _common(report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()
    handler = COMMANDS[(args.group, getattr(args, "action", None))]
    try:
        return handler(args)
    except StageError as e:
        logger.error("%s", e)
        return EXIT_ERROR
    except SchemaValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_ERROR
    except KeyboardInterrupt:
        logger.error("Interrupted by user")
        return EXIT_ERROR
    except Exception as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
