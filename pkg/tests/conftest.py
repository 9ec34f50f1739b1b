import math

import numpy as np
import pytest

from reeb_diffusion.coefficients import EdgeCoefficientTable, GluingWeights, edge_tables, pointwise_AB
from reeb_diffusion.corrector import CellProblemBasis, effective_matrices, solve_correctors
from reeb_diffusion.hamiltonian import HamiltonianModel, PerturbationBasis, ScalarField
from reeb_diffusion.reeb import ReebGraph, build_from_model
from reeb_diffusion.torus import FastProcess, FastProcessSpec


@pytest.fixture(scope="session")
def brownian_process():
    return FastProcess.from_spec(FastProcessSpec("brownian", {"sigma": math.sqrt(2.0)}, grid_n=64))


@pytest.fixture(scope="session")
def brownian_basis(brownian_process):
    return CellProblemBasis.from_shapes(["cos", "sin"], brownian_process.require_measure())


@pytest.fixture(scope="session")
def harmonic_model():
    return HamiltonianModel(ScalarField.builtin("harmonic"), PerturbationBasis.axes(), h_max=8.0)


@pytest.fixture(scope="session")
def harmonic_graph(harmonic_model):
    return build_from_model(harmonic_model.hamiltonian, 8.0, (-2.0, 2.0, -2.0, 2.0), 5)


@pytest.fixture(scope="session")
def harmonic_tables(harmonic_model, harmonic_graph, brownian_process, brownian_basis):
    matrices = effective_matrices(solve_correctors(brownian_process, brownian_basis), brownian_basis,
                                  brownian_process)
    return edge_tables(harmonic_graph, pointwise_AB(harmonic_model, matrices), workers=1)


@pytest.fixture(scope="session")
def dumbbell_graph():
    return build_from_model(ScalarField.builtin("dumbbell"), 4.0, (-2.0, 2.0, -2.0, 2.0), 9)


def _star_graph(h_max: float = 1.0) -> ReebGraph:
    """Two lower edges meeting an upper edge at one interior vertex of height 0."""
    return ReebGraph.from_spec({
        "h_max": h_max,
        "vertices": [
            {"id": 0, "kind": "interior", "value": 0.0, "location": [0.0, 0.0]},
            {"id": 1, "kind": "exterior", "value": -1.0, "location": [-1.0, 0.0]},
            {"id": 2, "kind": "exterior", "value": -1.0, "location": [1.0, 0.0]},
            {"id": 3, "kind": "infinity"},
        ],
        "edges": [
            {"id": 1, "vertices": [1, 0]},
            {"id": 2, "vertices": [2, 0]},
            {"id": 3, "vertices": [0, 3]},
        ],
    })


def _star_tables(graph: ReebGraph) -> dict[int, EdgeCoefficientTable]:
    """Unit diffusion, zero drift and unit level length on every edge."""
    tables = {}
    for k, e in graph.edges.items():
        h = np.linspace(e.h_lo + 0.01, e.h_hi - 0.01, 40)
        ones = np.ones_like(h)
        tables[k] = EdgeCoefficientTable(k, h, ones, ones, 0.0 * ones, 0.0 * ones, 0.0, e.h_lo, e.h_hi)
    return tables


def _star_weights(scale: float = 1.0) -> dict[int, GluingWeights]:
    p = {1: scale, 2: scale, 3: 2.0 * scale}
    return {0: GluingWeights(0, p, {1: -1, 2: -1, 3: 1}, dict(p), {}, {})}


@pytest.fixture
def star_graph():
    return _star_graph()


@pytest.fixture
def star_tables(star_graph):
    return _star_tables(star_graph)


@pytest.fixture
def star_weights():
    """Factory: gluing weights at the star vertex, all scaled by ``scale``."""
    return _star_weights


HARMONIC_TOML = """\
[model]
hamiltonian = "harmonic"
h_max = 4.0
box = [-2.0, 2.0, -2.0, 2.0]
seeds_per_axis = 5
shapes = ["cos", "sin"]

[model.fast]
model = "brownian"
grid_n = 64

[run]
eps = [0.2]
T = 0.1
n_paths = 16
block_size = 8
start = { edge = 1, h = 1.0 }

[graph]
n_paths = 32
"""


@pytest.fixture
def harmonic_config_file(tmp_path):
    """Small harmonic experiment config written as TOML."""
    path = tmp_path / "harmonic.toml"
    path.write_text(HARMONIC_TOML, encoding="utf-8")
    return path
