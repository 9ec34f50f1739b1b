import math

import numpy as np
import pytest

from reeb_diffusion.coefficients import (
    CoefficientError,
    GluingWeights,
    TableGridSpec,
    edge_grid,
    edge_tables,
    gluing_weights,
    nearest_offset_ratio,
    pointwise_AB,
    stationary_weights,
    tables_from_frame,
    tables_to_frame,
)
from reeb_diffusion.corrector import EffectiveMatrices
from reeb_diffusion.hamiltonian import HamiltonianModel, PerturbationBasis, ScalarField

COARSE = TableGridSpec(graded_levels=6, n_uniform=10)
# brownian fast process with sigma = sqrt(2) and shapes cos, sin
UNIT_MATRICES = EffectiveMatrices(np.eye(2), 0.5 * np.eye(2), 0.0)


@pytest.fixture(scope="module")
def dumbbell_pointwise():
    model = HamiltonianModel(ScalarField.builtin("dumbbell"), PerturbationBasis.axes())
    return pointwise_AB(model, UNIT_MATRICES)


@pytest.fixture(scope="module")
def dumbbell_tables(dumbbell_graph, dumbbell_pointwise):
    return edge_tables(dumbbell_graph, dumbbell_pointwise, COARSE, workers=1)


class TestPointwise:
    def test_harmonic_coefficients(self, harmonic_model):
        pointwise = pointwise_AB(harmonic_model, UNIT_MATRICES)
        x1, x2 = np.array([0.0, 1.0, 0.5]), np.array([0.0, 2.0, -0.5])
        np.testing.assert_allclose(pointwise.A(x1, x2), x1 ** 2 + x2 ** 2)
        np.testing.assert_allclose(pointwise.B(x1, x2), 1.0)
        np.testing.assert_allclose(pointwise.Btilde(x1, x2), 1.0)

    def test_drift_is_positive_at_a_minimum(self, dumbbell_pointwise):
        assert float(dumbbell_pointwise.B(1.0, 0.0)) > 0
        assert float(dumbbell_pointwise.B(-1.0, 0.0)) > 0

    def test_divergence_enters_only_the_tilde_drift(self):
        model = HamiltonianModel(
            ScalarField.builtin("harmonic"), PerturbationBasis([["1 + 0.3*sin(x1)", "0"], ["0", "1"]])
        )
        pointwise = pointwise_AB(model, UNIT_MATRICES)
        assert float(pointwise.Btilde(0.5, 0.5)) != pytest.approx(float(pointwise.B(0.5, 0.5)))

    def test_rejects_mismatched_matrices(self, harmonic_model):
        with pytest.raises(CoefficientError, match="does not match"):
            pointwise_AB(harmonic_model, EffectiveMatrices(np.eye(3), np.eye(3), 0.0))


class TestHarmonicTables:
    def test_tables_match_closed_form(self, harmonic_tables):
        (table,) = harmonic_tables.values()
        np.testing.assert_allclose(table.Q, 2 * math.pi, rtol=1e-5)
        np.testing.assert_allclose(table.A, 2 * table.h, rtol=1e-5)
        np.testing.assert_allclose(table.B, 1.0, rtol=1e-5)
        np.testing.assert_allclose(table.Btilde, 1.0, rtol=1e-5)

    def test_identity_holds(self, harmonic_tables):
        assert harmonic_tables[1].identity_defect() < 1e-3

    def test_interpolation_between_nodes(self, harmonic_tables):
        A, B = harmonic_tables[1].AB_at(np.array([0.37, 2.2]))
        np.testing.assert_allclose(A, [0.74, 4.4], rtol=1e-4)
        np.testing.assert_allclose(B, 1.0, rtol=1e-4)

    def test_single_edge_carries_all_stationary_mass(self, harmonic_tables):
        assert stationary_weights(harmonic_tables) == {1: pytest.approx(1.0)}

    def test_frame_round_trip(self, harmonic_tables, harmonic_graph):
        restored = tables_from_frame(tables_to_frame(harmonic_tables), harmonic_graph)
        np.testing.assert_allclose(restored[1].Q, harmonic_tables[1].Q)
        np.testing.assert_allclose(restored[1].A, harmonic_tables[1].A)

    def test_frame_requires_columns(self, harmonic_tables, harmonic_graph):
        frame = tables_to_frame(harmonic_tables).drop(columns=["Btilde"])
        with pytest.raises(CoefficientError, match="missing columns"):
            tables_from_frame(frame, harmonic_graph)


class TestDumbbellGluing:
    def test_edge_grid_is_graded_towards_the_saddle(self, dumbbell_graph):
        grid = edge_grid(dumbbell_graph, 3, COARSE)
        assert grid.min() > 0.25
        assert grid.max() == pytest.approx(dumbbell_graph.h_max)
        assert np.sum(grid - 0.25 < 0.01) >= 3
        assert np.all(np.diff(grid) > 0)

    def test_wells_are_mirror_images(self, dumbbell_tables):
        np.testing.assert_allclose(dumbbell_tables[1].Q, dumbbell_tables[2].Q, rtol=1e-5)
        np.testing.assert_allclose(dumbbell_tables[1].A, dumbbell_tables[2].A, rtol=1e-5)

    def test_flux_balance_at_the_saddle(self, dumbbell_graph, dumbbell_tables):
        saddle = dumbbell_graph.interior_vertices[0]
        weights = gluing_weights(dumbbell_graph, saddle.id, dumbbell_tables, spec=COARSE)
        assert weights.p[1] == pytest.approx(weights.p[2], rel=1e-4)
        assert weights.flux_balance < 0.03
        assert weights.extrapolated_flux_balance < 0.03
        assert sum(weights.p_hat.values()) == pytest.approx(1.0)
        assert weights.signs == {1: -1, 2: -1, 3: 1}

    def test_gluing_only_at_interior_vertices(self, dumbbell_graph, dumbbell_tables):
        exterior = next(v for v in dumbbell_graph.vertices.values() if v.kind == "exterior")
        with pytest.raises(CoefficientError, match="interior vertices"):
            gluing_weights(dumbbell_graph, exterior.id, dumbbell_tables)

    def test_stationary_weights_are_a_distribution(self, dumbbell_tables):
        weights = stationary_weights(dumbbell_tables)
        assert sum(weights.values()) == pytest.approx(1.0)
        assert weights[1] == pytest.approx(weights[2], rel=1e-4)
        assert all(w > 0 for w in weights.values())


def test_gluing_weights_round_trip():
    weights = GluingWeights(4, {1: 1.0, 2: 3.0}, {1: -1, 2: 1}, {1: 1.0, 2: 3.0}, {}, {})
    restored = GluingWeights.from_dict(weights.to_dict())
    assert restored == weights
    assert restored.p_hat == {1: 0.25, 2: 0.75}


def test_nearest_offset_ratio_of_equal_edges_is_one(star_tables):
    ratio = nearest_offset_ratio(star_tables, 1, 3, np.array([1e-4, 0.05]))
    np.testing.assert_allclose(ratio, 1.0)
