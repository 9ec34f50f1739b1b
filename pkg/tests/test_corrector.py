import numpy as np
import pytest

from reeb_diffusion.corrector import (
    CellProblemBasis,
    CorrectorError,
    CorrectorSet,
    EffectiveMatrices,
    auxiliary_drift,
    effective_matrices,
    green_kubo_matrix,
    solve_correctors,
    solve_poisson,
)
from reeb_diffusion.hamiltonian import HamiltonianModel, PerturbationBasis, ScalarField
from reeb_diffusion.torus import FastProcess, FastProcessSpec


def test_brownian_correctors_are_the_shapes(brownian_process, brownian_basis):
    correctors = solve_correctors(brownian_process, brownian_basis)
    y = brownian_process.require_measure().y
    np.testing.assert_allclose(correctors.u[0], np.cos(y), atol=1e-10)
    np.testing.assert_allclose(correctors.u[1], np.sin(y), atol=1e-10)
    assert correctors.residuals.max() < 1e-8


def test_brownian_effective_matrix_is_identity(brownian_process, brownian_basis):
    matrices = effective_matrices(solve_correctors(brownian_process, brownian_basis), brownian_basis,
                                  brownian_process)
    np.testing.assert_allclose(matrices.A_mat, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(matrices.C_mat, 0.5 * np.eye(2), atol=1e-10)
    assert matrices.identity_defect < 1e-10


def test_gradient_model_matrix_is_symmetric_positive():
    process = FastProcess.from_spec(FastProcessSpec("gradient", {"a": 1.0}, grid_n=128))
    basis = CellProblemBasis.from_shapes(["cos", "sin", "cos2"], process.require_measure())
    matrices = effective_matrices(solve_correctors(process, basis), basis, process)
    assert matrices.identity_defect < 1e-10
    assert np.all(np.linalg.eigvalsh(matrices.A_mat) > 0)


def test_poisson_rejects_right_hand_side_with_nonzero_mean(brownian_process):
    g = np.ones_like(brownian_process.require_measure().y)
    with pytest.raises(CorrectorError, match="mean-zero"):
        solve_poisson(brownian_process, g)


def test_basis_rejects_dependent_shapes(brownian_process):
    with pytest.raises(CorrectorError, match="linearly dependent"):
        CellProblemBasis.from_shapes(["cos", "cos1"], brownian_process.require_measure())


def test_basis_rejects_unknown_shape(brownian_process):
    with pytest.raises(CorrectorError, match="unknown shape"):
        CellProblemBasis.from_shapes(["tan"], brownian_process.require_measure())


def test_matrices_round_trip_through_dict():
    matrices = EffectiveMatrices(np.eye(2), 0.5 * np.eye(2), 0.0)
    restored = EffectiveMatrices.from_dict(matrices.to_dict())
    np.testing.assert_array_equal(restored.A_mat, matrices.A_mat)
    np.testing.assert_array_equal(restored.C_mat, matrices.C_mat)


class TestAuxiliaryDrift:
    def test_vanishes_for_divergence_free_fields(self, brownian_process, brownian_basis):
        model = HamiltonianModel(ScalarField.builtin("dumbbell"), PerturbationBasis.axes())
        drift = auxiliary_drift(model, brownian_process, brownian_basis)
        assert drift.vanishes
        assert np.all(drift(0.3, -0.2, np.linspace(0, 6, 7)) == 0.0)

    def test_solves_the_divergence_equation(self):
        process = FastProcess.from_spec(FastProcessSpec("gradient", {"a": 0.8}, grid_n=128))
        basis = CellProblemBasis.from_shapes(["cos", "sin"], process.require_measure())
        model = HamiltonianModel(
            ScalarField.builtin("dumbbell"),
            PerturbationBasis([["1 + 0.3*sin(x1)", "0"], ["0", "1 + 0.2*cos(x2)"]]),
        )
        drift = auxiliary_drift(model, process, basis)
        assert not drift.vanishes
        for x1, x2 in [(0.0, 0.0), (0.7, -1.1), (-1.4, 0.4)]:
            assert drift.residual(x1, x2) < 1e-8


def test_green_kubo_matches_half_the_effective_diffusion(brownian_process, brownian_basis):
    estimate = green_kubo_matrix(brownian_process, brownian_basis, n_paths=4000, seed=1, dt=0.01, t_max=6.0,
                                 weights=np.diag([1.0, 0.0]))
    assert abs(estimate.value - 0.5) <= 4 * estimate.se + 0.01
    assert estimate.t_cut <= 6.0


FOURIER = {"v_cos": [0.5, 0.3], "v_sin": [0.4], "sigma_cos": [1.5, 0.2]}


def _fourier_process(grid_n):
    process = FastProcess.from_spec(FastProcessSpec("fourier", FOURIER, grid_n=grid_n))
    return process, CellProblemBasis.from_shapes(["cos", "sin"], process.require_measure())


class TestSolvePoisson:
    def test_solution_is_linear_in_the_source(self):
        process, basis = _fourier_process(512)
        g1, g2 = basis.values
        u1 = solve_poisson(process, g1)
        u2 = solve_poisson(process, g2)
        combined = solve_poisson(process, 2.0 * g1 - 3.0 * g2)
        np.testing.assert_allclose(combined, 2.0 * u1 - 3.0 * u2, rtol=0.0, atol=1e-10)

    def test_solution_does_not_depend_on_the_grid(self):
        coarse_process, coarse_basis = _fourier_process(256)
        fine_process, fine_basis = _fourier_process(512)
        coarse = solve_poisson(coarse_process, coarse_basis.values[0])
        fine = solve_poisson(fine_process, fine_basis.values[0])
        assert np.max(np.abs(fine[::2] - coarse)) < 1e-6


def test_effective_matrices_reject_inconsistent_correctors(brownian_process, brownian_basis):
    correctors = solve_correctors(brownian_process, brownian_basis)
    scaled = CorrectorSet(2.0 * correctors.u, 2.0 * correctors.du, correctors.residuals)
    with pytest.raises(CorrectorError, match="identity A = C \\+ C\\^T"):
        effective_matrices(scaled, brownian_basis, brownian_process)
