import logging
import math

import numpy as np
import pytest

from reeb_diffusion.hamiltonian import (
    DegenerateCriticalPointError,
    FieldError,
    HamiltonianModel,
    PerturbationBasis,
    ScalarField,
    TracingError,
    anchor_on_ray,
    classify,
    find_critical_points,
    line_integral,
    trace_level,
    trace_separatrix,
)


@pytest.fixture(scope="module")
def dumbbell():
    return ScalarField.builtin("dumbbell")


@pytest.fixture(scope="module")
def harmonic():
    return ScalarField.builtin("harmonic")


def test_dumbbell_critical_points(dumbbell):
    criticals = find_critical_points(dumbbell, (-2.0, 2.0, -2.0, 2.0), 9)

    kinds = sorted(c.kind for c in criticals)
    assert kinds == ["minimum", "minimum", "saddle"]
    minima = sorted((c for c in criticals if c.kind == "minimum"), key=lambda c: c.location[0])
    np.testing.assert_allclose([m.location for m in minima], [(-1.0, 0.0), (1.0, 0.0)], atol=1e-10)
    assert [m.value for m in minima] == pytest.approx([0.0, 0.0], abs=1e-14)
    saddle = next(c for c in criticals if c.kind == "saddle")
    np.testing.assert_allclose(saddle.location, (0.0, 0.0), atol=1e-10)
    assert saddle.value == pytest.approx(0.25)


def test_tilted_dumbbell_keeps_its_critical_points():
    tilted = ScalarField.builtin("dumbbell", {"tilt": 0.3})
    values = sorted(c.value for c in find_critical_points(tilted, (-2.0, 2.0, -2.0, 2.0), 9))
    assert values == pytest.approx([0.0, 0.0, 0.25], abs=1e-12)


def test_builtin_rejects_unknown_params():
    with pytest.raises(FieldError, match="not accepted"):
        ScalarField.builtin("harmonic", {"tilt": 1.0})


def test_expression_field_reports_parse_errors():
    with pytest.raises(FieldError, match="column"):
        ScalarField.from_expression("x1^2 +* x2")


def test_degenerate_critical_point_is_an_error():
    quartic = ScalarField.from_expression("x1^4 + x2^2")
    with pytest.raises(DegenerateCriticalPointError, match="degenerate Hessian"):
        classify(quartic, np.array([0.0, 0.0]))


@pytest.mark.parametrize("h", [0.5, 1.0, 2.0])
def test_harmonic_level_period_is_two_pi(harmonic, h):
    curve = trace_level(harmonic, anchor_on_ray(harmonic, (0.0, 0.0), (1.0, 0.0), h), h)
    assert line_integral(curve) == pytest.approx(2 * math.pi, rel=1e-6)
    assert curve.length == pytest.approx(2 * math.pi * math.sqrt(2 * h), rel=1e-6)


def test_level_period_equals_area_derivative(dumbbell):
    h, step = 0.1, 1e-3

    def anchor(level):
        return anchor_on_ray(dumbbell, (1.0, 0.0), (1.0, 0.0), level)

    q = line_integral(trace_level(dumbbell, anchor(h), h))
    upper = trace_level(dumbbell, anchor(h + step), h + step).area()
    lower = trace_level(dumbbell, anchor(h - step), h - step).area()
    assert q == pytest.approx((upper - lower) / (2 * step), rel=0.01)


def test_small_well_level_period_approaches_hessian_limit(dumbbell):
    h = 1e-4
    curve = trace_level(dumbbell, anchor_on_ray(dumbbell, (1.0, 0.0), (1.0, 0.0), h), h)
    assert line_integral(curve) == pytest.approx(2 * math.pi / math.sqrt(2.0), rel=1e-3)


def test_level_curve_containment(harmonic):
    curve = trace_level(harmonic, anchor_on_ray(harmonic, (0.0, 0.0), (0.0, 1.0), 0.5), 0.5)
    assert curve.contains([0.0, 2.0, 0.5], [0.0, 0.0, 0.5]).tolist() == [True, False, True]
    assert curve.area() == pytest.approx(math.pi, rel=1e-4)


def test_anchor_on_ray_fails_beyond_reach(harmonic):
    with pytest.raises(TracingError, match="never reaches"):
        anchor_on_ray(harmonic, (0.0, 0.0), (1.0, 0.0), 100.0)


def test_dumbbell_separatrix_has_two_lobes(dumbbell):
    saddle = next(c for c in find_critical_points(dumbbell, (-2.0, 2.0, -2.0, 2.0), 9) if c.kind == "saddle")
    lobes = trace_separatrix(dumbbell, saddle)
    assert len(lobes) == 2
    for lobe in lobes:
        np.testing.assert_array_equal(lobe.points[0], [0.0, 0.0])
        np.testing.assert_allclose(dumbbell(lobe.points[1:, 0], lobe.points[1:, 1]), 0.25, atol=1e-8)
    centres = sorted(float(lobe.points[:, 0].mean()) for lobe in lobes)
    assert centres[0] < 0 < centres[1]


class TestHamiltonianModel:
    def test_slow_drift_is_skew_gradient_plus_perturbation(self, harmonic):
        model = HamiltonianModel(harmonic, PerturbationBasis.axes())
        phi = np.array([[0.5], [-0.25]])
        b1, b2 = model.slow_drift(np.array([1.0]), np.array([2.0]), phi)
        np.testing.assert_allclose(b1, [-2.0 + 0.5])
        np.testing.assert_allclose(b2, [1.0 - 0.25])

    def test_hamiltonian_part_projects_gradient(self, harmonic):
        model = HamiltonianModel(harmonic, PerturbationBasis.axes())
        np.testing.assert_allclose(model.hamiltonian_part(1.0, 2.0), [1.0, 2.0])

    def test_divergence_flags(self):
        assert PerturbationBasis.axes().divergence_vanishes
        varying = PerturbationBasis([["1 + 0.3*sin(x1)", "0"]])
        assert not varying.divergence_vanishes
        np.testing.assert_allclose(varying.divergence(0.0, 0.0), [0.3])

    def test_from_config_defaults_to_axes(self):
        model = HamiltonianModel.from_config({"hamiltonian": {"builtin": "harmonic"}, "h_max": 3.0})
        assert model.perturbation.is_constant
        assert model.h_max == 3.0


def _chords(points):
    closed = np.vstack([points, points[:1]])
    return np.hypot(*np.diff(closed, axis=0).T)


def test_level_curve_segments_are_chords(harmonic):
    h = 0.5
    curve = trace_level(harmonic, anchor_on_ray(harmonic, (0.0, 0.0), (1.0, 0.0), h), h)
    np.testing.assert_allclose(curve.dl, _chords(curve.points), rtol=1e-12)
    assert curve.length == pytest.approx(2.0 * math.pi, abs=1e-3)


def test_separatrix_segments_are_chords(dumbbell):
    saddle = next(c for c in find_critical_points(dumbbell, (-2.0, 2.0, -2.0, 2.0), 9) if c.kind == "saddle")
    for lobe in trace_separatrix(dumbbell, saddle):
        np.testing.assert_allclose(lobe.dl, _chords(lobe.points), rtol=1e-12)


def test_seeds_without_a_root_are_reported(caplog):
    ramp = ScalarField.from_expression("x1 + x2^2/2")
    with caplog.at_level(logging.WARNING, logger="reeb_diffusion.hamiltonian"):
        assert find_critical_points(ramp, (-1.0, 1.0, -1.0, 1.0), 3) == []
    assert "did not converge inside the box" in caplog.text
