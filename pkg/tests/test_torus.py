import math

import numpy as np
import pytest

from reeb_diffusion.torus import (
    FastProcess,
    FastProcessError,
    FastProcessSpec,
    build_fast_process,
    check_fast_dt,
    inverse_cdf,
    measure_mean,
    stationary_density,
    step_fast,
)


def test_gradient_model_density_is_gibbs():
    a = 1.3
    mu = stationary_density(FastProcessSpec("gradient", {"a": a}, grid_n=128))
    # v = -a sin y = -U' with U = -a cos y, sigma^2 = 2: p proportional to exp(-U)
    gibbs = np.exp(a * np.cos(mu.y))
    gibbs /= np.sum(gibbs) * (2 * math.pi / len(mu.y))
    np.testing.assert_allclose(mu.density, gibbs, atol=1e-10)
    assert mu.residual < 1e-8


def test_constant_drift_density_is_uniform():
    mu = stationary_density(FastProcessSpec("constant_drift", {"c": 2.0}, grid_n=32))
    np.testing.assert_allclose(mu.density, 1.0 / (2 * math.pi), rtol=1e-12)


def test_fourier_drift_with_circulation_has_positive_density():
    mu = stationary_density(FastProcessSpec("fourier", {"v_cos": [0.5, 0.3], "v_sin": [0.4]}, grid_n=128))
    assert np.all(mu.density > 0)
    assert measure_mean(np.ones_like(mu.y), mu) == pytest.approx(1.0, abs=1e-12)


def test_measure_mean_of_cosine_under_uniform_measure_vanishes():
    mu = stationary_density(FastProcessSpec("brownian", grid_n=64))
    assert measure_mean(np.cos, mu) == pytest.approx(0.0, abs=1e-14)
    assert measure_mean(lambda y: np.cos(y) ** 2, mu) == pytest.approx(0.5, abs=1e-14)


class TestSpecValidation:
    def test_rejects_higher_dimensional_torus(self):
        with pytest.raises(FastProcessError, match="one-dimensional"):
            FastProcessSpec("brownian", m=2)

    def test_rejects_grid_that_is_not_a_power_of_two(self):
        with pytest.raises(FastProcessError, match="power of two"):
            FastProcessSpec("brownian", grid_n=100)

    def test_rejects_unknown_model(self):
        with pytest.raises(FastProcessError, match="unknown fast model"):
            FastProcessSpec("levy")

    def test_rejects_degenerate_diffusion(self):
        spec = FastProcessSpec("brownian", {"sigma": 0.0}, grid_n=16)
        with pytest.raises(FastProcessError, match="not elliptic"):
            stationary_density(spec)


def test_inverse_cdf_of_uniform_measure_is_linear():
    mu = stationary_density(FastProcessSpec("brownian", grid_n=64))
    np.testing.assert_allclose(inverse_cdf(mu, np.array([0.25, 0.5])), [math.pi / 2, math.pi], atol=1e-12)


def test_check_fast_dt_enforces_eps_squared_scaling():
    check_fast_dt(0.1 * 0.2 ** 2, 0.2)
    with pytest.raises(FastProcessError, match="exceeds"):
        check_fast_dt(0.2 * 0.2 ** 2, 0.2)


def test_step_fast_wraps_onto_the_circle():
    process = FastProcess.from_spec(FastProcessSpec("brownian", grid_n=16))
    y = np.array([0.01, 6.27])
    normals = np.array([-3.0, 3.0])
    out = step_fast(process, y, dt=0.001, eps=0.1, normals=normals)
    assert np.all((out >= 0.0) & (out < 2 * math.pi))
    expected = (y + math.sqrt(2.0) * math.sqrt(0.001) / 0.1 * normals) % (2 * math.pi)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_step_fast_requires_a_noise_source():
    process = FastProcess.from_spec(FastProcessSpec("brownian", grid_n=16))
    with pytest.raises(FastProcessError, match="rng"):
        step_fast(process, np.zeros(2), dt=1e-4, eps=0.1)


def test_build_fast_process_from_config_section():
    process = build_fast_process({"model": "gradient", "params": {"a": 0.5}, "grid_n": 32})
    assert process.spec.model == "gradient"
    assert process.require_measure().grid_n == 32
