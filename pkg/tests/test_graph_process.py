import numpy as np
import pytest

from reeb_diffusion.graph_process import (
    GraphDiffusionConfig,
    GraphProcessError,
    PDEGridSpec,
    bump_function,
    constant_function,
    evaluate_on_graph,
    expectation,
    graph_function,
    height_function,
    simulate_graph_diffusion,
    solve_backward_pde,
    step_graph_diffusion,
    vertex_entry_tally,
)
from reeb_diffusion.reeb import GraphPoint

SMALL_PDE = PDEGridSpec(n_per_edge=101, dt=0.005)


@pytest.fixture
def star_config(star_graph, star_tables, star_weights):
    return GraphDiffusionConfig(star_graph, star_tables, star_weights(1.0), dt=1e-4, T=0.05, n_paths=200, seed=4)


class TestConfig:
    def test_default_threshold_follows_the_step(self, star_config):
        assert star_config.h_star == pytest.approx(10 * np.sqrt(1e-4))

    def test_threshold_below_the_floor_is_refused(self, star_graph, star_tables, star_weights):
        with pytest.raises(GraphProcessError, match="below"):
            GraphDiffusionConfig(star_graph, star_tables, star_weights(1.0), dt=1e-4, h_star=0.01)

    def test_missing_gluing_weights(self, star_graph, star_tables):
        with pytest.raises(GraphProcessError, match="no gluing weights"):
            GraphDiffusionConfig(star_graph, star_tables, {}, dt=1e-4)

    def test_step_too_large_for_the_edges(self, star_graph, star_tables, star_weights):
        with pytest.raises(GraphProcessError, match="too large"):
            GraphDiffusionConfig(star_graph, star_tables, star_weights(1.0), dt=0.1)


class TestStarVertex:
    def test_entry_frequencies_follow_the_weights(self, star_graph, star_tables, star_weights):
        config = GraphDiffusionConfig(star_graph, star_tables, star_weights(1.0), dt=1e-4, n_paths=2000, seed=9)
        tally = vertex_entry_tally(config, max_steps=20_000)
        assert tally.edges == [1, 2, 3]
        assert tally.unresolved == 0
        np.testing.assert_allclose(tally.frequencies, [0.25, 0.25, 0.5], atol=0.06)
        assert tally.to_dict()["p_hat"] == pytest.approx([0.25, 0.25, 0.5])

    def test_monte_carlo_ignores_a_common_weight_scale(self, star_graph, star_tables, star_weights):
        start = GraphPoint(3, 0.05)
        runs = [
            simulate_graph_diffusion(
                GraphDiffusionConfig(star_graph, star_tables, star_weights(s), dt=1e-4, T=0.02, n_paths=100, seed=2),
                start,
            )
            for s in (1.0, 10.0)
        ]
        np.testing.assert_array_equal(runs[0].edges, runs[1].edges)
        np.testing.assert_array_equal(runs[0].heights, runs[1].heights)
        assert set(np.unique(runs[0].edges)) <= {1, 2, 3}

    def test_pde_ignores_a_common_weight_scale(self, star_graph, star_tables, star_weights):
        f0 = bump_function(3, 0.5, 0.3)
        a = solve_backward_pde(f0, 0.1, star_graph, star_tables, star_weights(1.0), SMALL_PDE)
        b = solve_backward_pde(f0, 0.1, star_graph, star_tables, star_weights(10.0), SMALL_PDE)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-9, atol=1e-12)

    def test_pde_preserves_constants(self, star_graph, star_tables, star_weights):
        solution = solve_backward_pde(constant_function(3.0), 0.2, star_graph, star_tables, star_weights(1.0),
                                      SMALL_PDE)
        np.testing.assert_allclose(solution.values, 3.0, atol=1e-10)

    def test_pde_rejects_discontinuous_initial_data(self, star_graph, star_tables, star_weights):
        with pytest.raises(GraphProcessError, match="discontinuous"):
            solve_backward_pde(lambda k, h: np.full(np.shape(h), float(k)), 0.1, star_graph, star_tables,
                               star_weights(1.0), SMALL_PDE)

    def test_single_step_stays_on_the_graph(self, star_config):
        rng = np.random.default_rng(0)
        state = GraphPoint(1, -0.001)
        for _ in range(50):
            state = step_graph_diffusion(state, star_config, rng)
            star_config.graph.validate_point(state)

    def test_ensemble_records_occupation(self, star_config):
        result = simulate_graph_diffusion(star_config, GraphPoint(3, 0.5))
        assert result.source == "graph"
        assert sum(result.tallies["occupation"].values()) == pytest.approx(1.0)
        assert result.heights.shape == (1, 200)


class TestHarmonicMean:
    """On the harmonic graph the generator is h f'' + f', so E h_t = h_0 + t."""

    @pytest.fixture
    def config(self, harmonic_graph, harmonic_tables):
        return GraphDiffusionConfig(harmonic_graph, harmonic_tables, {}, dt=1e-3, T=0.5, n_paths=4000, seed=1)

    def test_backward_equation(self, harmonic_graph, harmonic_tables):
        solution = solve_backward_pde(height_function(), 0.5, harmonic_graph, harmonic_tables, {},
                                      PDEGridSpec(n_per_edge=201, dt=0.005))
        assert solution.value_at(GraphPoint(1, 1.0)) == pytest.approx(1.5, abs=0.01)
        frame = solution.to_frame()
        assert list(frame.columns) == ["edge", "h", "f"]

    def test_monte_carlo(self, config):
        (result,) = expectation([height_function()], GraphPoint(1, 1.0), 0.5, config)
        assert result.method == "mc"
        assert abs(result.value - 1.5) <= 4 * result.error + 0.02

    def test_unknown_method(self, config):
        with pytest.raises(GraphProcessError, match="method"):
            expectation([height_function()], GraphPoint(1, 1.0), 0.5, config, method="exact")


def test_graph_function_from_config():
    bump = graph_function({"kind": "bump", "edge": 2, "centre": 0.5, "width": 0.2})
    assert bump(2, np.array([0.5]))[0] == pytest.approx(1.0)
    assert bump(1, np.array([0.5]))[0] == 0.0
    assert graph_function({"kind": "constant", "value": 2.0})(1, np.zeros(3)).tolist() == [2.0, 2.0, 2.0]
    with pytest.raises(GraphProcessError, match="unknown kind"):
        graph_function({"kind": "spline"})


def test_evaluate_on_graph_dispatches_per_edge():
    f = bump_function(2, 0.5, 0.2)
    values = evaluate_on_graph(f, np.array([1, 2, 2]), np.array([0.5, 0.5, 0.9]))
    np.testing.assert_allclose(values, [0.0, 1.0, 0.0])
