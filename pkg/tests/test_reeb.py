import numpy as np
import pytest

from reeb_diffusion.reeb import EXTERIOR, INFINITY, INTERIOR, GraphPoint, ReebGraph, ReebGraphError


class TestDumbbellGraph:
    def test_structure(self, dumbbell_graph):
        g = dumbbell_graph
        assert len(g.vertices) == 4
        assert sorted(g.edges) == [1, 2, 3]
        assert sorted(v.kind for v in g.vertices.values()) == sorted([EXTERIOR, EXTERIOR, INTERIOR, INFINITY])
        (saddle,) = g.interior_vertices
        assert saddle.value == pytest.approx(0.25)
        assert g.sign(1, saddle.id) == -1
        assert g.sign(2, saddle.id) == -1
        assert g.sign(3, saddle.id) == 1
        assert g.edges[3].h_hi == g.h_max

    def test_well_edges_are_numbered_left_to_right(self, dumbbell_graph):
        g = dumbbell_graph
        left = g.vertices[g.edges[1].vertices[0]]
        right = g.vertices[g.edges[2].vertices[0]]
        assert left.location[0] < 0 < right.location[0]

    def test_projection_picks_the_component(self, dumbbell_graph):
        g = dumbbell_graph
        assert g.project((1.0, 0.3)) == GraphPoint(2, pytest.approx(0.045))
        assert g.project((-1.0, 0.3)).k == 1
        assert g.project((0.0, 1.0)) == GraphPoint(3, pytest.approx(0.5))

    def test_projection_agrees_with_anchors(self, dumbbell_graph):
        g = dumbbell_graph
        for k, h in [(1, 0.05), (2, 0.2), (3, 0.6), (3, 2.5)]:
            point = g.project(g.anchor(k, h))
            assert point.k == k
            assert point.h == pytest.approx(h, abs=1e-10)

    def test_projection_outside_the_domain_is_an_error(self, dumbbell_graph):
        with pytest.raises(ReebGraphError, match="outside all regions"):
            dumbbell_graph.project((3.0, 0.0))

    def test_distance_passes_through_the_saddle(self, dumbbell_graph):
        g = dumbbell_graph
        assert g.distance(GraphPoint(1, 0.1), GraphPoint(2, 0.1)) == pytest.approx(0.3)
        assert g.distance(GraphPoint(3, 1.0), GraphPoint(2, 0.1)) == pytest.approx(0.9)
        assert g.distance(GraphPoint(1, 0.05), GraphPoint(1, 0.2)) == pytest.approx(0.15)

    def test_signed_height_encoding_is_injective_off_the_vertex(self, dumbbell_graph):
        g = dumbbell_graph
        edges, heights = [], []
        for k in (1, 2):
            edges += [k] * 20
            heights += np.linspace(0.01, 0.24, 20).tolist()
        edges += [3] * 20
        heights += np.linspace(0.26, 3.9, 20).tolist()
        codes = g.signed_height_encoding(edges, heights)
        assert len(np.unique(codes)) == len(codes)
        with pytest.raises(ReebGraphError, match="unknown edge"):
            g.signed_height_encoding([9], [0.1])

    def test_round_trip_through_spec(self, dumbbell_graph):
        restored = ReebGraph.from_spec(dumbbell_graph.to_dict())
        assert sorted(restored.edges) == sorted(dumbbell_graph.edges)
        for k, e in dumbbell_graph.edges.items():
            assert restored.edges[k].vertices == e.vertices
            assert restored.edges[k].h_lo == pytest.approx(e.h_lo)
            assert restored.edges[k].h_hi == pytest.approx(e.h_hi)
        with pytest.raises(ReebGraphError, match="no Hamiltonian"):
            restored.project((0.0, 0.0))

    def test_level_curve_rejects_heights_off_the_edge(self, dumbbell_graph):
        with pytest.raises(ReebGraphError, match="not strictly inside"):
            dumbbell_graph.level_curve(1, 0.3)

    def test_validate_point(self, dumbbell_graph):
        with pytest.raises(ReebGraphError, match="unknown edge"):
            dumbbell_graph.validate_point(GraphPoint(7, 0.1))
        with pytest.raises(ReebGraphError, match="outside edge"):
            dumbbell_graph.validate_point(GraphPoint(1, 0.5))


def test_harmonic_graph_is_a_single_edge(harmonic_graph):
    assert list(harmonic_graph.edges) == [1]
    e = harmonic_graph.edges[1]
    assert harmonic_graph.vertices[e.vertices[0]].kind == EXTERIOR
    assert harmonic_graph.vertices[e.vertices[1]].kind == INFINITY
    assert harmonic_graph.interior_vertices == []


def test_from_spec_rejects_empty_edge():
    spec = {
        "h_max": 1.0,
        "vertices": [{"id": 0, "kind": "exterior", "value": 1.0}, {"id": 1, "kind": "infinity"}],
        "edges": [{"id": 1, "vertices": [0, 1]}],
    }
    with pytest.raises(ReebGraphError, match="empty h-range"):
        ReebGraph.from_spec(spec)


def test_from_spec_reports_missing_fields():
    with pytest.raises(ReebGraphError, match="graph spec"):
        ReebGraph.from_spec({"vertices": []})
