"""Reeb graph of a planar Hamiltonian: vertices, edges, projection and metric."""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import networkx as nx
import numpy as np

from .hamiltonian import (
    CriticalPoint,
    LevelCurve,
    ScalarField,
    anchor_on_ray,
    find_critical_points,
    trace_level,
    trace_levels,
    trace_separatrix,
)

logger = logging.getLogger(__name__)

INTERIOR = "interior"
EXTERIOR = "exterior"
INFINITY = "infinity"
ENCODING_GAP = 1.0


class ReebGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Vertex:
    id: int
    kind: str
    value: float
    location: tuple[float, float] | None = None


@dataclass(frozen=True)
class Edge:
    id: int
    vertices: tuple[int, int]  # (lower, upper)
    h_lo: float
    h_hi: float
    anchor_origin: tuple[float, float] | None = None
    anchor_direction: tuple[float, float] | None = None


@dataclass(frozen=True)
class GraphPoint:
    k: int
    h: float


@dataclass
class ReebGraph:
    vertices: dict[int, Vertex]
    edges: dict[int, Edge]
    h_max: float
    hamiltonian: ScalarField | None = None
    lobes: list[LevelCurve] = field(default_factory=list, repr=False)
    signatures: dict[int, tuple[bool, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.skeleton = nx.Graph()
        self.skeleton.add_nodes_from(self.vertices)
        for e in self.edges.values():
            a, b = e.vertices
            weight = e.h_hi - e.h_lo
            if self.skeleton.has_edge(a, b):
                weight = min(weight, self.skeleton[a][b]["weight"])
            self.skeleton.add_edge(a, b, weight=weight)
        self._distances = dict(nx.all_pairs_dijkstra_path_length(self.skeleton, weight="weight"))

    # --- structure -----------------------------------------------------

    @property
    def interior_vertices(self) -> list[Vertex]:
        return [v for v in self.vertices.values() if v.kind == INTERIOR]

    def incident_edges(self, vertex_id: int) -> list[Edge]:
        return [e for e in self.edges.values() if vertex_id in e.vertices]

    def sign(self, edge_id: int, vertex_id: int) -> int:
        """+1 if the vertex is the minimum of H on the edge, -1 if it is the maximum."""
        e = self.edges[edge_id]
        if vertex_id not in e.vertices:
            raise ReebGraphError(f"edge {edge_id}: vertex {vertex_id} is not an endpoint")
        return 1 if e.vertices[0] == vertex_id else -1

    def interior_end(self, edge_id: int) -> Vertex | None:
        for vid in self.edges[edge_id].vertices:
            if self.vertices[vid].kind == INTERIOR:
                return self.vertices[vid]
        return None

    def validate_point(self, point: GraphPoint, tol: float = 1e-12) -> None:
        if point.k not in self.edges:
            raise ReebGraphError(f"graph point: unknown edge {point.k}")
        e = self.edges[point.k]
        if not (e.h_lo - tol <= point.h <= e.h_hi + tol):
            raise ReebGraphError(f"graph point: h={point.h} outside edge {point.k} range [{e.h_lo}, {e.h_hi}]")

    # --- geometry ------------------------------------------------------

    def _require_field(self) -> ScalarField:
        if self.hamiltonian is None:
            raise ReebGraphError("graph has no Hamiltonian attached; geometry operations are unavailable")
        return self.hamiltonian

    def anchor(self, edge_id: int, h: float) -> np.ndarray:
        e = self.edges[edge_id]
        if e.anchor_origin is None:
            raise ReebGraphError(f"edge {edge_id}: no anchor ray recorded")
        return anchor_on_ray(self._require_field(), e.anchor_origin, e.anchor_direction, h)

    def level_curve(self, edge_id: int, h: float, **trace_kwargs) -> LevelCurve:
        e = self.edges[edge_id]
        if not (e.h_lo < h < e.h_hi):
            raise ReebGraphError(f"edge {edge_id}: h={h} not strictly inside ({e.h_lo}, {e.h_hi})")
        return trace_level(self._require_field(), self.anchor(edge_id, h), h, edge=edge_id, **trace_kwargs)

    def level_curves(self, edge_id: int, hs: Sequence[float], **trace_kwargs) -> list[LevelCurve]:
        e = self.edges[edge_id]
        hs = [float(h) for h in hs]
        top_regular = self.vertices[e.vertices[1]].kind == INFINITY
        outside = [h for h in hs if not (e.h_lo < h < e.h_hi or (top_regular and h == e.h_hi))]
        if outside:
            raise ReebGraphError(f"edge {edge_id}: heights {outside[:3]} outside ({e.h_lo}, {e.h_hi}]")
        anchors = [self.anchor(edge_id, h) for h in hs]
        return trace_levels(self._require_field(), anchors, hs, edge=edge_id, **trace_kwargs)

    def signature(self, x1, x2) -> np.ndarray:
        """Lobe containment booleans, shape (n_points, n_lobes)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        if not self.lobes:
            return np.zeros((x1.size, 0), dtype=bool)
        return np.stack([lobe.contains(x1, x2) for lobe in self.lobes], axis=1)

    def project_many(self, x1, x2) -> tuple[np.ndarray, np.ndarray]:
        """Edge ids and heights for arrays of plane points."""
        hamiltonian = self._require_field()
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        h = np.asarray(hamiltonian(x1, x2), dtype=float)
        edges = np.full(h.shape, -1, dtype=np.int64)
        ids = sorted(self.edges)
        lo = np.array([self.edges[k].h_lo for k in ids])
        hi = np.array([self.edges[k].h_hi for k in ids])
        candidates = (h[:, None] >= lo[None, :]) & (h[:, None] <= hi[None, :])
        count = candidates.sum(axis=1)
        single = count == 1
        edges[single] = np.asarray(ids)[np.argmax(candidates[single], axis=1)]
        ambiguous = np.flatnonzero(count > 1)
        if ambiguous.size:
            sig = self.signature(x1[ambiguous], x2[ambiguous])
            for row, idx in enumerate(ambiguous):
                edges[idx] = self._match_signature(sig[row], candidates[idx], ids, x1[idx], x2[idx])
        missing = np.flatnonzero(edges < 0)
        if missing.size:
            i = missing[0]
            raise ReebGraphError(f"project: point ({x1[i]:.6g}, {x2[i]:.6g}) with H={h[i]:.6g} is outside all regions")
        return edges, h

    def _match_signature(self, sig, candidate_mask, ids, x1, x2) -> int:
        options = [k for k, ok in zip(ids, candidate_mask) if ok]
        exact = [k for k in options if k in self.signatures and tuple(self.signatures[k]) == tuple(sig)]
        if len(exact) == 1:
            return exact[0]
        pool = exact or options

        def score(k: int) -> tuple[int, float]:
            ref = self.signatures.get(k)
            mismatch = len(sig) if ref is None else int(np.sum(np.asarray(ref) != sig))
            return mismatch, self._distance_to_extremum(k, x1, x2)

        return min(pool, key=score)

    def _distance_to_extremum(self, edge_id: int, x1: float, x2: float) -> float:
        for vid in self.edges[edge_id].vertices:
            v = self.vertices[vid]
            if v.kind == EXTERIOR and v.location is not None:
                return math.hypot(x1 - v.location[0], x2 - v.location[1])
        return math.inf

    def project(self, x) -> GraphPoint:
        edges, h = self.project_many([x[0]], [x[1]])
        return GraphPoint(int(edges[0]), float(h[0]))

    # --- metric --------------------------------------------------------

    def distance(self, p1: GraphPoint, p2: GraphPoint) -> float:
        self.validate_point(p1)
        self.validate_point(p2)
        best = abs(p1.h - p2.h) if p1.k == p2.k else math.inf
        for a in self.edges[p1.k].vertices:
            for b in self.edges[p2.k].vertices:
                d = self._distances[a].get(b)
                if d is None:
                    continue
                va, vb = self._vertex_height(a), self._vertex_height(b)
                best = min(best, abs(p1.h - va) + d + abs(vb - p2.h))
        return best

    def _vertex_height(self, vertex_id: int) -> float:
        v = self.vertices[vertex_id]
        return self.h_max if v.kind == INFINITY else v.value

    # --- encodings and serialization ------------------------------------

    def encoding_offsets(self) -> dict[int, tuple[float, int, float]]:
        """Per edge: (reference height, orientation, block offset) of the signed-height encoding."""
        interior = self.interior_vertices
        layout: dict[int, tuple[float, int, float]] = {}
        if not interior:
            offset = 0.0
            for k in sorted(self.edges):
                e = self.edges[k]
                layout[k] = (e.h_lo, 1, offset)
                offset += (e.h_hi - e.h_lo) + ENCODING_GAP
            return layout
        ref = interior[0]
        below = 0.0
        above = 0.0
        for e in sorted(self.incident_edges(ref.id), key=lambda e: e.id):
            width = e.h_hi - e.h_lo
            if self.sign(e.id, ref.id) < 0:
                layout[e.id] = (ref.value, 1, -below)
                below += width + ENCODING_GAP
            else:
                layout[e.id] = (ref.value, 1, above)
                above += width + ENCODING_GAP
        for k in sorted(self.edges):
            if k in layout:
                continue
            e = self.edges[k]
            layout[k] = (e.h_lo, 1, above)
            above += (e.h_hi - e.h_lo) + ENCODING_GAP
        return layout

    def signed_height_encoding(self, edges: Sequence[int], heights: Sequence[float]) -> np.ndarray:
        """Real line image of graph points; blocks keep the order by distance to the vertex."""
        layout = self.encoding_offsets()
        edges = np.asarray(edges, dtype=np.int64)
        heights = np.asarray(heights, dtype=float)
        out = np.empty(heights.shape)
        for k, (ref, orientation, offset) in layout.items():
            mask = edges == k
            out[mask] = orientation * (heights[mask] - ref) + offset
        unknown = ~np.isin(edges, list(layout))
        if np.any(unknown):
            raise ReebGraphError(f"encoding: unknown edge ids {sorted(set(edges[unknown].tolist()))}")
        return out

    def to_dict(self) -> dict:
        return {
            "h_max": self.h_max,
            "vertices": [
                {"id": v.id, "kind": v.kind, "value": v.value, "location": v.location}
                for v in sorted(self.vertices.values(), key=lambda v: v.id)
            ],
            "edges": [
                {
                    "id": e.id,
                    "vertices": list(e.vertices),
                    "h_lo": e.h_lo,
                    "h_hi": e.h_hi,
                    "signs": {str(vid): self.sign(e.id, vid) for vid in e.vertices},
                    "anchor_origin": e.anchor_origin,
                    "anchor_direction": e.anchor_direction,
                }
                for e in sorted(self.edges.values(), key=lambda e: e.id)
            ],
        }

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any], hamiltonian: ScalarField | None = None) -> "ReebGraph":
        """Graph from a vertex/edge listing; h-ranges come from the vertex values."""
        try:
            h_max = float(spec["h_max"])
            vertices = {}
            for item in spec["vertices"]:
                loc = item.get("location")
                vertices[int(item["id"])] = Vertex(
                    int(item["id"]), str(item["kind"]), float(item.get("value", h_max)),
                    tuple(loc) if loc is not None else None,
                )
            edges = {}
            for item in spec["edges"]:
                a, b = (int(v) for v in item["vertices"])
                ha = h_max if vertices[a].kind == INFINITY else vertices[a].value
                hb = h_max if vertices[b].kind == INFINITY else vertices[b].value
                if hb < ha:
                    a, b, ha, hb = b, a, hb, ha
                origin = item.get("anchor_origin")
                direction = item.get("anchor_direction")
                edges[int(item["id"])] = Edge(
                    int(item["id"]), (a, b), ha, hb,
                    tuple(origin) if origin is not None else None,
                    tuple(direction) if direction is not None else None,
                )
        except (KeyError, TypeError, ValueError) as e:
            raise ReebGraphError(f"graph spec: {e}") from e
        for e in edges.values():
            if e.h_hi <= e.h_lo:
                raise ReebGraphError(f"edge {e.id}: empty h-range [{e.h_lo}, {e.h_hi}]")
        return cls(vertices, edges, h_max, hamiltonian)

    from_dict = from_spec


def _region_samples(criticals: Sequence[CriticalPoint]) -> list[tuple[int, np.ndarray]]:
    samples: list[tuple[int, np.ndarray]] = []
    for idx, c in enumerate(criticals):
        if c.kind != "saddle":
            samples.append((idx, c.point))
            continue
        others = [np.hypot(*(c.point - o.point)) for o in criticals if o is not c]
        radius = min([0.05] + [0.1 * d for d in others])
        for vec in c.eigenvectors:
            v = np.asarray(vec)
            samples.append((idx, c.point + radius * v))
            samples.append((idx, c.point - radius * v))
    return samples


def build_reeb(criticals: Sequence[CriticalPoint], hamiltonian: ScalarField, h_max: float = 4.0) -> ReebGraph:
    """One edge per connected region of the plane cut along the separatrices."""
    if not criticals:
        raise ReebGraphError("criticals: at least one critical point is required")
    top = max(c.value for c in criticals)
    if h_max <= top:
        raise ReebGraphError(f"h_max: {h_max} must exceed the largest critical value {top}")
    saddles = [c for c in criticals if c.kind == "saddle"]
    saddle_values = [s.value for s in saddles]
    if len(set(np.round(saddle_values, 12))) != len(saddle_values):
        raise ReebGraphError("criticals: two saddles share a critical value")

    lobes: list[LevelCurve] = []
    for s in saddles:
        lobes.extend(trace_separatrix(hamiltonian, s))

    probe = ReebGraph({}, {}, h_max, hamiltonian, lobes)
    regions: dict[tuple[bool, ...], set[int]] = {}
    sample_points: dict[tuple[bool, ...], list[tuple[int, np.ndarray]]] = {}
    for idx, point in _region_samples(criticals):
        sig = tuple(bool(b) for b in probe.signature(point[0], point[1])[0])
        regions.setdefault(sig, set()).add(idx)
        sample_points.setdefault(sig, []).append((idx, point))

    top_point = max(criticals, key=lambda c: c.value).point
    far = anchor_on_ray(hamiltonian, top_point, (1.0, 1.0), 0.5 * (top + h_max))
    inf_sig = tuple(bool(b) for b in probe.signature(far[0], far[1])[0])
    infinity_id = len(criticals)
    regions.setdefault(inf_sig, set()).add(infinity_id)

    vertices: dict[int, Vertex] = {}
    for idx, c in enumerate(criticals):
        kind = INTERIOR if c.kind == "saddle" else EXTERIOR
        vertices[idx] = Vertex(idx, kind, c.value, c.location)
    vertices[infinity_id] = Vertex(infinity_id, INFINITY, h_max, None)

    pending = []
    for sig, members in regions.items():
        if len(members) != 2:
            raise ReebGraphError(
                f"topology: region with signature {sig} touches {len(members)} vertices {sorted(members)}, expected 2"
            )
        a, b = sorted(members, key=lambda vid: (vertices[vid].value, vid))
        pending.append((sig, a, b))

    def sort_key(item):
        sig, a, b = item
        lo_v = vertices[a]
        x = lo_v.location[0] if lo_v.location else math.inf
        return vertices[a].value, vertices[b].value, x

    edges: dict[int, Edge] = {}
    signatures: dict[int, tuple[bool, ...]] = {}
    for edge_id, (sig, a, b) in enumerate(sorted(pending, key=sort_key), start=1):
        origin, direction = _anchor_rule(criticals, vertices, a, b, sample_points.get(sig, []))
        edges[edge_id] = Edge(edge_id, (a, b), vertices[a].value, vertices[b].value, origin, direction)
        signatures[edge_id] = sig

    graph = ReebGraph(vertices, edges, h_max, hamiltonian, lobes, signatures)
    logger.info(
        "Built Reeb graph: %d vertices, %d edges, %d interior", len(vertices), len(edges), len(graph.interior_vertices)
    )
    return graph


def _anchor_rule(criticals, vertices, a: int, b: int, samples) -> tuple[tuple, tuple]:
    """Ray whose first crossing of level h lies on the edge's level component."""
    for vid, other in ((a, b), (b, a)):
        v = vertices[vid]
        if v.kind == EXTERIOR:
            origin = np.asarray(v.location)
            other_v = vertices[other]
            if other_v.location is not None:
                direction = origin - np.asarray(other_v.location)
            else:
                direction = np.array([1.0, 0.0])
            return tuple(origin.tolist()), tuple((direction / np.hypot(*direction)).tolist())
    # lower endpoint is a saddle: leave it along the sector sample lying in this region
    saddle = criticals[a]
    for idx, point in samples:
        if idx == a:
            direction = point - saddle.point
            if _quadratic(saddle, direction) > 0.0:
                return tuple(saddle.point.tolist()), tuple((direction / np.hypot(*direction)).tolist())
    raise ReebGraphError(f"edge ({a}, {b}): no ascending sector sample found for the anchor ray")


def _quadratic(c: CriticalPoint, direction: np.ndarray) -> float:
    (l_neg, l_pos) = c.eigenvalues
    v_neg = np.asarray(c.eigenvectors[0])
    v_pos = np.asarray(c.eigenvectors[1])
    return 0.5 * (l_neg * float(direction @ v_neg) ** 2 + l_pos * float(direction @ v_pos) ** 2)


def build_from_model(
    hamiltonian: ScalarField,
    h_max: float = 4.0,
    box: Sequence[float] = (-3.0, 3.0, -3.0, 3.0),
    seeds_per_axis: int = 15,
) -> ReebGraph:
    return build_reeb(find_critical_points(hamiltonian, tuple(box), seeds_per_axis), hamiltonian, h_max)
