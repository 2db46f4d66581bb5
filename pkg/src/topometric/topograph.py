"""Object-level topological map: segments as nodes, intra/inter-image edges.

Intra-image edges come from a Delaunay triangulation of segment centroids
and cost one hop; inter-image edges join segments of the same object seen
in different frames and cost nothing. Goal costs are single-source
shortest paths over those 0/1 weights.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, QhullError

from .simworld import Observation

MAPGRAPH_FORMAT = "topometric-mapgraph v1"


@dataclass(frozen=True, eq=False)
class Segment:
    frame_index: int
    local_id: int
    instance_id: int
    centroid_px: tuple[float, float]
    area_px: int
    pixel_runs: np.ndarray | None = None  # (n, 3) rows of (row, col_start, col_stop)

    def pixels(self) -> tuple[np.ndarray, np.ndarray]:
        if self.pixel_runs is None:
            raise ValueError("segment was loaded without pixel data")
        runs = self.pixel_runs
        lengths = runs[:, 2] - runs[:, 1]
        rows = np.repeat(runs[:, 0], lengths)
        starts = np.repeat(runs[:, 1] - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
        cols = starts + np.arange(int(lengths.sum()))
        return rows, cols

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        r, c = self.pixels()
        out[r, c] = True
        return out


def _runs(mask: np.ndarray, row0: int, col0: int) -> np.ndarray:
    padded = np.pad(mask.astype(np.int8), ((0, 0), (1, 1)))
    d = np.diff(padded, axis=1)
    sr, sc = np.nonzero(d == 1)
    _, ec = np.nonzero(d == -1)
    return np.stack([sr + row0, sc + col0, ec + col0], axis=1).astype(np.int32)


def extract_segments(obs: Observation, min_area: int = 50, frame_index: int = 0) -> list[Segment]:
    """One segment per 4-connected component of equal instance id."""
    img = obs.instance_image
    segments: list[Segment] = []
    for inst in np.unique(img).tolist():
        labels, n = ndimage.label(img == inst)
        if n == 0:
            continue
        slices = ndimage.find_objects(labels)
        for k, sl in enumerate(slices, start=1):
            comp = labels[sl] == k
            area = int(comp.sum())
            if area < min_area:
                continue
            rr, cc = np.nonzero(comp)
            centroid = (float(cc.mean() + sl[1].start + 0.5), float(rr.mean() + sl[0].start + 0.5))
            segments.append(Segment(frame_index, len(segments), int(inst), centroid, area,
                                    _runs(comp, sl[0].start, sl[1].start)))
    return segments


def _path_edges(points: np.ndarray, ids: Sequence[int]) -> list[tuple[int, int]]:
    order = sorted(range(len(ids)), key=lambda k: (points[k][0], points[k][1], ids[k]))
    return [(ids[order[k]], ids[order[k + 1]]) for k in range(len(order) - 1)]


def delaunay_intra_edges(segments: Sequence[Segment]) -> list[tuple[int, int]]:
    """Delaunay edges between segment centroids, as sorted index pairs.

    Fewer than three distinct centroids, or collinear ones, fall back to a
    path through the lexicographically sorted points. Segments sharing a
    centroid hang off the first segment at that point.
    """
    n = len(segments)
    if n < 2:
        return []
    pts = np.array([s.centroid_px for s in segments], dtype=float)
    reps: dict[tuple[float, float], int] = {}
    dup_edges: set[tuple[int, int]] = set()
    uniq: list[int] = []
    for i, p in enumerate(map(tuple, pts)):
        if p in reps:
            dup_edges.add((reps[p], i))
        else:
            reps[p] = i
            uniq.append(i)
    upts = pts[uniq]
    edges: set[tuple[int, int]] = set()
    centered = upts - upts.mean(axis=0)
    collinear = len(uniq) < 3 or np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max())) < 2
    if collinear:
        edges.update(_path_edges(upts, uniq))
    else:
        try:
            tri = Delaunay(upts)
        except QhullError:
            edges.update(_path_edges(upts, uniq))
        else:
            for simplex in tri.simplices:
                a, b, c = (uniq[k] for k in simplex)
                edges.update({(a, b), (b, c), (a, c)})
            used = set(np.unique(tri.simplices).tolist())
            for k in range(len(uniq)):
                if k not in used:
                    d = np.hypot(*(upts[sorted(used)] - upts[k]).T)
                    edges.add((uniq[k], uniq[sorted(used)[int(np.argmin(d))]]))
    edges.update(dup_edges)
    return sorted({(min(a, b), max(a, b)) for a, b in edges})


class AssociationMode(enum.Enum):
    GROUND_TRUTH = "ground_truth"
    NOISY = "noisy"


@dataclass(frozen=True)
class AssociationModel:
    """Segment matcher: exact instance-id matching, optionally corrupted.

    ``stuff_ids`` are amorphous surfaces (floor, ceiling) that carry no
    stable identity and are never matched.
    """

    mode: AssociationMode = AssociationMode.GROUND_TRUTH
    p_drop: float = 0.0
    p_swap: float = 0.0
    rng_seed: int = 0
    stuff_ids: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        for p in (self.p_drop, self.p_swap):
            if not 0.0 <= p <= 1.0:
                raise ValueError("association probabilities must lie in [0, 1]")
        if self.mode is AssociationMode.GROUND_TRUTH and (self.p_drop or self.p_swap):
            raise ValueError("ground-truth association cannot drop or swap matches")


def _gt_pairs(frame_a: Sequence[Segment], frame_b: Sequence[Segment],
              stuff: frozenset[int]) -> list[tuple[int, int]]:
    def groups(frame):
        out: dict[int, list[int]] = {}
        for i, s in enumerate(frame):
            if s.instance_id not in stuff:
                out.setdefault(s.instance_id, []).append(i)
        for ids in out.values():
            ids.sort(key=lambda i: (-frame[i].area_px, frame[i].local_id))
        return out

    ga, gb = groups(frame_a), groups(frame_b)
    pairs = []
    for inst in sorted(set(ga) & set(gb)):
        pairs.extend(zip(ga[inst], gb[inst]))
    return sorted(pairs)


def associate(frame_a: Sequence[Segment], frame_b: Sequence[Segment], model: AssociationModel,
              key: Sequence[int] = ()) -> list[tuple[int, int]]:
    """Partial matching between two frames' segments as ``(a_idx, b_idx)`` pairs.

    Noisy mode draws from a generator seeded by ``(rng_seed, *key)``, so a
    given frame pair always receives the same corruption.
    """
    pairs = _gt_pairs(frame_a, frame_b, model.stuff_ids)
    if model.mode is AssociationMode.GROUND_TRUTH:
        return pairs
    rng = np.random.default_rng([model.rng_seed, *[int(k) & 0xFFFFFFFF for k in key]])
    eligible = [j for j, s in enumerate(frame_b) if s.instance_id not in model.stuff_ids]
    out = []
    used: set[int] = set()
    for a, b in pairs:
        u_drop, u_swap, u_pick = rng.random(3)
        if u_drop < model.p_drop:
            continue
        if u_swap < model.p_swap:
            others = [j for j in eligible if j != b]
            if others:
                b = others[min(int(u_pick * len(others)), len(others) - 1)]
        if b in used:
            continue
        used.add(b)
        out.append((a, b))
    return out


class EdgeKind(enum.Enum):
    INTRA = "intra"
    INTER = "inter"

    @property
    def weight(self) -> int:
        return 1 if self is EdgeKind.INTRA else 0


@dataclass(eq=False)
class MapGraph:
    nodes: list[Segment]
    edges: list[tuple[int, int, EdgeKind]]
    goal_node: int | None = None
    frame_offsets: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.frame_offsets:
            frames = sorted({n.frame_index for n in self.nodes})
            counts = [sum(1 for n in self.nodes if n.frame_index == f) for f in frames]
            self.frame_offsets = [0] + np.cumsum(counts).tolist()

    @property
    def frame_count(self) -> int:
        return len(self.frame_offsets) - 1

    def frame_nodes(self, t: int) -> range:
        return range(self.frame_offsets[t], self.frame_offsets[t + 1])

    def frame_segments(self, t: int) -> list[Segment]:
        return self.nodes[self.frame_offsets[t]:self.frame_offsets[t + 1]]

    def adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for i, j, kind in self.edges:
            adj[i].append((j, kind.weight))
            adj[j].append((i, kind.weight))
        return adj

    def nodes_of_instance(self, instance_id: int) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.instance_id == instance_id]

    def check_invariants(self) -> None:
        seen = set()
        for i, j, kind in self.edges:
            assert i != j, "self-loop"
            key = (min(i, j), max(i, j))
            assert key not in seen, "duplicate edge"
            seen.add(key)
            same = self.nodes[i].frame_index == self.nodes[j].frame_index
            assert same == (kind is EdgeKind.INTRA), f"edge {key} has the wrong kind"

    def to_text(self) -> str:
        lines = [
            MAPGRAPH_FORMAT,
            f"frames {self.frame_count}",
            f"goal {'-' if self.goal_node is None else self.goal_node}",
            f"nodes {len(self.nodes)}",
        ]
        for k, n in enumerate(self.nodes):
            u, v = n.centroid_px
            lines.append(f"node {k} {n.frame_index} {n.local_id} {n.instance_id} {u!r} {v!r} {n.area_px}")
        lines.append(f"edges {len(self.edges)}")
        for i, j, kind in self.edges:
            lines.append(f"edge {i} {j} {kind.value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> MapGraph:
        lines = text.splitlines()
        if not lines or lines[0] != MAPGRAPH_FORMAT:
            raise ValueError("not a topometric map graph (or unsupported version)")
        goal = lines[2].split()[1]
        count = int(lines[3].split()[1])
        nodes = []
        for line in lines[4:4 + count]:
            _, _, f, loc, inst, u, v, area = line.split()
            nodes.append(Segment(int(f), int(loc), int(inst), (float(u), float(v)), int(area)))
        n_edges = int(lines[4 + count].split()[1])
        edges = []
        for line in lines[5 + count:5 + count + n_edges]:
            _, i, j, kind = line.split()
            edges.append((int(i), int(j), EdgeKind(kind)))
        return cls(nodes, edges, None if goal == "-" else int(goal))


def build_map(frames: Sequence[Observation], assoc: AssociationModel, window: int = 1,
              min_area: int = 50) -> MapGraph:
    """Build the map graph from an ordered frame sequence."""
    if not frames:
        raise ValueError("need at least one frame")
    per_frame = [extract_segments(obs, min_area, t) for t, obs in enumerate(frames)]
    return build_map_from_segments(per_frame, assoc, window)


def build_map_from_segments(per_frame: Sequence[Sequence[Segment]], assoc: AssociationModel,
                            window: int = 1) -> MapGraph:
    nodes: list[Segment] = []
    offsets = [0]
    for segs in per_frame:
        nodes.extend(segs)
        offsets.append(len(nodes))
    edges: dict[tuple[int, int], EdgeKind] = {}
    for t, segs in enumerate(per_frame):
        base = offsets[t]
        for i, j in delaunay_intra_edges(segs):
            edges[(base + i, base + j)] = EdgeKind.INTRA
    for t in range(len(per_frame)):
        for k in range(1, window + 1):
            if t + k >= len(per_frame):
                break
            for a, b in associate(per_frame[t], per_frame[t + k], assoc, key=(t, t + k)):
                edges[(offsets[t] + a, offsets[t + k] + b)] = EdgeKind.INTER
    ordered = [(i, j, kind) for (i, j), kind in sorted(edges.items())]
    return MapGraph(nodes, ordered, None, offsets)


@dataclass
class GoalCostField:
    goal_node: int
    cost: list[int | None]

    def reachable(self, node: int) -> bool:
        return self.cost[node] is not None

    def __getitem__(self, node: int) -> int | None:
        return self.cost[node]


def compute_goal_costs(graph: MapGraph, goal_node: int) -> GoalCostField:
    """Exact shortest hop counts to ``goal_node`` under 0/1 edge weights (deque search)."""
    n = len(graph.nodes)
    if not 0 <= goal_node < n:
        raise IndexError(f"goal node {goal_node} out of range")
    adj = graph.adjacency()
    dist = [math.inf] * n
    dist[goal_node] = 0
    dq = deque([goal_node])
    while dq:
        u = dq.popleft()
        for v, w in adj[u]:
            nd = dist[u] + w
            if nd < dist[v]:
                dist[v] = nd
                if w == 0:
                    dq.appendleft(v)
                else:
                    dq.append(v)
    return GoalCostField(goal_node, [None if math.isinf(d) else int(d) for d in dist])


def goal_node_for(graph: MapGraph, instance_id: int, frames: Iterable[int] | None = None) -> int:
    """Largest-area node of ``instance_id``, preferring the latest frame it appears in."""
    allowed = None if frames is None else set(frames)
    cands = [i for i in graph.nodes_of_instance(instance_id)
             if allowed is None or graph.nodes[i].frame_index in allowed]
    if not cands:
        raise KeyError(f"instance {instance_id} is not in the map")
    return max(cands, key=lambda i: (graph.nodes[i].frame_index, graph.nodes[i].area_px, -i))
