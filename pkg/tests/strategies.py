"""Hypothesis strategies and the property-case counter."""

from __future__ import annotations

import functools
import math

import numpy as np
from hypothesis import strategies as st

from topometric.topograph import EdgeKind, MapGraph, Segment

CASES = {"count": 0}


def counted(fn):
    """Count every executed example so the suite can report its total."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        CASES["count"] += 1
        return fn(*args, **kwargs)

    return wrapper


def _segment(frame: int, local: int, instance: int = 0) -> Segment:
    return Segment(frame, local, instance, (10.0 + local, 10.0), 60)


@st.composite
def map_graphs(draw, max_nodes: int = 12):
    """Random map graphs whose edge kinds follow the frame rule."""
    n = draw(st.integers(1, max_nodes))
    frames = sorted(draw(st.lists(st.integers(0, 4), min_size=n, max_size=n)))
    remap = {f: k for k, f in enumerate(sorted(set(frames)))}
    frames = [remap[f] for f in frames]
    nodes = []
    local = {}
    for f in frames:
        local[f] = local.get(f, -1) + 1
        nodes.append(_segment(f, local[f]))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    edges = []
    for i, j in sorted(chosen):
        kind = EdgeKind.INTRA if frames[i] == frames[j] else EdgeKind.INTER
        edges.append((i, j, kind))
    goal = draw(st.integers(0, n - 1))
    return MapGraph(nodes, edges), goal


@st.composite
def bool_grids(draw, rows: int, cols: int, p_blocked: float = 0.3):
    seed = draw(st.integers(0, 2**32 - 1))
    p = draw(st.floats(0.0, p_blocked))
    rng = np.random.default_rng(seed)
    return rng.random((rows, cols)) >= p


finite_costs = st.floats(-50.0, 50.0, allow_nan=False, allow_infinity=False)
angles = st.floats(-4 * math.pi, 4 * math.pi, allow_nan=False)


def random_map_graph(rng: np.random.Generator, max_nodes: int = 12,
                     density: tuple[float, float] = (0.1, 0.4)) -> tuple[MapGraph, int]:
    """Seeded counterpart of ``map_graphs`` for fixed-count batches."""
    n = int(rng.integers(1, max_nodes + 1))
    frames = np.sort(rng.integers(0, 5, size=n))
    remap = {f: k for k, f in enumerate(sorted(set(frames.tolist())))}
    frames = [remap[int(f)] for f in frames]
    local: dict[int, int] = {}
    nodes = []
    for f in frames:
        local[f] = local.get(f, -1) + 1
        nodes.append(_segment(f, local[f]))
    p = rng.uniform(*density)
    edges = [(i, j, EdgeKind.INTRA if frames[i] == frames[j] else EdgeKind.INTER)
             for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return MapGraph(nodes, edges), int(rng.integers(0, n))
