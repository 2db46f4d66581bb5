"""Temporal-window localization against the map and the per-segment sub-goal cost mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .topograph import AssociationModel, GoalCostField, MapGraph, Segment, associate


class LocalizationLost(RuntimeError):
    pass


class NoViableSubgoal(RuntimeError):
    pass


@dataclass(frozen=True)
class LocalizationState:
    ref_index: int = 0
    window_radius: int = 3

    def __post_init__(self) -> None:
        if self.ref_index < 0:
            raise ValueError("ref_index must be non-negative")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")


def localize(query: Sequence[Segment], graph: MapGraph, state: LocalizationState,
             assoc: AssociationModel, key: Sequence[int] = ()
             ) -> tuple[LocalizationState, list[tuple[int, int]]]:
    """Match the live frame against map frames within the window around ``state.ref_index``.

    Returns the new state and ``(query_idx, map_node)`` correspondences: all
    matches to the winning frame plus those to its immediate neighbours.
    """
    frames = graph.frame_count
    if frames == 0:
        raise ValueError("map is empty")
    ref = min(state.ref_index, frames - 1)
    lo = max(0, ref - state.window_radius)
    hi = min(frames - 1, ref + state.window_radius)
    matches: dict[int, list[tuple[int, int]]] = {}
    for t in range(lo, hi + 1):
        base = graph.frame_offsets[t]
        pairs = associate(query, graph.frame_segments(t), assoc, key=(*key, t))
        matches[t] = [(q, base + m) for q, m in pairs]
    best = max(range(lo, hi + 1), key=lambda t: (len(matches[t]), -abs(t - ref), -t))
    if not matches[best]:
        raise LocalizationLost(f"no matches in map frames {lo}..{hi}")
    corr = set(matches[best])
    for t in (best - 1, best + 1):
        if lo <= t <= hi:
            corr.update(matches[t])
    return LocalizationState(best, state.window_radius), sorted(corr)


@dataclass(frozen=True)
class SubGoalEntry:
    query_segment: Segment
    matched_map_node: int | None
    raw_cost: float
    norm_cost: float


@dataclass(frozen=True)
class SubGoalMask:
    entries: tuple[SubGoalEntry, ...]
    best: int

    @property
    def best_entry(self) -> SubGoalEntry:
        return self.entries[self.best]


def mask_from_costs(items: Iterable[tuple[Segment, int | None, float]]) -> SubGoalMask:
    """Min-max normalise raw costs and pick the best entry.

    Ties on the minimum raw cost go to the larger segment, then the lower
    local id.
    """
    items = list(items)
    if not items:
        raise NoViableSubgoal("no segment has a finite goal cost")
    raws = [float(r) for _, _, r in items]
    lo, hi = min(raws), max(raws)
    span = hi - lo
    entries = tuple(
        SubGoalEntry(seg, node, raw, 0.0 if span == 0 else (raw - lo) / span)
        for (seg, node, _), raw in zip(items, raws)
    )
    best = min(range(len(entries)),
               key=lambda k: (entries[k].raw_cost, -entries[k].query_segment.area_px,
                              entries[k].query_segment.local_id))
    return SubGoalMask(entries, best)


def subgoal_mask(correspondences: Iterable[tuple[int, int]], costs: GoalCostField,
                 query: Sequence[Segment], hop_offset: int = 1) -> SubGoalMask:
    """Sub-goal costs for the query segments from their cheapest reachable map match.

    ``hop_offset`` accounts for the intra-image hop from the live frame into
    the map; it shifts every cost equally.
    """
    cheapest: dict[int, tuple[int, int]] = {}
    for q, node in correspondences:
        c = costs[node]
        if c is None:
            continue
        if q not in cheapest or (c, node) < cheapest[q]:
            cheapest[q] = (c, node)
    items = [(query[q], node, c + hop_offset) for q, (c, node) in sorted(cheapest.items())]
    return mask_from_costs(items)
