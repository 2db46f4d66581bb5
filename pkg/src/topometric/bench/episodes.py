"""Episode sampling: goals, category-banded starts, teach traverses, alt goals, clutter."""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from ..config import BenchConfig, NoiseConfig, WorldGenParams
from ..simworld import (
    STUFF_CLASSES,
    Observation,
    Pose2D,
    SemanticClass,
    World,
    WorldGenerationError,
    clearance_from_free,
    distance_field,
    footprint_distance,
    generate_world,
    render,
    shortest_pose_path,
    with_extra_obstacles,
)
from ..topograph import AssociationMode, AssociationModel

log = logging.getLogger(__name__)

_NON_GOAL = STUFF_CLASSES | {SemanticClass.WALL, SemanticClass.CLUTTER}


class Category(enum.Enum):
    EASY = "easy"
    HARD = "hard"
    FULL = "full"

    @property
    def band(self) -> tuple[float, float]:
        return {"easy": (1.0, 3.0), "hard": (3.0, 5.0), "full": (8.0, 10.0)}[self.value]


class Regime(enum.Enum):
    GT_METRIC = "gt_metric"
    GT_TOPOLOGICAL = "gt_topological"
    NOISY = "noisy"


class CostSource(enum.Enum):
    METRIC_GEODESIC = "metric_geodesic"
    TOPOLOGICAL_GRAPH = "topological_graph"


@dataclass(frozen=True)
class RegimeConfig:
    regime: Regime
    association: AssociationModel
    cost_source: CostSource

    def __post_init__(self) -> None:
        want_source = (CostSource.METRIC_GEODESIC if self.regime is Regime.GT_METRIC
                       else CostSource.TOPOLOGICAL_GRAPH)
        want_mode = (AssociationMode.NOISY if self.regime is Regime.NOISY
                     else AssociationMode.GROUND_TRUTH)
        if self.cost_source is not want_source or self.association.mode is not want_mode:
            raise ValueError(f"inconsistent regime config for {self.regime.value}")

    @classmethod
    def for_regime(cls, regime: Regime, world: World, noise: NoiseConfig | None = None,
                   seed: int = 0) -> RegimeConfig:
        stuff = frozenset({world.floor_instance_id, world.ceiling_instance_id})
        if regime is Regime.NOISY:
            noise = noise or NoiseConfig()
            assoc = AssociationModel(AssociationMode.NOISY, noise.p_drop, noise.p_swap, seed, stuff)
        else:
            assoc = AssociationModel(stuff_ids=stuff)
        source = (CostSource.METRIC_GEODESIC if regime is Regime.GT_METRIC
                  else CostSource.TOPOLOGICAL_GRAPH)
        return cls(regime, assoc, source)


def derive_seed(*key: int) -> int:
    """Independent 31-bit seed for a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0] & 0x7FFFFFFF)


@functools.lru_cache(maxsize=32)
def load_world(seed: int, params: WorldGenParams) -> World:
    return generate_world(seed, params)


@dataclass(frozen=True)
class Episode:
    episode_id: str
    world_seed: int
    world_params: WorldGenParams
    start: Pose2D
    goal_instance: int
    category: Category
    teach_path: tuple[Pose2D, ...]
    start_geodesic: float
    noise_seed: int
    clutter: tuple[tuple[tuple[int, int], ...], ...] = field(default=())

    @property
    def world(self) -> World:
        return load_world(self.world_seed, self.world_params)

    def run_world(self) -> World:
        """The world the robot is evaluated in (teach world plus any clutter)."""
        if not self.clutter:
            return self.world
        return _cluttered(self.world_seed, self.world_params, self.clutter)


@functools.lru_cache(maxsize=32)
def _cluttered(seed: int, params: WorldGenParams, clutter) -> World:
    return with_extra_obstacles(load_world(seed, params), [list(fp) for fp in clutter])


def footprint_euclidean(footprint, cell_size: float, x, y):
    """Euclidean distance from points to the nearest cell square of a footprint."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    best = np.full(np.broadcast(x, y).shape, np.inf)
    for r, c in footprint:
        gx = np.maximum.reduce([c * cell_size - x, np.zeros_like(best), x - (c + 1) * cell_size])
        gy = np.maximum.reduce([r * cell_size - y, np.zeros_like(best), y - (r + 1) * cell_size])
        best = np.minimum(best, np.hypot(gx, gy))
    return best


def goal_distance(world: World, goal_instance: int, x: float, y: float) -> float:
    return float(footprint_euclidean(world.by_id[goal_instance].footprint, world.cell_size, x, y))


def metric_goal_costs(world: World, goal_instance: int) -> dict[int, float]:
    """Geodesic metres from each non-stuff instance's footprint to the goal footprint.

    Unreachable instances map to ``inf``.
    """
    if goal_instance not in world.by_id:
        raise KeyError(f"unknown instance {goal_instance}")
    goal = world.by_id[goal_instance]
    field_ = distance_field(world, goal.footprint)
    out = {}
    for inst in world.instances:
        if inst.semantic_class in STUFF_CLASSES:
            continue
        out[inst.instance_id] = (0.0 if inst.instance_id == goal_instance
                                 else float(footprint_distance(world, field_, inst.footprint)))
    return out


def instance_pixels(obs: Observation, instance_id: int) -> int:
    return int(np.count_nonzero(obs.instance_image == instance_id))


def goal_candidates(world: World) -> list[int]:
    return sorted(i.instance_id for i in world.instances if i.semantic_class not in _NON_GOAL)


def _cell_grid(world: World) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = world.shape
    rr, cc = np.mgrid[0:rows, 0:cols]
    return (cc + 0.5) * world.cell_size, (rr + 0.5) * world.cell_size


def _teach_path(world: World, cfg: BenchConfig, start_cell: tuple[int, int], goal: int,
                field_: np.ndarray) -> list[Pose2D] | None:
    """Clearance-respecting geodesic from the start towards the goal, cut once the goal is in view."""
    spawn = world.spawnable
    approach = np.where(spawn, field_, np.inf)
    target = np.unravel_index(int(np.argmin(approach)), approach.shape)
    a = Pose2D(*world.cell_center(*start_cell), 0.0)
    b = Pose2D(*world.cell_center(*target), 0.0)
    poses = shortest_pose_path(world, a, b, cfg.bench.teach_spacing, world.spawn_clearance)
    if len(poses) > 1:
        poses[0] = Pose2D(a.x, a.y, poses[0].theta)
    fp = np.array(world.by_id[goal].footprint, float)
    gx, gy = (fp[:, 1].mean() + 0.5) * world.cell_size, (fp[:, 0].mean() + 0.5) * world.cell_size
    last = poses[-1]
    poses.append(Pose2D(last.x, last.y, math.atan2(gy - last.y, gx - last.x)))
    need = cfg.teach_goal_px
    for k, pose in enumerate(poses):
        if instance_pixels(render(world, cfg.camera, pose), goal) >= need:
            return poses[:k + 1]
    return None


def _try_episode(world: World, cfg: BenchConfig, goal: int, category: Category,
                 rng: np.random.Generator, field_: np.ndarray, eu: np.ndarray
                 ) -> tuple[Pose2D, list[Pose2D], float] | None:
    lo, hi = category.band
    ok = world.spawnable & (field_ >= lo) & (field_ <= hi) & (eu > cfg.bench.success_radius)
    cells = np.argwhere(ok)
    if len(cells) == 0:
        return None
    order = rng.permutation(len(cells))[:cfg.bench.max_start_tries]
    for k in order:
        cell = (int(cells[k][0]), int(cells[k][1]))
        teach = _teach_path(world, cfg, cell, goal, field_)
        if teach is None:
            continue
        start = Pose2D(*world.cell_center(*cell), teach[0].theta)
        return start, teach, float(field_[cell])
    return None


def make_episodes(bench_seed: int, worlds: int, per_world: int, categories, cfg: BenchConfig,
                  world_params: WorldGenParams | None = None, prefix: str = "w") -> list[Episode]:
    """Sample ``per_world`` goals per world, each with one episode per category.

    Goals are drawn without replacement in a seeded random order; a goal is
    kept only if every requested category admits a start and a teach
    traverse that sees it, so each world contributes complete goal rows.
    """
    if worlds < 1 or per_world < 1:
        raise ValueError("worlds and per_world must be >= 1")
    params = world_params or cfg.world
    cats = [Category(c) if isinstance(c, str) else c for c in categories]
    episodes: list[Episode] = []
    for w in range(worlds):
        world, world_seed = None, 0
        for attempt in range(10):
            world_seed = derive_seed(bench_seed, ord(prefix[0]), w, attempt)
            try:
                world = load_world(world_seed, params)
                break
            except WorldGenerationError:
                continue
        if world is None:
            log.warning("world %s%02d could not be generated; skipped", prefix, w)
            continue
        rng = np.random.default_rng(derive_seed(bench_seed, ord(prefix[0]), w, 1000))
        xs, ys = _cell_grid(world)
        kept = 0
        for goal in rng.permutation(goal_candidates(world)):
            if kept == per_world:
                break
            goal = int(goal)
            fp = world.by_id[goal].footprint
            field_ = distance_field(world, fp)
            eu = footprint_euclidean(fp, world.cell_size, xs, ys)
            row = []
            for cat in cats:
                got = _try_episode(world, cfg, goal, cat, rng, field_, eu)
                if got is None:
                    break
                row.append((cat, got))
            if len(row) < len(cats):
                continue
            for cat, (start, teach, geo) in row:
                eid = f"{prefix}{w:02d}-g{kept}-{cat.value}"
                episodes.append(Episode(eid, world_seed, params, start, goal, cat, tuple(teach),
                                        geo, derive_seed(bench_seed, ord(prefix[0]), w, kept,
                                                         cats.index(cat))))
            kept += 1
        if kept < per_world:
            log.warning("world %s%02d: only %d of %d goals admit every category",
                        prefix, w, kept, per_world)
    return episodes


def episode_geodesic(ep: Episode) -> float:
    """Recomputed start-to-goal geodesic (band check)."""
    world = ep.world
    field_ = distance_field(world, world.by_id[ep.goal_instance].footprint)
    return float(field_[world.cell_of(ep.start.x, ep.start.y)])


class AltGoalUnavailable(RuntimeError):
    pass


def select_alt_goal(ep: Episode, frames, tail_fraction: float = 0.3, min_area: int = 1,
                    success_radius: float = 1.0) -> int:
    """Seen-but-unvisited goal from the tail of the teach run.

    Score of an instance seen from a pose: mean depth of its pixels plus its
    geodesic distance to the original goal. The instance with the highest
    score over the tail poses wins; ties go to the lower id. Instances already
    within the success radius of the start are not eligible, as for teach goals.
    """
    world = ep.world
    n = len(frames)
    first = min(n - 1, int(math.floor((1.0 - tail_fraction) * n)))
    costs = metric_goal_costs(world, ep.goal_instance)
    eligible = {i for i in goal_candidates(world) if i != ep.goal_instance
                and math.isfinite(costs.get(i, math.inf))
                and goal_distance(world, i, ep.start.x, ep.start.y) > success_radius}
    best: dict[int, float] = {}
    for obs in frames[first:]:
        ids, counts = np.unique(obs.instance_image, return_counts=True)
        for inst, cnt in zip(ids.tolist(), counts.tolist()):
            if inst not in eligible or cnt < min_area:
                continue
            z = obs.depth_image[obs.instance_image == inst]
            score = float(np.mean(z)) + costs[inst]
            best[inst] = max(best.get(inst, -math.inf), score)
    if not best:
        raise AltGoalUnavailable(f"{ep.episode_id}: no eligible instance in the teach tail")
    return min(best, key=lambda i: (-best[i], i))


def approach_path(world: World, ep: Episode, spacing: float = 0.3) -> list[Pose2D]:
    """Clearance-respecting shortest path from the start to the spawnable cell nearest the goal."""
    field_ = distance_field(world, world.by_id[ep.goal_instance].footprint)
    approach = np.where(world.spawnable, field_, np.inf)
    target = np.unravel_index(int(np.argmin(approach)), approach.shape)
    a = Pose2D(*world.cell_center(*world.cell_of(ep.start.x, ep.start.y)), 0.0)
    b = Pose2D(*world.cell_center(*target), 0.0)
    return shortest_pose_path(world, a, b, spacing, world.spawn_clearance)


def add_clutter(ep: Episode, count: int, seed: int, success_radius: float = 1.0,
                tries: int = 60) -> Episode:
    """Place up to ``count`` 2x2-cell boxes 30-70% along the start-to-goal approach path.

    The teach traverse stops once the goal is in view, so short episodes
    sample along the full clearance-respecting approach instead. A box is
    kept only if the start stays collision-free and the start can still
    reach a cell within the success radius of the goal with robot clearance.
    """
    world = ep.world
    rng = np.random.default_rng(seed)
    teach = approach_path(world, ep)
    free = world.free.copy()
    start_cell = world.cell_of(ep.start.x, ep.start.y)
    xs, ys = _cell_grid(world)
    near_goal = footprint_euclidean(world.by_id[ep.goal_instance].footprint, world.cell_size,
                                    xs, ys) <= success_radius
    placed: list[tuple[tuple[int, int], ...]] = []
    for _ in range(tries):
        if len(placed) == count or len(teach) < 4:
            break
        k = int(rng.integers(int(0.3 * len(teach)), int(math.ceil(0.7 * len(teach)))))
        r0, c0 = world.cell_of(teach[k].x, teach[k].y)
        r0 -= int(rng.integers(0, 2))
        c0 -= int(rng.integers(0, 2))
        cells = tuple((r0 + dr, c0 + dc) for dr in (0, 1) for dc in (0, 1))
        if not all(0 <= r < free.shape[0] and 0 <= c < free.shape[1] and free[r, c]
                   for r, c in cells):
            continue
        trial = free.copy()
        for rc in cells:
            trial[rc] = False
        cspace = clearance_from_free(trial, world.cell_size, world.spawn_clearance)
        if not cspace[start_cell] or not _reaches(cspace, start_cell, near_goal):
            continue
        free = trial
        placed.append(cells)
    if not placed:
        raise ValueError(f"{ep.episode_id}: no clutter placement keeps the goal reachable")
    return replace(ep, clutter=tuple(placed))


def _reaches(mask: np.ndarray, start: tuple[int, int], targets: np.ndarray) -> bool:
    lab, _ = ndimage.label(mask)
    return bool(np.any(targets & (lab == lab[start])))
