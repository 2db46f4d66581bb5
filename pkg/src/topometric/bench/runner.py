"""Closed-loop evaluation of one episode under a regime and controller."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from ..config import BenchConfig
from ..localizer import (
    LocalizationLost,
    LocalizationState,
    NoViableSubgoal,
    SubGoalMask,
    localize,
    mask_from_costs,
    subgoal_mask,
)
from ..metricplanner import (
    EmptyTraversability,
    SubgoalProjectionFailed,
    build_costmap,
    classify_traversable,
    follow_path,
    plan_path,
    select_subgoal_point,
    semantic_predicate,
    traversable_points,
)
from ..servocontrol import (
    ControlMode,
    ControllerChoice,
    SwitchReason,
    choose_controller,
    search_command,
    segment_servo,
)
from ..simworld import ControlCommand, Observation, Pose2D, World, render, step_agent
from ..topograph import (
    MapGraph,
    Segment,
    build_map,
    compute_goal_costs,
    extract_segments,
    goal_node_for,
)
from .episodes import CostSource, Episode, RegimeConfig, goal_distance, metric_goal_costs


class ControllerKind(enum.Enum):
    TANGO = "tango"
    FALLBACK_ONLY = "fallback_only"


@dataclass(frozen=True)
class StepRecord:
    step: int
    pose: Pose2D
    mode: ControlMode
    reason: SwitchReason
    best_instance: int | None
    best_raw: float | None
    best_norm: float | None
    n_subgoals: int
    command: ControlCommand
    ref_index: int | None
    collided: bool
    goal_distance: float

    def to_json(self) -> dict:
        r6 = _r6
        return {
            "step": self.step,
            "x": r6(self.pose.x), "y": r6(self.pose.y), "theta": r6(self.pose.theta),
            "mode": self.mode.value, "reason": self.reason.value,
            "best_instance": self.best_instance,
            "best_raw": r6(self.best_raw), "best_norm": r6(self.best_norm),
            "n_subgoals": self.n_subgoals,
            "v": r6(self.command.linear_v), "yaw": r6(self.command.yaw_rate),
            "ref": self.ref_index, "collided": self.collided,
            "goal_dist": r6(self.goal_distance),
        }


def _r6(x: float | None) -> float | None:
    if x is None:
        return None
    v = round(float(x), 6)
    return 0.0 if v == 0 else v


@dataclass
class EpisodeResult:
    episode_id: str
    success: bool
    steps: int
    final_distance: float
    switch_count: int
    trace: list[StepRecord] = field(default_factory=list)

    @property
    def modes(self) -> list[ControlMode]:
        return [r.mode for r in self.trace]


@dataclass(frozen=True)
class TeachMap:
    frames: tuple[Observation, ...]
    graph: MapGraph
    goal_node: int


def teach_frames(ep: Episode, cfg: BenchConfig) -> tuple[Observation, ...]:
    return tuple(render(ep.world, cfg.camera, p) for p in ep.teach_path)


def build_teach_map(ep: Episode, regime: RegimeConfig, cfg: BenchConfig,
                    frames: tuple[Observation, ...] | None = None,
                    goal_instance: int | None = None) -> TeachMap:
    """Map graph from the teach renderings; the goal node is the goal's largest segment in the latest frame that sees it."""
    frames = frames or teach_frames(ep, cfg)
    graph = build_map(frames, regime.association, cfg.mapping.window, cfg.min_area)
    goal = ep.goal_instance if goal_instance is None else goal_instance
    node = goal_node_for(graph, goal)
    graph.goal_node = node
    return TeachMap(frames, graph, node)


class _SubgoalSource:
    """Per-step sub-goal masks for one regime."""

    def __init__(self, ep: Episode, regime: RegimeConfig, cfg: BenchConfig,
                 teach_map: TeachMap | None, goal_instance: int):
        self.regime = regime
        self.window = cfg.mapping.window_radius
        self.key = ep.noise_seed
        if regime.cost_source is CostSource.METRIC_GEODESIC:
            table = metric_goal_costs(ep.world, goal_instance)
            self.table = {i: c for i, c in table.items() if math.isfinite(c)}
        else:
            if teach_map is None:
                teach_map = build_teach_map(ep, regime, cfg, goal_instance=goal_instance)
            self.map = teach_map
            self.costs = compute_goal_costs(teach_map.graph, teach_map.goal_node)
            self.state = LocalizationState(0, self.window)

    def __call__(self, segs: list[Segment], step: int) -> tuple[SubGoalMask | None, bool, int | None]:
        """Mask (or None), whether localization was healthy, and the reference frame."""
        if self.regime.cost_source is CostSource.METRIC_GEODESIC:
            items = [(s, None, self.table[s.instance_id]) for s in segs if s.instance_id in self.table]
            try:
                return mask_from_costs(items), True, None
            except NoViableSubgoal:
                return None, True, None
        graph = self.map.graph
        loc_ok = True
        try:
            self.state, corr = localize(segs, graph, self.state, self.regime.association,
                                        key=(self.key, step))
        except LocalizationLost:
            loc_ok = False
            wide = LocalizationState(self.state.ref_index, max(self.window, graph.frame_count))
            try:
                found, corr = localize(segs, graph, wide, self.regime.association,
                                       key=(self.key, step, 1))
            except LocalizationLost:
                return None, False, self.state.ref_index
            self.state = LocalizationState(found.ref_index, self.window)
        try:
            return subgoal_mask(corr, self.costs, segs), loc_ok, self.state.ref_index
        except NoViableSubgoal:
            return None, False, self.state.ref_index


def _metric_command(obs: Observation, segs: list[Segment], mask: SubGoalMask, cfg: BenchConfig,
                    predicate) -> tuple[bool, bool, bool, ControlCommand | None]:
    """Run the metric pipeline; returns stage health flags and the command if all passed."""
    trav = classify_traversable(segs, obs.depth_image.shape, predicate)
    points, front_free = traversable_points(trav, obs.depth_image, cfg.camera, cfg.bev)
    try:
        costmap = build_costmap(points, cfg.bev, front_free)
    except EmptyTraversability:
        return False, True, True, None
    try:
        goal = select_subgoal_point(mask.best_entry.query_segment, obs.depth_image, cfg.camera,
                                    cfg.bev)
    except SubgoalProjectionFailed:
        return True, False, True, None
    plan = plan_path(costmap, goal, cfg.bev.snap_radius)
    if not plan.feasible:
        return True, True, False, None
    return True, True, True, follow_path(plan, cfg.control)


_ZERO = ControlCommand(0.0, 0.0)


def run_episode(ep: Episode, regime: RegimeConfig, controller: ControllerKind, budget: int,
                switch_enabled: bool, cfg: BenchConfig, teach_map: TeachMap | None = None,
                goal_instance: int | None = None) -> EpisodeResult:
    """Teach-and-repeat evaluation loop.

    Each step renders the view, derives the sub-goal mask for the regime,
    arbitrates between metric and fallback control, and advances the robot
    by ``dt``. Success is checked after every step.
    """
    goal = ep.goal_instance if goal_instance is None else goal_instance
    world: World = ep.run_world()
    servo = cfg.servo_params()
    dt = cfg.bench.dt
    predicate = semantic_predicate(world.semantics, cfg.perception.traversable_classes)
    source = _SubgoalSource(ep, regime, cfg, teach_map, goal)
    pose = ep.start
    dist = goal_distance(world, goal, pose.x, pose.y)
    trace: list[StepRecord] = []
    success = False
    for step in range(budget):
        obs = render(world, cfg.camera, pose)
        segs = extract_segments(obs, cfg.min_area, step)
        mask, loc_ok, ref = source(segs, step)
        if mask is None:
            choice = ControllerChoice(ControlMode.FALLBACK, SwitchReason.LOCALIZATION_DEGRADED)
            cmd = search_command(servo)
        elif controller is ControllerKind.FALLBACK_ONLY:
            choice = ControllerChoice(ControlMode.FALLBACK, SwitchReason.OK)
            cmd = segment_servo(mask, servo)
        else:
            trav_ok, proj_ok, plan_ok, metric_cmd = _metric_command(obs, segs, mask, cfg, predicate)
            choice = choose_controller(trav_ok, proj_ok, plan_ok, loc_ok)
            if choice.mode is ControlMode.METRIC:
                cmd = metric_cmd
            elif switch_enabled:
                cmd = segment_servo(mask, servo)
            else:
                cmd = _ZERO
        pose, collided = step_agent(world, pose, cmd, dt)
        dist = goal_distance(world, goal, pose.x, pose.y)
        best = mask.best_entry if mask is not None else None
        trace.append(StepRecord(
            step, pose, choice.mode, choice.reason,
            best.query_segment.instance_id if best else None,
            best.raw_cost if best else None, best.norm_cost if best else None,
            len(mask.entries) if mask is not None else 0,
            cmd, ref, collided, dist,
        ))
        if dist <= cfg.bench.success_radius:
            success = True
            break
    switches = sum(1 for a, b in zip(trace, trace[1:]) if a.mode is not b.mode)
    return EpisodeResult(ep.episode_id, success, len(trace), dist, switches, trace)
