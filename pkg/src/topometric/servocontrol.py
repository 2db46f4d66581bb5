"""Segment-servoing fallback controller and the metric/fallback arbiter."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import ServoParams
from .localizer import SubGoalMask
from .simworld import ControlCommand


class ControlMode(enum.Enum):
    METRIC = "metric"
    FALLBACK = "fallback"


class SwitchReason(enum.Enum):
    OK = "ok"
    EMPTY_TRAVERSABILITY = "empty_traversability"
    SUBGOAL_PROJECTION_FAILED = "subgoal_projection_failed"
    PLAN_INFEASIBLE = "plan_infeasible"
    LOCALIZATION_DEGRADED = "localization_degraded"


@dataclass(frozen=True)
class ControllerChoice:
    mode: ControlMode
    reason: SwitchReason

    def __post_init__(self) -> None:
        if self.mode is ControlMode.METRIC and self.reason is not SwitchReason.OK:
            raise ValueError("metric mode requires reason OK")


def softmax_weights(values, tau: float) -> np.ndarray:
    z = tau * np.asarray(values, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def servo_yaw(centroids_u, norm_costs, params: ServoParams) -> float:
    """Unclamped yaw rate: gain/width times the softmax-weighted centroid offset."""
    u = np.asarray(centroids_u, dtype=float)
    w = softmax_weights(norm_costs, params.tau)
    return float(params.gain / params.image_width * np.sum(w * (u - params.image_width / 2)))


def segment_servo(mask: SubGoalMask, params: ServoParams) -> ControlCommand:
    if not mask.entries:
        raise ValueError("segment_servo needs a non-empty sub-goal mask")
    yaw = servo_yaw([e.query_segment.centroid_px[0] for e in mask.entries],
                    [e.norm_cost for e in mask.entries], params)
    yaw = max(-params.omega_max, min(params.omega_max, yaw))
    return ControlCommand(params.v_scale * params.v_fixed, yaw)


def search_command(params: ServoParams) -> ControlCommand:
    """In-place rotation used while there is nothing to servo on."""
    return ControlCommand(0.0, params.omega_search)


def choose_controller(traversable: bool, subgoal_projected: bool, plan_feasible: bool,
                      loc_ok: bool) -> ControllerChoice:
    """Metric control iff every stage is healthy; otherwise fallback with the first failing stage."""
    for healthy, reason in ((traversable, SwitchReason.EMPTY_TRAVERSABILITY),
                            (subgoal_projected, SwitchReason.SUBGOAL_PROJECTION_FAILED),
                            (plan_feasible, SwitchReason.PLAN_INFEASIBLE),
                            (loc_ok, SwitchReason.LOCALIZATION_DEGRADED)):
        if not healthy:
            return ControllerChoice(ControlMode.FALLBACK, reason)
    return ControllerChoice(ControlMode.METRIC, SwitchReason.OK)
