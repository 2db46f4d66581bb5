import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import softmax_direct
from strategies import counted, finite_costs
from topometric.config import ServoParams
from topometric.localizer import SubGoalEntry, SubGoalMask
from topometric.servocontrol import (
    ControlMode,
    ControllerChoice,
    SwitchReason,
    choose_controller,
    search_command,
    segment_servo,
    servo_yaw,
    softmax_weights,
)
from topometric.topograph import Segment

PARAMS = ServoParams(tau=5.0, gain=0.4, image_width=640)


def _mask(us, norms):
    entries = tuple(SubGoalEntry(Segment(0, k, k, (float(u), 240.0), 100), k, float(n), float(n))
                    for k, (u, n) in enumerate(zip(us, norms)))
    return SubGoalMask(entries, 0)


def test_defaults_match_controller_constants():
    p = ServoParams()
    assert (p.tau, p.gain) == (5.0, 0.4)


def test_centred_segment_zero_yaw():
    assert segment_servo(_mask([320], [0.0]), PARAMS).yaw_rate == 0.0


def test_worked_example():
    cmd = segment_servo(_mask([480], [0.0]), PARAMS)
    assert cmd.yaw_rate == pytest.approx(0.4 * (480 - 320) / 640, abs=1e-15)
    assert cmd.yaw_rate == pytest.approx(0.1, abs=1e-15)
    assert cmd.linear_v == pytest.approx(PARAMS.v_scale * PARAMS.v_fixed)


def test_two_segment_weights():
    w = softmax_weights([0.0, 1.0], 5.0)
    assert w == pytest.approx([math.exp(0) / (1 + math.exp(5)), math.exp(5) / (1 + math.exp(5))],
                              abs=1e-12)
    assert w == pytest.approx([0.0067, 0.9933], abs=5e-5)


def test_negative_temperature_favours_low_cost():
    w = softmax_weights([0.0, 1.0], -5.0)
    assert w[0] > w[1]


def test_yaw_clamped():
    p = ServoParams(gain=100.0, image_width=640, omega_max=1.0)
    assert segment_servo(_mask([600], [0.0]), p).yaw_rate == 1.0
    assert segment_servo(_mask([10], [0.0]), p).yaw_rate == -1.0


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        segment_servo(SubGoalMask((), 0), PARAMS)


def test_search_rotates_in_place():
    cmd = search_command(PARAMS)
    assert cmd.linear_v == 0.0 and cmd.yaw_rate == PARAMS.omega_search


def test_param_validation():
    with pytest.raises(ValueError):
        ServoParams(gain=0.0)
    with pytest.raises(ValueError):
        ServoParams(tau=math.inf)
    with pytest.raises(ValueError):
        ServoParams(image_width=0)


def test_healthy_inputs_choose_metric():
    assert choose_controller(True, True, True, True) == ControllerChoice(ControlMode.METRIC, SwitchReason.OK)


def test_nose_against_wall():
    c = choose_controller(False, True, True, True)
    assert (c.mode, c.reason) == (ControlMode.FALLBACK, SwitchReason.EMPTY_TRAVERSABILITY)


def test_plan_infeasible_with_traversability():
    c = choose_controller(True, True, False, True)
    assert (c.mode, c.reason) == (ControlMode.FALLBACK, SwitchReason.PLAN_INFEASIBLE)


def test_metric_requires_ok():
    with pytest.raises(ValueError):
        ControllerChoice(ControlMode.METRIC, SwitchReason.PLAN_INFEASIBLE)


def test_all_sixteen_health_combinations():
    order = [SwitchReason.EMPTY_TRAVERSABILITY, SwitchReason.SUBGOAL_PROJECTION_FAILED,
             SwitchReason.PLAN_INFEASIBLE, SwitchReason.LOCALIZATION_DEGRADED]
    for flags in itertools.product([False, True], repeat=4):
        c = choose_controller(*flags)
        if all(flags):
            assert c.mode is ControlMode.METRIC and c.reason is SwitchReason.OK
        else:
            assert c.mode is ControlMode.FALLBACK
            assert c.reason is order[flags.index(False)]


@pytest.mark.property
@settings(max_examples=300)
@given(values=st.lists(finite_costs, min_size=1, max_size=20), tau=st.floats(-20, 20))
@counted
def test_softmax_sums_to_one(values, tau):
    w = softmax_weights(values, tau)
    assert abs(w.sum() - 1.0) <= 1e-9
    assert np.all(w >= 0)
    if max(abs(tau * v) for v in values) < 600:
        assert w == pytest.approx(softmax_direct(values, tau), rel=1e-9, abs=1e-12)


@pytest.mark.property
@settings(max_examples=300)
@given(us=st.lists(st.floats(0, 640), min_size=1, max_size=8),
       norms=st.lists(st.floats(0, 1), min_size=8, max_size=8),
       shift=st.floats(-300, 300), tau=st.sampled_from([5.0, -5.0, 0.0, 2.5]))
@counted
def test_translation_covariance_and_bound(us, norms, shift, tau):
    p = ServoParams(tau=tau, gain=0.4, image_width=640)
    n = norms[:len(us)]
    base = servo_yaw(us, n, p)
    moved = servo_yaw([u + shift for u in us], n, p)
    assert moved - base == pytest.approx(p.gain * shift / p.image_width, abs=1e-12)
    assert abs(base) <= p.gain / 2 + 1e-12
