import logging
import math

import numpy as np
import pytest

from oracles import heap_geodesic
from topometric.bench import episodes as episodes_mod
from topometric.bench.episodes import (
    AltGoalUnavailable,
    Category,
    CostSource,
    Episode,
    Regime,
    RegimeConfig,
    add_clutter,
    episode_geodesic,
    goal_distance,
    instance_pixels,
    make_episodes,
    metric_goal_costs,
    select_alt_goal,
)
from topometric.bench.plot import emit_plot, mode_spans, plot_result
from topometric.bench.report import aggregate, format_table, lookup
from topometric.bench.runner import ControllerKind, run_episode, teach_frames
from topometric.config import BenchConfig, BenchParams, CameraModel, WorldGenParams
from topometric.servocontrol import ControlMode
from topometric.simworld import (
    FLOOR_ID,
    Observation,
    Pose2D,
    SemanticClass,
    World,
    render,
)
from topometric.topograph import AssociationMode, AssociationModel

CFG = BenchConfig(camera=CameraModel(160, 120),
                  world=WorldGenParams(rows=40, cols=40, rooms=4, obstacles=6),
                  bench=BenchParams(worlds=2, goals_per_world=3))


@pytest.fixture(scope="module")
def eps():
    return make_episodes(0, 2, 3, ["easy", "hard", "full"], CFG)


def _footprint_geodesic(world, start, footprint):
    mask = world.free.copy()
    for rc in footprint:
        mask[rc] = True
    return min(heap_geodesic(mask, start, rc) for rc in footprint) * world.cell_size


# -- episodes --------------------------------------------------------------------------

def test_episode_count(eps):
    assert len(eps) == 18
    assert len({e.episode_id for e in eps}) == 18


def test_episodes_deterministic(eps):
    again = make_episodes(0, 2, 3, ["easy", "hard", "full"], CFG)
    assert again == eps


def test_category_bands_hold(eps):
    for e in eps:
        lo, hi = e.category.band
        d = episode_geodesic(e)
        assert lo <= d <= hi
        if e.category is Category.EASY:
            start = e.world.cell_of(e.start.x, e.start.y)
            oracle = _footprint_geodesic(e.world, start, e.world.by_id[e.goal_instance].footprint)
            assert d == pytest.approx(oracle, abs=1e-9)


def test_goal_seen_during_teach(eps):
    for e in eps:
        world = e.world
        assert world.by_id[e.goal_instance].semantic_class not in (
            SemanticClass.WALL, SemanticClass.FLOOR, SemanticClass.CEILING)
        seen = [instance_pixels(render(world, CFG.camera, p), e.goal_instance) for p in e.teach_path]
        assert max(seen) >= CFG.teach_goal_px
        assert (e.teach_path[0].x, e.teach_path[0].y) == (e.start.x, e.start.y)


def test_goals_unique_per_world(eps):
    per_world = {}
    for e in eps:
        per_world.setdefault(e.world_seed, set()).add(e.goal_instance)
    assert all(len(g) == 3 for g in per_world.values())


def test_make_episodes_rejects_empty():
    with pytest.raises(ValueError):
        make_episodes(0, 0, 3, ["easy"], CFG)


def test_regime_config_invariants(eps):
    world = eps[0].world
    for regime in Regime:
        rc = RegimeConfig.for_regime(regime, world)
        if regime is Regime.GT_METRIC:
            assert rc.cost_source is CostSource.METRIC_GEODESIC
        else:
            assert rc.cost_source is CostSource.TOPOLOGICAL_GRAPH
        noisy = regime is Regime.NOISY
        assert (rc.association.mode is AssociationMode.NOISY) == noisy
    with pytest.raises(ValueError):
        RegimeConfig(Regime.GT_METRIC, AssociationModel(), CostSource.TOPOLOGICAL_GRAPH)


# -- metric goal costs -------------------------------------------------------------------

@pytest.fixture(scope="module")
def furnished():
    rows = ["#" * 14,
            "#............#",
            "#.AA......BB.#",
            "#.AA......BB.#",
            "#............#",
            "#############",
            "#.....#CC....#",
            "#.....#CC....#",
            "#.....########",
            "#############"]
    rows[5] += "#"
    rows[9] += "#"
    return World.from_ascii(rows)


def test_metric_costs(furnished):
    ids = {i.footprint[0]: i.instance_id for i in furnished.instances
           if i.semantic_class is SemanticClass.FURNITURE}
    a, b, c = ids[(2, 2)], ids[(2, 10)], ids[(6, 7)]
    costs = metric_goal_costs(furnished, a)
    assert costs[a] == 0.0
    gap = (10 - 4) * furnished.cell_size
    assert costs[b] == pytest.approx(gap + furnished.cell_size, abs=furnished.cell_size)
    assert math.isinf(costs[c])
    assert FLOOR_ID not in costs


def _fake_episode(world, goal, monkeypatch, teach=None):
    monkeypatch.setattr(episodes_mod, "load_world", lambda seed, params: world)
    teach = teach or (Pose2D(0.375, 2.125),)
    return Episode("t00-g0-hard", 0, WorldGenParams(), teach[0], goal, Category.HARD, tuple(teach),
                   4.0, 0)


def _frame(world, pairs, shape=(20, 40)):
    img = np.full(shape, FLOOR_ID, dtype=np.int32)
    depth = np.full(shape, 1.0)
    col = 0
    for inst, z in pairs:
        img[5:15, col:col + 8] = inst
        depth[5:15, col:col + 8] = z
        col += 10
    return Observation(img, depth, Pose2D(1.0, 1.0))


def test_alt_goal_single_candidate(furnished, monkeypatch):
    ids = sorted(i.instance_id for i in furnished.instances if i.semantic_class is SemanticClass.FURNITURE)
    a, b = ids[0], ids[1]
    ep = _fake_episode(furnished, a, monkeypatch)
    frames = [_frame(furnished, [])] * 7 + [_frame(furnished, [(b, 3.0)])] * 3
    assert select_alt_goal(ep, frames, 0.3) == b


def test_alt_goal_highest_score_wins(furnished, monkeypatch):
    ids = sorted(i.instance_id for i in furnished.instances if i.semantic_class is SemanticClass.FURNITURE)
    a, b = ids[0], ids[1]
    walls = [i.instance_id for i in furnished.instances if i.semantic_class is SemanticClass.WALL]
    ep = _fake_episode(furnished, b, monkeypatch)
    costs = metric_goal_costs(furnished, b)
    frames = [_frame(furnished, [(a, 2.0), (walls[0], 9.0)]),
              _frame(furnished, [(a, 5.0)])]
    scores = {a: max(2.0, 5.0) + costs[a]}
    expected = max(scores, key=lambda i: (scores[i], -i))
    assert select_alt_goal(ep, frames, 1.0) == expected


def test_alt_goal_ignores_structure(furnished, monkeypatch):
    ids = sorted(i.instance_id for i in furnished.instances if i.semantic_class is SemanticClass.FURNITURE)
    walls = [i.instance_id for i in furnished.instances if i.semantic_class is SemanticClass.WALL]
    ep = _fake_episode(furnished, ids[0], monkeypatch)
    frames = [_frame(furnished, [(walls[0], 2.0), (ids[0], 3.0)])] * 5
    with pytest.raises(AltGoalUnavailable):
        select_alt_goal(ep, frames, 0.3)


def test_alt_goal_on_generated_episode(eps):
    e = [x for x in eps if x.category is Category.FULL][0]
    try:
        alt = select_alt_goal(e, teach_frames(e, CFG), 0.3, CFG.min_area)
    except AltGoalUnavailable:
        return
    assert alt != e.goal_instance
    assert e.world.by_id[alt].semantic_class in (SemanticClass.FURNITURE, SemanticClass.FIXTURE)


def test_clutter_keeps_goal_reachable(eps):
    e = [x for x in eps if x.category is Category.HARD][0]
    c = add_clutter(e, 2, 5)
    assert 1 <= len(c.clutter) <= 2
    world = c.run_world()
    assert world.free.sum() == e.world.free.sum() - 4 * len(c.clutter)
    assert world.is_free_point(c.start.x, c.start.y)
    assert c.world is e.world


# -- closed loop --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def easy_run(eps):
    e = [x for x in eps if x.category is Category.EASY][0]
    regime = RegimeConfig.for_regime(Regime.GT_METRIC, e.world)
    return e, run_episode(e, regime, ControllerKind.TANGO, 200, True, CFG)


def test_zero_budget_fails(eps):
    e = eps[0]
    res = run_episode(e, RegimeConfig.for_regime(Regime.GT_METRIC, e.world), ControllerKind.TANGO,
                      0, True, CFG)
    assert not res.success and res.steps == 0 and res.trace == []


def test_run_is_deterministic(easy_run, eps):
    e, first = easy_run
    again = run_episode(e, RegimeConfig.for_regime(Regime.GT_METRIC, e.world), ControllerKind.TANGO,
                        200, True, CFG)
    assert [r.to_json() for r in first.trace] == [r.to_json() for r in again.trace]


def test_trace_invariants(easy_run):
    e, res = easy_run
    world = e.run_world()
    assert [r.step for r in res.trace] == list(range(res.steps))
    for r in res.trace:
        assert world.is_free_point(r.pose.x, r.pose.y)
    assert res.success == (res.final_distance <= CFG.bench.success_radius and res.steps <= 200)
    if res.success:
        last = res.trace[-1].pose
        assert goal_distance(world, e.goal_instance, last.x, last.y) <= 1.0


def test_fallback_only_never_metric(eps):
    e = [x for x in eps if x.category is Category.EASY][1]
    res = run_episode(e, RegimeConfig.for_regime(Regime.GT_METRIC, e.world),
                      ControllerKind.FALLBACK_ONLY, 60, True, CFG)
    assert all(r.mode is ControlMode.FALLBACK for r in res.trace)
    assert res.switch_count == 0


def test_noisy_topological_run_records_reference(eps):
    e = [x for x in eps if x.category is Category.EASY][0]
    res = run_episode(e, RegimeConfig.for_regime(Regime.NOISY, e.world, CFG.noise, e.noise_seed),
                      ControllerKind.TANGO, 40, True, CFG)
    assert all(r.ref_index is not None for r in res.trace)
    for a, b in zip(res.trace, res.trace[1:]):
        if a.mode is not b.mode:
            assert (b.mode is ControlMode.METRIC) == (b.reason.value == "ok")


def test_no_switch_holds_on_metric_failure(eps):
    e = [x for x in eps if x.category is Category.FULL][0]
    res = run_episode(e, RegimeConfig.for_regime(Regime.GT_METRIC, e.world), ControllerKind.TANGO,
                      60, False, CFG)
    for r in res.trace:
        if r.mode is ControlMode.FALLBACK and r.reason.value != "localization_degraded":
            assert (r.command.linear_v, r.command.yaw_rate) == (0.0, 0.0)


# -- aggregation ----------------------------------------------------------------------------

def _row(success, category="easy", regime="gt_metric", controller="tango", steps=10, switches=1):
    return {"suite": "main", "regime": regime, "controller": controller, "category": category,
            "success": success, "steps": steps, "switch_count": switches}


def test_three_of_four():
    stats = aggregate([_row(True), _row(True), _row(True), _row(False)])
    assert stats[0].success_rate == 75.0 and stats[0].n == 4


def test_empty_group_omitted_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        stats = aggregate([_row(True)], expected=[("main", "gt_metric", "tango", "easy"),
                                                  ("main", "noisy", "tango", "hard")])
    assert len(stats) == 1
    assert "no results" in caplog.text
    assert lookup(stats, "main", "noisy", "tango", "hard") is None


GOLDEN = """\
suite  regime          controller     category  n  success%   steps  switches
-----  --------------  -------------  --------  -  --------  ------  --------
main   gt_metric       tango          easy      3     66.67   40.00      1.00
main   gt_metric       tango          hard      2     50.00  275.00      3.00
main   gt_metric       fallback_only  easy      1      0.00  500.00      0.00
main   gt_topological  tango          easy      2    100.00   35.00      0.50
main   noisy           tango          full      2      0.00  500.00      6.00
"""


def test_golden_table():
    rows = [
        _row(True, steps=30, switches=1), _row(True, steps=40, switches=0),
        _row(False, steps=50, switches=2),
        _row(True, "hard", steps=50, switches=2), _row(False, "hard", steps=500, switches=4),
        _row(True, regime="gt_topological", steps=30, switches=0),
        _row(True, regime="gt_topological", steps=40, switches=1),
        _row(False, "full", "noisy", steps=500, switches=5),
        _row(False, "full", "noisy", steps=500, switches=7),
        _row(False, controller="fallback_only", steps=500, switches=0),
    ]
    assert format_table(aggregate(rows)) == GOLDEN


# -- plots ----------------------------------------------------------------------------------

def test_mode_spans():
    modes = ["metric", "metric", "fallback", "metric", "fallback", "fallback", "metric", "fallback"]
    spans = mode_spans(modes)
    assert [s for s in spans if s[0] == "fallback"] == [("fallback", 2, 2), ("fallback", 4, 5),
                                                         ("fallback", 7, 7)]


def test_plot_straight_and_deterministic(tmp_path, furnished):
    poses = [(1.0 + 0.1 * k, 1.1) for k in range(10)]
    a = emit_plot(poses, ["metric"] * 10, furnished, tmp_path / "a.svg", start=(0.9, 1.1))
    b = emit_plot(poses, ["metric"] * 10, furnished, tmp_path / "b.svg", start=(0.9, 1.1))
    text = a.read_text()
    assert text == b.read_text()
    assert text.count('data-mode="metric"') == 1


def test_plot_three_fallback_spans(tmp_path, furnished):
    modes = ["metric", "fallback", "metric", "fallback", "fallback", "metric", "fallback"]
    poses = [(1.0 + 0.1 * k, 1.1) for k in range(len(modes))]
    text = emit_plot(poses, modes, furnished, tmp_path / "p.svg").read_text()
    assert text.count('data-mode="fallback"') == 3


def test_plot_empty_trace_rejected(tmp_path, furnished):
    with pytest.raises(ValueError):
        emit_plot([], [], furnished, tmp_path / "x.svg")


def test_plot_result(tmp_path, easy_run):
    e, res = easy_run
    out = plot_result(res, e.run_world(), tmp_path / "run.svg", e.teach_path, e.start, e.goal_instance)
    assert out.read_text().startswith("<svg")


# -- command line ---------------------------------------------------------------------------

def test_cli_gen_worlds_and_run(tmp_path, capsys):
    from pathlib import Path

    from topometric.cli import main

    desk = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"
    assert main(["gen-worlds", "--count", "1", "--out", str(tmp_path / "worlds")]) == 0
    text = next((tmp_path / "worlds").glob("world_*.txt")).read_text()
    assert World.from_text(text).shape == (56, 56)
    assert main(["run", "--config", str(desk), "--episode", "w00-g0-easy", "--budget", "60",
                 "--svg", "--out", str(tmp_path / "runs")]) == 0
    assert "w00-g0-easy gt_metric tango" in capsys.readouterr().out
    assert len(list((tmp_path / "runs").glob("*.jsonl"))) == 1
    assert len(list((tmp_path / "runs").glob("*.svg"))) == 1


def test_alt_goal_skips_instances_already_reached(furnished, monkeypatch):
    ids = {i.footprint[0]: i.instance_id for i in furnished.instances
           if i.semantic_class is SemanticClass.FURNITURE}
    near, far, goal = ids[(2, 2)], ids[(2, 10)], ids[(6, 7)]
    ep = _fake_episode(furnished, far, monkeypatch, teach=(Pose2D(1.2, 1.2),))
    frames = [_frame(furnished, [(near, 9.0), (goal, 1.0)])]
    with pytest.raises(AltGoalUnavailable):
        select_alt_goal(ep, frames, 1.0)
    assert select_alt_goal(ep, frames, 1.0, success_radius=0.1) == near
