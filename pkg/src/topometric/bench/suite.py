"""Full benchmark: run planning, execution and summary/trace emission."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ..config import BenchConfig, config_to_dict
from .episodes import (
    AltGoalUnavailable,
    Category,
    Episode,
    Regime,
    RegimeConfig,
    add_clutter,
    derive_seed,
    make_episodes,
    select_alt_goal,
)
from .report import aggregate, write_summary, write_trace
from .runner import ControllerKind, EpisodeResult, run_episode, teach_frames

log = logging.getLogger(__name__)

SUITES = ("main", "fallback", "clutter", "switch", "alt")
_CLUTTER_TAG = 7
_MAIN_REGIMES = (Regime.GT_METRIC, Regime.GT_TOPOLOGICAL, Regime.NOISY)


@dataclass(frozen=True)
class RunSpec:
    suite: str
    episode: Episode
    regime: Regime
    controller: ControllerKind
    budget: int
    switch_enabled: bool = True
    goal_instance: int | None = None

    @property
    def controller_label(self) -> str:
        if self.controller is ControllerKind.FALLBACK_ONLY:
            return "fallback_only"
        return "tango" if self.switch_enabled else "tango_noswitch"

    @property
    def run_id(self) -> str:
        return f"{self.suite}/{self.regime.value}-{self.controller_label}-{self.episode.episode_id}"

    @property
    def goal(self) -> int:
        return self.episode.goal_instance if self.goal_instance is None else self.goal_instance

    @property
    def identity(self) -> tuple:
        """Runs with equal identity produce identical results whatever their suite."""
        return (self.episode, self.regime, self.controller, self.budget, self.switch_enabled,
                self.goal)


def main_episodes(cfg: BenchConfig) -> list[Episode]:
    b = cfg.bench
    return make_episodes(b.seed, b.worlds, b.goals_per_world, b.categories, cfg)


def switch_episodes(cfg: BenchConfig) -> list[Episode]:
    b = cfg.bench
    return make_episodes(b.seed, b.switch_worlds, b.goals_per_world, [b.switch_category], cfg,
                         cfg.corridor_world, prefix="c")


def plan_runs(cfg: BenchConfig, suites: Sequence[str] = SUITES,
              categories: Sequence[str] | None = None) -> list[RunSpec]:
    """Every run of the requested suites, in a fixed order."""
    b = cfg.bench
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites {sorted(unknown)}")
    keep = set(categories or b.categories)
    specs: list[RunSpec] = []
    eps = [e for e in main_episodes(cfg) if e.category.value in keep] if (
        set(suites) - {"switch"}) else []
    if "main" in suites:
        for regime in _MAIN_REGIMES:
            specs += [RunSpec("main", e, regime, ControllerKind.TANGO, b.budget) for e in eps]
    if "fallback" in suites:
        for name in b.fallback_regimes:
            specs += [RunSpec("fallback", e, Regime(name), ControllerKind.FALLBACK_ONLY, b.budget)
                      for e in eps]
    if "clutter" in suites:
        cluttered = []
        for k, e in enumerate(eps):
            if e.category.value not in b.clutter_categories:
                continue
            try:
                cluttered.append(add_clutter(e, b.clutter_count, derive_seed(b.seed, _CLUTTER_TAG, k),
                                             b.success_radius))
            except ValueError as exc:
                log.warning("%s", exc)
        for controller in (ControllerKind.TANGO, ControllerKind.FALLBACK_ONLY):
            specs += [RunSpec("clutter", e, Regime.GT_METRIC, controller, b.budget)
                      for e in cluttered]
    if "switch" in suites and b.switch_category in keep:
        for e in switch_episodes(cfg):
            for enabled in (True, False):
                specs.append(RunSpec("switch", e, Regime.GT_METRIC, ControllerKind.TANGO,
                                     b.ablation_budget, enabled))
    if "alt" in suites:
        regime = Regime(b.alt_regime)
        for e in eps:
            if e.category.value not in b.alt_categories:
                continue
            try:
                alt = select_alt_goal(e, teach_frames(e, cfg), b.alt_tail_fraction, cfg.min_area,
                                      b.success_radius)
            except AltGoalUnavailable as exc:
                log.warning("%s", exc)
                continue
            specs.append(RunSpec("alt", e, regime, ControllerKind.TANGO, b.budget, True, alt))
            specs.append(RunSpec("alt_teach", e, regime, ControllerKind.TANGO, b.budget))
    return specs


def execute(spec: RunSpec, cfg: BenchConfig) -> EpisodeResult:
    ep = spec.episode
    regime = RegimeConfig.for_regime(spec.regime, ep.world, cfg.noise, ep.noise_seed)
    return run_episode(ep, regime, spec.controller, spec.budget, spec.switch_enabled, cfg,
                       goal_instance=spec.goal)


def result_row(spec: RunSpec, result: EpisodeResult) -> dict:
    return {
        "suite": spec.suite,
        "regime": spec.regime.value,
        "controller": spec.controller_label,
        "category": spec.episode.category.value,
        "episode": spec.episode.episode_id,
        "goal": spec.goal,
        "success": result.success,
        "steps": result.steps,
        "final_distance": round(result.final_distance, 6),
        "switch_count": result.switch_count,
    }


def trace_header(spec: RunSpec, cfg: BenchConfig) -> dict:
    ep = spec.episode
    return {
        "run": spec.run_id,
        "suite": spec.suite,
        "episode": ep.episode_id,
        "world_seed": ep.world_seed,
        "world_kind": "corridor" if ep.world_params == cfg.corridor_world else "rooms",
        "clutter": [[list(rc) for rc in fp] for fp in ep.clutter],
        "goal": spec.goal,
        "category": ep.category.value,
        "regime": spec.regime.value,
        "controller": spec.controller_label,
        "budget": spec.budget,
        "start": [round(v, 6) for v in (ep.start.x, ep.start.y, ep.start.theta)],
        "teach": [[round(v, 6) for v in (p.x, p.y, p.theta)] for p in ep.teach_path],
    }


def trace_path(out_dir: Path, spec: RunSpec) -> Path:
    return out_dir / "traces" / f"{spec.run_id}.jsonl"


def _execute_packed(args: tuple[RunSpec, BenchConfig]) -> EpisodeResult:
    return execute(*args)


def run_specs(specs: Sequence[RunSpec], cfg: BenchConfig, workers: int = 1) -> Iterable[EpisodeResult]:
    if workers <= 1:
        return (execute(s, cfg) for s in specs)
    pool = ProcessPoolExecutor(workers)
    return pool.map(_execute_packed, [(s, cfg) for s in specs], chunksize=1)


def run_bench(cfg: BenchConfig, out_dir: str | Path, suites: Sequence[str] = SUITES,
              categories: Sequence[str] | None = None, traces: bool = True,
              workers: int = 1) -> list[dict]:
    """Plan and execute the benchmark, writing traces, summary.json and summary.txt."""
    out = Path(out_dir)
    specs = plan_runs(cfg, suites, categories)
    log.info("planned %d runs", len(specs))
    unique: dict[tuple, RunSpec] = {}
    for spec in specs:
        unique.setdefault(spec.identity, spec)
    results: dict[tuple, EpisodeResult] = {}
    t0 = time.perf_counter()
    todo = list(unique.values())
    for k, (spec, result) in enumerate(zip(todo, run_specs(todo, cfg, workers)), 1):
        results[spec.identity] = result
        if k % 25 == 0 or k == len(todo):
            log.info("%d/%d runs done (%.0f s)", k, len(todo), time.perf_counter() - t0)
    rows = []
    for spec in specs:
        result = results[spec.identity]
        row = result_row(spec, result)
        rows.append(row)
        if traces:
            write_trace(trace_path(out, spec), trace_header(spec, cfg),
                        (r.to_json() for r in result.trace), _result_fields(row))
    expected = {(s.suite, s.regime.value, s.controller_label, s.episode.category.value)
                for s in specs}
    write_summary(out, aggregate(rows, expected), rows, config_to_dict(cfg))
    return rows


def _result_fields(row: dict) -> dict:
    return {k: row[k] for k in ("success", "steps", "final_distance", "switch_count")}


def category_names(values: Iterable[str]) -> list[str]:
    return [Category(v).value for v in values]
