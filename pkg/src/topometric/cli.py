"""Command line: gen-worlds, map, run, bench, plot."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .bench.episodes import Regime, RegimeConfig, load_world, select_alt_goal
from .bench.plot import plot_result, plot_trace
from .bench.report import read_trace, write_trace
from .bench.runner import ControllerKind, build_teach_map, teach_frames
from .bench.suite import (
    SUITES,
    RunSpec,
    execute,
    main_episodes,
    result_row,
    run_bench,
    switch_episodes,
    trace_header,
)
from .config import BenchConfig, load_config
from .simworld import generate_world, with_extra_obstacles

log = logging.getLogger("topometric")


def _config(args) -> BenchConfig:
    cfg = load_config(args.config)
    bench = cfg.bench
    if getattr(args, "seed", None) is not None:
        bench = dataclasses.replace(bench, seed=args.seed)
    if getattr(args, "budget", None) is not None:
        bench = dataclasses.replace(bench, budget=args.budget)
    return dataclasses.replace(cfg, bench=bench)


def _find_episode(cfg: BenchConfig, episode_id: str):
    pool = switch_episodes(cfg) if episode_id.startswith("c") else main_episodes(cfg)
    for ep in pool:
        if ep.episode_id == episode_id:
            return ep
    known = ", ".join(e.episode_id for e in pool[:6])
    raise SystemExit(f"unknown episode {episode_id!r} (e.g. {known}, ...)")


def cmd_gen_worlds(args) -> int:
    cfg = _config(args)
    params = cfg.corridor_world if args.kind == "corridor" else cfg.world
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        seed = args.seed * 1000 + k if args.seed is not None else k
        world = generate_world(seed, params)
        (out / f"world_{seed}.txt").write_text(world.to_text(), encoding="utf-8")
        print(f"world_{seed}.txt  {world.shape[0]}x{world.shape[1]}  "
              f"{len(world.instances)} instances")
    return 0


def cmd_map(args) -> int:
    cfg = _config(args)
    ep = _find_episode(cfg, args.episode)
    regime = RegimeConfig.for_regime(Regime(args.regime), ep.world, cfg.noise, ep.noise_seed)
    teach = build_teach_map(ep, regime, cfg)
    Path(args.out).write_text(teach.graph.to_text(), encoding="utf-8")
    g = teach.graph
    print(f"{ep.episode_id}: {g.frame_count} frames, {len(g.nodes)} nodes, {len(g.edges)} edges, "
          f"goal node {g.goal_node}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    ep = _find_episode(cfg, args.episode)
    goal = None
    if args.alt_goal:
        goal = select_alt_goal(ep, teach_frames(ep, cfg), cfg.bench.alt_tail_fraction, cfg.min_area,
                               cfg.bench.success_radius)
    controller = ControllerKind(args.controller)
    spec = RunSpec("run", ep, Regime(args.regime), controller,
                   cfg.bench.budget, not args.no_switch, goal)
    result = execute(spec, cfg)
    row = result_row(spec, result)
    out = Path(args.out)
    name = f"{spec.regime.value}-{spec.controller_label}-{ep.episode_id}"
    write_trace(out / f"{name}.jsonl", trace_header(spec, cfg),
                (r.to_json() for r in result.trace),
                {k: row[k] for k in ("success", "steps", "final_distance", "switch_count")})
    if args.svg and result.trace:
        plot_result(result, ep.run_world(), out / f"{name}.svg", ep.teach_path, ep.start, spec.goal)
    print(f"{ep.episode_id} {spec.regime.value} {spec.controller_label}: "
          f"{'success' if result.success else 'failure'} in {result.steps} steps, "
          f"final distance {result.final_distance:.2f} m, {result.switch_count} switches")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    suites = args.suites.split(",") if args.suites else SUITES
    cats = args.categories.split(",") if args.categories else None
    run_bench(cfg, args.out, suites, cats, traces=not args.no_traces, workers=args.workers)
    print((Path(args.out) / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_plot(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    for trace in args.trace:
        header, records, _ = read_trace(Path(trace))
        if not records:
            log.warning("%s has no steps; skipped", trace)
            continue
        params = cfg.corridor_world if header["world_kind"] == "corridor" else cfg.world
        world = load_world(header["world_seed"], params)
        if header.get("clutter"):
            world = with_extra_obstacles(world, [[tuple(rc) for rc in fp] for fp in header["clutter"]])
        target = out / (Path(trace).stem + ".svg") if out.suffix != ".svg" else out
        plot_trace(header, records, world, target)
        print(target)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topometric", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override bench seed")
        return sp

    g = common(sub.add_parser("gen-worlds", help="generate worlds and write them as text"))
    g.add_argument("--count", type=int, default=4)
    g.add_argument("--kind", choices=("rooms", "corridor"), default="rooms")
    g.add_argument("--out", default="worlds")
    g.set_defaults(func=cmd_gen_worlds)

    m = common(sub.add_parser("map", help="build the teach map of one episode"))
    m.add_argument("--episode", required=True, help="episode id, e.g. w00-g0-easy")
    m.add_argument("--regime", choices=[r.value for r in Regime], default="gt_topological")
    m.add_argument("--out", default="map.txt")
    m.set_defaults(func=cmd_map)

    r = common(sub.add_parser("run", help="run one episode"))
    r.add_argument("--episode", required=True)
    r.add_argument("--regime", choices=[x.value for x in Regime], default="gt_metric")
    r.add_argument("--controller", choices=[c.value for c in ControllerKind], default="tango")
    r.add_argument("--no-switch", action="store_true", help="metric control only")
    r.add_argument("--alt-goal", action="store_true", help="replace the goal by its alt goal")
    r.add_argument("--budget", type=int)
    r.add_argument("--svg", action="store_true", help="also write a trajectory plot")
    r.add_argument("--out", default="runs")
    r.set_defaults(func=cmd_run)

    b = common(sub.add_parser("bench", help="run benchmark suites"))
    b.add_argument("--suites", help=f"comma list from {','.join(SUITES)}")
    b.add_argument("--categories", help="comma list from easy,hard,full")
    b.add_argument("--budget", type=int)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--no-traces", action="store_true")
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)

    pl = common(sub.add_parser("plot", help="SVG plots from trace files"))
    pl.add_argument("trace", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
