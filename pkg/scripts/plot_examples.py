"""Run a handful of episodes and write their trajectory plots.

    python scripts/plot_examples.py --config configs/desk.yaml --out plots
"""

import argparse
from pathlib import Path

from topometric.bench.episodes import Regime
from topometric.bench.plot import plot_result
from topometric.bench.runner import ControllerKind
from topometric.bench.suite import RunSpec, execute, main_episodes
from topometric.config import load_config


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--config", default="configs/desk.yaml")
    p.add_argument("--out", default="plots")
    p.add_argument("--count", type=int, default=3)
    p.add_argument("--regime", default="gt_metric", choices=[r.value for r in Regime])
    args = p.parse_args()
    cfg = load_config(args.config)
    out = Path(args.out)
    for ep in main_episodes(cfg)[: args.count]:
        spec = RunSpec("examples", ep, Regime(args.regime), ControllerKind.TANGO, cfg.bench.budget)
        result = execute(spec, cfg)
        if not result.trace:
            continue
        path = plot_result(result, ep.run_world(), out / f"{ep.episode_id}.svg",
                           ep.teach_path, ep.start, ep.goal_instance)
        print(f"{path}  {'success' if result.success else 'failure'} in {result.steps} steps, "
              f"{result.switch_count} switches")


if __name__ == "__main__":
    main()
