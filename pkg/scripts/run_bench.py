"""Run every benchmark suite and print the summary table.

    python scripts/run_bench.py --config configs/desk.yaml --out bench_out
"""

import argparse
import logging
import time

from topometric.bench.suite import SUITES, run_bench
from topometric.config import load_config


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--config", default="configs/desk.yaml")
    p.add_argument("--out", default="bench_out")
    p.add_argument("--suites", default=",".join(SUITES))
    p.add_argument("--no-traces", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    run_bench(cfg, args.out, args.suites.split(","), traces=not args.no_traces)
    print(open(f"{args.out}/summary.txt", encoding="utf-8").read(), end="")
    print(f"elapsed {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
