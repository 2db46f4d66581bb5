"""Trace files, success-rate aggregation and the summary table."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

TRACE_FORMAT = "topometric-trace"
SUMMARY_FORMAT = "topometric-summary"
SCHEMA_VERSION = 1

SUITE_ORDER = ("main", "fallback", "clutter", "switch", "alt", "alt_teach")
REGIME_ORDER = ("gt_metric", "gt_topological", "noisy")
CONTROLLER_ORDER = ("tango", "tango_noswitch", "fallback_only")
CATEGORY_ORDER = ("easy", "hard", "full")


def _rank(order: Sequence[str], value: str) -> tuple[int, str]:
    return (order.index(value) if value in order else len(order), value)


def group_key(row: dict) -> tuple[str, str, str, str]:
    return row["suite"], row["regime"], row["controller"], row["category"]


def _sort_key(key: tuple[str, str, str, str]):
    return (_rank(SUITE_ORDER, key[0]), _rank(REGIME_ORDER, key[1]),
            _rank(CONTROLLER_ORDER, key[2]), _rank(CATEGORY_ORDER, key[3]))


@dataclass(frozen=True)
class GroupStats:
    suite: str
    regime: str
    controller: str
    category: str
    n: int
    successes: int
    success_rate: float
    mean_steps: float
    mean_switches: float


def aggregate(rows: Iterable[dict], expected: Iterable[tuple[str, str, str, str]] = ()
              ) -> list[GroupStats]:
    """Per (suite, regime, controller, category) success percentage, mean steps and switches.

    Groups listed in ``expected`` without any result are omitted with a warning.
    """
    groups: dict[tuple[str, str, str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault(group_key(row), []).append(row)
    for key in expected:
        if key not in groups:
            log.warning("no results for group %s; row omitted", "/".join(key))
    out = []
    for key in sorted(groups, key=_sort_key):
        g = groups[key]
        wins = sum(1 for r in g if r["success"])
        out.append(GroupStats(
            *key, n=len(g), successes=wins,
            success_rate=round(100.0 * wins / len(g), 2),
            mean_steps=round(sum(r["steps"] for r in g) / len(g), 2),
            mean_switches=round(sum(r["switch_count"] for r in g) / len(g), 2),
        ))
    return out


def lookup(stats: Iterable[GroupStats], suite: str, regime: str, controller: str,
           category: str) -> GroupStats | None:
    for s in stats:
        if (s.suite, s.regime, s.controller, s.category) == (suite, regime, controller, category):
            return s
    return None


def format_table(stats: Sequence[GroupStats]) -> str:
    head = ("suite", "regime", "controller", "category", "n", "success%", "steps", "switches")
    body = [(s.suite, s.regime, s.controller, s.category, str(s.n), f"{s.success_rate:.2f}",
             f"{s.mean_steps:.2f}", f"{s.mean_switches:.2f}") for s in stats]
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    numeric = {4, 5, 6, 7}

    def line(cells):
        return "  ".join(c.rjust(w) if i in numeric else c.ljust(w)
                         for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(head), rule, *(line(r) for r in body)]) + "\n"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_trace(path: Path, header: dict, records: Iterable[dict], result: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {"format": TRACE_FORMAT, "version": SCHEMA_VERSION, **header}
    lines = [dumps(head), *(dumps(r) for r in records), dumps({"result": result})]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: Path) -> tuple[dict, list[dict], dict | None]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty trace")
    header = json.loads(lines[0])
    if header.get("format") != TRACE_FORMAT:
        raise ValueError(f"{path}: not a trace file")
    if header.get("version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported trace version {header.get('version')}")
    records, result = [], None
    for text in lines[1:]:
        obj = json.loads(text)
        if "result" in obj:
            result = obj["result"]
        else:
            records.append(obj)
    return header, records, result


def write_summary(out_dir: Path, stats: Sequence[GroupStats], rows: Sequence[dict],
                  config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": SUMMARY_FORMAT,
        "version": SCHEMA_VERSION,
        "config": config,
        "groups": [asdict(s) for s in stats],
        "runs": list(rows),
    }
    (out_dir / "summary.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                                          encoding="utf-8")
    (out_dir / "summary.txt").write_text(format_table(stats), encoding="utf-8")


def read_summary(out_dir: Path) -> tuple[list[GroupStats], list[dict], dict]:
    doc = json.loads((Path(out_dir) / "summary.json").read_text(encoding="utf-8"))
    if doc.get("format") != SUMMARY_FORMAT or doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"{out_dir}: not a summary file of version {SCHEMA_VERSION}")
    return [GroupStats(**g) for g in doc["groups"]], doc["runs"], doc["config"]
