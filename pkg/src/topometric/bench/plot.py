"""Deterministic SVG trajectory plots."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..simworld import WALL, SemanticClass, World

MODE_COLORS = {"metric": "#1f77b4", "fallback": "#ff7f0e"}
CLASS_COLORS = {
    SemanticClass.FURNITURE: "#a0785a",
    SemanticClass.FIXTURE: "#c8b48c",
    SemanticClass.CLUTTER: "#d62728",
    SemanticClass.RUG: "#e8dcc8",
}


def _f(v: float) -> str:
    return f"{v:.3f}"


def _runs(mask: np.ndarray) -> Iterable[tuple[int, int, int]]:
    """Horizontal runs ``(row, first_col, length)`` of true cells."""
    for r, row in enumerate(mask):
        c = 0
        n = len(row)
        while c < n:
            if row[c]:
                start = c
                while c < n and row[c]:
                    c += 1
                yield r, start, c - start
            else:
                c += 1


def mode_spans(modes: Sequence[str]) -> list[tuple[str, int, int]]:
    """Maximal runs ``(mode, first_index, last_index)`` of equal modes."""
    spans = []
    for i, m in enumerate(modes):
        if spans and spans[-1][0] == m:
            spans[-1] = (m, spans[-1][1], i)
        else:
            spans.append((m, i, i))
    return spans


def emit_plot(poses: Sequence[tuple[float, float]], modes: Sequence[str], world: World,
              path: str | Path, teach: Sequence[tuple[float, float]] = (),
              start: tuple[float, float] | None = None, goal_instance: int | None = None,
              px_per_m: float = 40.0) -> Path:
    """Top-down SVG of the world, the teach path and the executed path coloured by controller mode."""
    if len(poses) == 0:
        raise ValueError("nothing to plot: empty trace")
    if len(poses) != len(modes):
        raise ValueError("poses and modes differ in length")
    s = world.cell_size * px_per_m
    rows, cols = world.shape
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(cols * s)}" height="{_f(rows * s)}" '
        f'viewBox="0 0 {_f(cols * s)} {_f(rows * s)}">',
        f'<rect x="0" y="0" width="{_f(cols * s)}" height="{_f(rows * s)}" fill="#ffffff"/>',
    ]
    for r, c, n in _runs(world.occupancy == WALL):
        out.append(f'<rect x="{_f(c * s)}" y="{_f(r * s)}" width="{_f(n * s)}" height="{_f(s)}" '
                   f'fill="#404040"/>')
    for inst in sorted(world.instances, key=lambda i: i.instance_id):
        color = CLASS_COLORS.get(inst.semantic_class)
        if color is None and inst.instance_id != goal_instance:
            continue
        if inst.instance_id == goal_instance:
            color = "#2ca02c"
        for r, c in inst.footprint:
            out.append(f'<rect x="{_f(c * s)}" y="{_f(r * s)}" width="{_f(s)}" height="{_f(s)}" '
                       f'fill="{color}"/>')
    scale = px_per_m

    def pts(seq):
        return " ".join(f"{_f(x * scale)},{_f(y * scale)}" for x, y in seq)

    if len(teach) > 1:
        out.append(f'<polyline points="{pts(teach)}" fill="none" stroke="#999999" '
                   f'stroke-width="2" stroke-dasharray="6,4"/>')
    origin = [start] if start is not None else []
    for mode, i, j in mode_spans(list(modes)):
        seg = (origin if i == 0 else [poses[i - 1]]) + list(poses[i:j + 1])
        if len(seg) == 1:
            seg = seg * 2
        out.append(f'<polyline points="{pts(seg)}" fill="none" '
                   f'stroke="{MODE_COLORS.get(mode, "#000000")}" stroke-width="3" '
                   f'data-mode="{mode}"/>')
    if start is not None:
        out.append(f'<circle cx="{_f(start[0] * scale)}" cy="{_f(start[1] * scale)}" r="6" '
                   f'fill="#1f3fbf"/>')
    end = poses[-1]
    out.append(f'<circle cx="{_f(end[0] * scale)}" cy="{_f(end[1] * scale)}" r="4" fill="#000000"/>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


def plot_result(result, world: World, path: str | Path, teach=(), start=None,
                goal_instance: int | None = None) -> Path:
    """``emit_plot`` for an in-memory ``EpisodeResult``."""
    poses = [(r.pose.x, r.pose.y) for r in result.trace]
    modes = [r.mode.value for r in result.trace]
    return emit_plot(poses, modes, world, path, [(p.x, p.y) for p in teach],
                     None if start is None else (start.x, start.y), goal_instance)


def plot_trace(header: dict, records: Sequence[dict], world: World, path: str | Path) -> Path:
    """``emit_plot`` for a trace file's header and step records."""
    return emit_plot([(r["x"], r["y"]) for r in records], [r["mode"] for r in records], world,
                     path, [(t[0], t[1]) for t in header.get("teach", [])],
                     tuple(header["start"][:2]), header.get("goal"))
