"""Deterministic 2.5D indoor worlds.

Worlds are occupancy grids of free, wall and obstacle cells. Obstacles are
vertical prisms standing on a flat floor, walls reach the ceiling. The
renderer casts one ray per image column through the grid (DDA) and produces
an instance-id image plus a planar z-depth image for a zero-pitch camera.

World frame: ``x`` grows with the column index, ``y`` with the row index,
and heading ``theta`` is measured from +x towards +y. The camera's right
hand side is ``theta + pi/2``, so a positive yaw rate turns the view
towards larger image ``u``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .config import CameraModel, WorldGenParams

log = logging.getLogger(__name__)

FREE, WALL, OBSTACLE = 0, 1, 2

NONE_ID = 0
FLOOR_ID = 1
CEILING_ID = 2

ROBOT_RADIUS = 0.2

# face index = side of the cell a ray enters through: -x, +x, -y, +y
_FACE_OFFSETS = ((0, -1), (0, 1), (-1, 0), (1, 0))

WORLD_FORMAT = "topometric-world v1"


class SemanticClass(enum.Enum):
    FLOOR = "floor"
    CEILING = "ceiling"
    WALL = "wall"
    FURNITURE = "furniture"
    FIXTURE = "fixture"
    RUG = "rug"
    CLUTTER = "clutter"


STUFF_CLASSES = frozenset({SemanticClass.FLOOR, SemanticClass.CEILING})


class WorldGenerationError(RuntimeError):
    pass


class Unreachable(RuntimeError):
    pass


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.remainder(theta, 2 * math.pi)
    return math.pi if t <= -math.pi else t


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", normalize_angle(self.theta))


@dataclass(frozen=True)
class ObjectInstance:
    instance_id: int
    semantic_class: SemanticClass
    footprint: tuple[tuple[int, int], ...]
    height: float
    face: int | None = None

    def __post_init__(self) -> None:
        if not self.footprint:
            raise ValueError(f"instance {self.instance_id} has an empty footprint")
        if self.semantic_class not in (SemanticClass.FLOOR, SemanticClass.RUG) and self.height <= 0:
            raise ValueError(f"instance {self.instance_id} needs a positive height")


@dataclass(frozen=True)
class ControlCommand:
    linear_v: float = 0.0
    yaw_rate: float = 0.0


@dataclass(frozen=True, eq=False)
class Observation:
    instance_image: np.ndarray
    depth_image: np.ndarray
    pose: Pose2D


@dataclass(frozen=True, eq=False)
class World:
    seed: int
    cell_size: float
    occupancy: np.ndarray
    instances: tuple[ObjectInstance, ...]
    wall_height: float = 2.5
    floor_instance_id: int = FLOOR_ID
    ceiling_instance_id: int = CEILING_ID
    spawn_clearance: float = ROBOT_RADIUS

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @cached_property
    def by_id(self) -> dict[int, ObjectInstance]:
        return {inst.instance_id: inst for inst in self.instances}

    @cached_property
    def semantics(self) -> dict[int, SemanticClass]:
        return {inst.instance_id: inst.semantic_class for inst in self.instances}

    @cached_property
    def obstacle_id(self) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=np.int32)
        for inst in self.instances:
            if inst.semantic_class in (SemanticClass.FURNITURE, SemanticClass.FIXTURE,
                                       SemanticClass.CLUTTER):
                r, c = np.array(inst.footprint).T
                grid[r, c] = inst.instance_id
        return grid

    @cached_property
    def obstacle_height(self) -> np.ndarray:
        heights = np.zeros(self.shape)
        for inst in self.instances:
            if inst.instance_id in self._obstacle_ids:
                r, c = np.array(inst.footprint).T
                heights[r, c] = inst.height
        return heights

    @cached_property
    def _obstacle_ids(self) -> frozenset[int]:
        return frozenset(np.unique(self.obstacle_id[self.obstacle_id > 0]).tolist())

    @cached_property
    def rug_id(self) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=np.int32)
        for inst in self.instances:
            if inst.semantic_class is SemanticClass.RUG:
                r, c = np.array(inst.footprint).T
                grid[r, c] = inst.instance_id
        return grid

    @cached_property
    def has_rugs(self) -> bool:
        return bool(self.rug_id.any())

    @cached_property
    def wall_face_id(self) -> np.ndarray:
        grid = np.zeros((4,) + self.shape, dtype=np.int32)
        for inst in self.instances:
            if inst.semantic_class is SemanticClass.WALL:
                r, c = np.array(inst.footprint).T
                grid[inst.face, r, c] = inst.instance_id
        return grid

    @cached_property
    def free(self) -> np.ndarray:
        return self.occupancy == FREE

    @cached_property
    def spawnable(self) -> np.ndarray:
        """Free cells whose centre keeps ``spawn_clearance`` from every solid cell."""
        return clearance_mask(self, self.spawn_clearance)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size

    def is_free_point(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        rows, cols = self.shape
        return 0 <= r < rows and 0 <= c < cols and self.occupancy[r, c] == FREE

    def instances_of(self, *classes: SemanticClass) -> list[ObjectInstance]:
        return [i for i in self.instances if i.semantic_class in classes]

    def check_invariants(self) -> None:
        """Raise ``AssertionError`` if a structural invariant is broken."""
        ids = [inst.instance_id for inst in self.instances]
        assert len(ids) == len(set(ids)), "duplicate instance ids"
        obstacle_cells = self.occupancy == OBSTACLE
        assert np.all(self.obstacle_id[obstacle_cells] > 0), "obstacle cell without instance"
        assert np.all(self.obstacle_id[~obstacle_cells] == 0), "instance footprint off obstacle cells"
        for inst in self.instances:
            if inst.instance_id in self._obstacle_ids:
                r, c = np.array(inst.footprint).T
                assert np.all(self.occupancy[r, c] == OBSTACLE)
        assert self.spawnable.any(), "no spawnable cell"
        labels, n = ndimage.label(self.spawnable)
        assert n == 1, f"spawnable space split into {n} components"
        labels, n = ndimage.label(self.free)
        assert n == 1, f"free space split into {n} components"

    # -- serialization -------------------------------------------------
    def to_text(self) -> str:
        chars = {FREE: ".", WALL: "#", OBSTACLE: "o"}
        lines = [
            WORLD_FORMAT,
            f"seed {self.seed}",
            f"cell_size {self.cell_size!r}",
            f"wall_height {self.wall_height!r}",
            f"spawn_clearance {self.spawn_clearance!r}",
            f"shape {self.shape[0]} {self.shape[1]}",
            "grid",
        ]
        for row in self.occupancy:
            lines.append("".join(chars[int(v)] for v in row))
        stored = [i for i in self.instances if i.semantic_class not in STUFF_CLASSES]
        lines.append(f"instances {len(stored)}")
        for inst in stored:
            face = "-" if inst.face is None else str(inst.face)
            cells = " ".join(f"{r},{c}" for r, c in inst.footprint)
            lines.append(
                f"{inst.instance_id} {inst.semantic_class.value} {inst.height!r} {face} {cells}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> World:
        lines = text.splitlines()
        if not lines or lines[0] != WORLD_FORMAT:
            raise ValueError("not a topometric world file (or unsupported version)")
        head = {}
        i = 1
        while lines[i] != "grid":
            key, _, value = lines[i].partition(" ")
            head[key] = value
            i += 1
        rows, cols = map(int, head["shape"].split())
        inv = {".": FREE, "#": WALL, "o": OBSTACLE}
        occ = np.array([[inv[ch] for ch in lines[i + 1 + r]] for r in range(rows)], dtype=np.int8)
        if occ.shape != (rows, cols):
            raise ValueError("grid shape does not match header")
        i += 1 + rows
        count = int(lines[i].split()[1])
        insts = []
        for line in lines[i + 1: i + 1 + count]:
            parts = line.split()
            cells = tuple(tuple(int(v) for v in p.split(",")) for p in parts[4:])
            insts.append(ObjectInstance(
                int(parts[0]), SemanticClass(parts[1]), cells, float(parts[2]),
                None if parts[3] == "-" else int(parts[3]),
            ))
        return _assemble(int(head["seed"]), float(head["cell_size"]), occ, insts,
                         float(head["wall_height"]), float(head["spawn_clearance"]))

    @classmethod
    def from_ascii(cls, rows: Sequence[str], cell_size: float = 0.25, seed: int = 0,
                   heights: dict[str, float] | None = None, wall_height: float = 2.5,
                   spawn_clearance: float = ROBOT_RADIUS) -> World:
        """Build a world from a character map.

        ``#`` is wall, ``.`` free, and any other character marks an obstacle
        cell; each distinct obstacle character becomes one furniture
        instance (height from ``heights``, default 1.5 m).
        """
        heights = heights or {}
        occ = np.zeros((len(rows), len(rows[0])), dtype=np.int8)
        cells: dict[str, list[tuple[int, int]]] = {}
        for r, line in enumerate(rows):
            for c, ch in enumerate(line):
                if ch == "#":
                    occ[r, c] = WALL
                elif ch != ".":
                    occ[r, c] = OBSTACLE
                    cells.setdefault(ch, []).append((r, c))
        insts = []
        next_id = 10_000
        for ch in sorted(cells):
            insts.append(ObjectInstance(next_id, SemanticClass.FURNITURE, tuple(cells[ch]),
                                        heights.get(ch, 1.5)))
            next_id += 1
        return _assemble(seed, cell_size, occ, insts, wall_height, spawn_clearance)


def _wall_instances(occ: np.ndarray, chunk: int, first_id: int, height: float) -> list[ObjectInstance]:
    rows, cols = occ.shape
    groups: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
    wall_r, wall_c = np.nonzero(occ == WALL)
    for r, c in zip(wall_r.tolist(), wall_c.tolist()):
        for face, (dr, dc) in enumerate(_FACE_OFFSETS):
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols and occ[nr, nc] != WALL:
                groups.setdefault((r // chunk, c // chunk, face), []).append((r, c))
    out = []
    for k, key in enumerate(sorted(groups)):
        out.append(ObjectInstance(first_id + k, SemanticClass.WALL, tuple(groups[key]), height,
                                  face=key[2]))
    return out


def _assemble(seed: int, cell_size: float, occ: np.ndarray, extra: Iterable[ObjectInstance],
              wall_height: float, spawn_clearance: float, wall_chunk: int = 8) -> World:
    """Attach floor, ceiling and wall-face instances to an occupancy grid."""
    extra = list(extra)
    walls = [i for i in extra if i.semantic_class is SemanticClass.WALL]
    others = [i for i in extra if i.semantic_class not in (SemanticClass.WALL,) + tuple(STUFF_CLASSES)]
    if not walls:
        walls = _wall_instances(occ, wall_chunk, 3, wall_height)
    free_cells = tuple(zip(*[v.tolist() for v in np.nonzero(occ == FREE)]))
    stuff = [
        ObjectInstance(FLOOR_ID, SemanticClass.FLOOR, free_cells, 0.0),
        ObjectInstance(CEILING_ID, SemanticClass.CEILING, free_cells, wall_height),
    ]
    insts = tuple(sorted(stuff + walls + others, key=lambda i: i.instance_id))
    occ = occ.copy()
    occ.setflags(write=False)
    return World(seed, cell_size, occ, insts, wall_height, spawn_clearance=spawn_clearance)


def with_extra_obstacles(world: World, footprints: Sequence[Sequence[tuple[int, int]]],
                         height: float = 1.0,
                         semantic_class: SemanticClass = SemanticClass.CLUTTER) -> World:
    """Return a copy of ``world`` with additional obstacle prisms on free cells."""
    occ = world.occupancy.copy()
    next_id = max(i.instance_id for i in world.instances) + 1
    added = []
    for cells in footprints:
        for r, c in cells:
            if occ[r, c] != FREE:
                raise ValueError(f"cell {(r, c)} is not free")
            occ[r, c] = OBSTACLE
        added.append(ObjectInstance(next_id, semantic_class, tuple(cells), height))
        next_id += 1
    # wall faces are unchanged: new prisms only ever stand on free cells
    keep = [i for i in world.instances if i.semantic_class not in STUFF_CLASSES]
    return _assemble(world.seed, world.cell_size, occ, keep + added, world.wall_height,
                     world.spawn_clearance)


# -- generation ---------------------------------------------------------------

@dataclass
class _Layout:
    occ: np.ndarray
    rooms: list[tuple[int, int, int, int]] = field(default_factory=list)
    corridors: list[tuple[int, int, int, int]] = field(default_factory=list)
    door_cells: set[tuple[int, int]] = field(default_factory=set)


def _carve_door(lay: _Layout, rng: np.random.Generator, horizontal: bool, line: int,
                lo: int, hi: int, width: int) -> None:
    # door keeps one wall cell from either end of the wall run [lo, hi)
    first, last = lo + 1, hi - 1 - width
    if last < first:
        raise WorldGenerationError("wall too short for a door")
    start = int(rng.integers(first, last + 1))
    for k in range(start, start + width):
        cell = (line, k) if horizontal else (k, line)
        lay.occ[cell] = FREE
        lay.door_cells.add(cell)


def _split_ok(lay: _Layout, horizontal: bool, lines: Sequence[int], lo: int, hi: int) -> bool:
    # a new wall must not end inside or next to an existing door
    for line in lines:
        for k in range(line - 2, line + 3):
            ends = [(k, lo - 1), (k, hi)] if horizontal else [(lo - 1, k), (hi, k)]
            if any(e in lay.door_cells for e in ends):
                return False
    return True


def _bsp_layout(rng: np.random.Generator, p: WorldGenParams) -> _Layout:
    occ = np.full((p.rows, p.cols), WALL, dtype=np.int8)
    occ[1:-1, 1:-1] = FREE
    lay = _Layout(occ)
    leaves = [(1, 1, p.rows - 1, p.cols - 1)]
    m = p.min_room_cells
    while len(leaves) < p.rooms:
        leaves.sort(key=lambda b: ((b[2] - b[0]) * (b[3] - b[1]), b))
        split = False
        for idx in range(len(leaves) - 1, -1, -1):
            r0, c0, r1, c1 = leaves[idx]
            h, w = r1 - r0, c1 - c0
            corridor = rng.random() < p.corridor_prob
            band = p.corridor_width_cells + 2 if corridor else 1
            options = []
            if h >= 2 * m + band:
                options.append(True)
            if w >= 2 * m + band:
                options.append(False)
            if not options:
                continue
            if len(options) == 2:
                horizontal = h > w if h != w else bool(rng.random() < 0.5)
            else:
                horizontal = options[0]
            lo, hi = (r0, r1) if horizontal else (c0, c1)
            span_lo, span_hi = (c0, c1) if horizontal else (r0, r1)
            candidates = [
                q for q in range(lo + m, hi - m - band + 1)
                if _split_ok(lay, horizontal, [q, q + band - 1], span_lo, span_hi)
            ]
            if not candidates:
                continue
            q = int(rng.choice(candidates))
            wall_lines = [q, q + band - 1] if corridor else [q]
            for line in wall_lines:
                if horizontal:
                    occ[line, span_lo:span_hi] = WALL
                else:
                    occ[span_lo:span_hi, line] = WALL
            for line in wall_lines:
                _carve_door(lay, rng, horizontal, line, span_lo, span_hi, p.door_width_cells)
            if horizontal:
                a, b = (r0, c0, q, c1), (q + band, c0, r1, c1)
                mid = (q + 1, c0, q + band - 1, c1)
            else:
                a, b = (r0, c0, r1, q), (r0, q + band, r1, c1)
                mid = (r0, q + 1, r1, q + band - 1)
            leaves[idx:idx + 1] = [a, b]
            if corridor:
                lay.corridors.append(mid)
            split = True
            break
        if not split:
            break
    lay.rooms = sorted(leaves)
    return lay


_SHAPES = ((1, 1), (1, 2), (2, 1), (1, 3), (3, 1))


def _connected(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask)
    return n == 1


def _layout_connected(occ: np.ndarray, p: WorldGenParams) -> bool:
    free = occ == FREE
    return _connected(free) and _connected(clearance_from_free(free, p.cell_size, p.clearance))


def generate_world(seed: int, params: WorldGenParams | None = None) -> World:
    """Generate a rooms-and-corridors world; identical inputs give identical worlds."""
    params = params or WorldGenParams()
    rng = np.random.default_rng(seed)
    for attempt in range(params.max_retries):
        try:
            return _generate_once(seed, rng, params)
        except WorldGenerationError as exc:
            log.debug("world %d attempt %d rejected: %s", seed, attempt, exc)
    raise WorldGenerationError(
        f"could not generate world for seed {seed} in {params.max_retries} attempts"
    )


def _generate_once(seed: int, rng: np.random.Generator, p: WorldGenParams) -> World:
    lay = _bsp_layout(rng, p)
    occ = lay.occ
    if not _layout_connected(occ, p):
        raise WorldGenerationError("base layout not connected")

    near_door = np.zeros_like(occ, dtype=bool)
    for r, c in lay.door_cells:
        near_door[max(r - 3, 0):r + 4, max(c - 3, 0):c + 4] = True

    obstacles: list[tuple[list[tuple[int, int]], float]] = []
    rooms = lay.rooms
    areas = np.array([(r1 - r0) * (c1 - c0) for r0, c0, r1, c1 in rooms], dtype=float)
    for _ in range(p.obstacles):
        placed = False
        for _try in range(40):
            r0, c0, r1, c1 = rooms[int(rng.choice(len(rooms), p=areas / areas.sum()))]
            h, w = _SHAPES[int(rng.integers(len(_SHAPES)))]
            if r1 - r0 < h or c1 - c0 < w:
                continue
            r = int(rng.integers(r0, r1 - h + 1))
            c = int(rng.integers(c0, c1 - w + 1))
            tall = rng.random() < 0.6
            height = float(rng.uniform(1.1, 2.0) if tall else rng.uniform(0.4, 0.8))
            cells = [(r + i, c + j) for i in range(h) for j in range(w)]
            if any(occ[cell] != FREE or near_door[cell] for cell in cells):
                continue
            for cell in cells:
                occ[cell] = OBSTACLE
            if _layout_connected(occ, p):
                obstacles.append((cells, height))
                placed = True
                break
            for cell in cells:
                occ[cell] = FREE
        if not placed:
            raise WorldGenerationError("could not place obstacle")

    walls = _wall_instances(occ, p.wall_chunk_cells, 3, p.wall_height)
    next_id = 3 + len(walls)
    insts: list[ObjectInstance] = list(walls)
    for cells, height in obstacles:
        touches_wall = any(
            occ[r + dr, c + dc] == WALL for r, c in cells for dr, dc in _FACE_OFFSETS
        )
        cls = SemanticClass.FIXTURE if touches_wall else SemanticClass.FURNITURE
        insts.append(ObjectInstance(next_id, cls, tuple(cells), height))
        next_id += 1
    for _ in range(p.rugs):
        for _try in range(40):
            r0, c0, r1, c1 = rooms[int(rng.integers(len(rooms)))]
            if r1 - r0 < 3 or c1 - c0 < 4:
                continue
            r = int(rng.integers(r0, r1 - 1))
            c = int(rng.integers(c0, c1 - 2))
            cells = [(r + i, c + j) for i in range(2) for j in range(3)]
            taken = {cell for inst in insts if inst.semantic_class is SemanticClass.RUG
                     for cell in inst.footprint}
            if any(occ[cell] != FREE or cell in taken for cell in cells):
                continue
            insts.append(ObjectInstance(next_id, SemanticClass.RUG, tuple(cells), 0.0))
            next_id += 1
            break
    world = _assemble(seed, p.cell_size, occ, insts, p.wall_height, p.clearance,
                      p.wall_chunk_cells)
    world.check_invariants()
    return world


# -- rendering ------------------------------------------------------------------

def render(world: World, camera: CameraModel, pose: Pose2D) -> Observation:
    """Render instance ids and planar z-depth for ``pose``."""
    if not world.is_free_point(pose.x, pose.y):
        raise ValueError(f"pose {pose} is not in free space")
    W, H = camera.width, camera.height
    s = world.cell_size
    fx, fy, cx, cy, cam_h = camera.fx, camera.fy, camera.cx, camera.cy, camera.cam_height

    off = np.arctan((np.arange(W) + 0.5 - cx) / fx)
    cos_off = np.cos(off)
    ang = pose.theta + off
    dx, dy = np.cos(ang), np.sin(ang)
    px, py = pose.x / s, pose.y / s
    ci = np.full(W, int(math.floor(px)))
    ri = np.full(W, int(math.floor(py)))
    step_c = np.where(dx > 0, 1, -1)
    step_r = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore"):
        inv_dx = np.where(dx != 0, 1.0 / np.where(dx != 0, dx, 1.0), np.inf)
        inv_dy = np.where(dy != 0, 1.0 / np.where(dy != 0, dy, 1.0), np.inf)
    tdc, tdr = np.abs(inv_dx), np.abs(inv_dy)
    tmax_c = np.where(dx > 0, (ci + 1 - px) * tdc, (px - ci) * tdc)
    tmax_r = np.where(dy > 0, (ri + 1 - py) * tdr, (py - ri) * tdr)
    tmax_c[~np.isfinite(tdc)] = np.inf
    tmax_r[~np.isfinite(tdr)] = np.inf

    occ = world.occupancy
    obst_id = world.obstacle_id
    obst_h = world.obstacle_height
    faces = world.wall_face_id
    cols = np.arange(W)
    wall_t = np.full(W, np.inf)
    wall_inst = np.zeros(W, dtype=np.int32)
    hit_col, hit_tin, hit_tout, hit_inst, hit_h = [], [], [], [], []
    for _ in range(sum(world.shape) + 2):
        if cols.size == 0:
            break
        xs = tmax_c < tmax_r
        t_in = np.where(xs, tmax_c, tmax_r)
        ci = np.where(xs, ci + step_c, ci)
        ri = np.where(xs, ri, ri + step_r)
        tmax_c = np.where(xs, tmax_c + tdc, tmax_c)
        tmax_r = np.where(xs, tmax_r, tmax_r + tdr)
        kind = occ[ri, ci]
        is_obst = kind == OBSTACLE
        if is_obst.any():
            hit_col.append(cols[is_obst])
            hit_tin.append(t_in[is_obst])
            hit_tout.append(np.minimum(tmax_c, tmax_r)[is_obst])
            hit_inst.append(obst_id[ri[is_obst], ci[is_obst]])
            hit_h.append(obst_h[ri[is_obst], ci[is_obst]])
        is_wall = kind == WALL
        if is_wall.any():
            face = np.where(xs, np.where(step_c > 0, 0, 1), np.where(step_r > 0, 2, 3))[is_wall]
            wr, wc = ri[is_wall], ci[is_wall]
            ids = faces[face, wr, wc]
            missing = ids == 0
            if missing.any():
                # ray slipped through a corner seam: take any face of that cell
                ids[missing] = faces[:, wr[missing], wc[missing]].max(axis=0)
            wall_t[cols[is_wall]] = t_in[is_wall]
            wall_inst[cols[is_wall]] = ids
            keep = ~is_wall
            cols, ci, ri = cols[keep], ci[keep], ri[keep]
            tmax_c, tmax_r = tmax_c[keep], tmax_r[keep]
            tdc, tdr = tdc[keep], tdr[keep]
            step_c, step_r = step_c[keep], step_r[keep]

    v = np.arange(H) + 0.5
    dv = v - cy
    below = dv > 0
    depth = np.empty((H, W))
    inst = np.empty((H, W), dtype=np.int32)
    with np.errstate(divide="ignore"):
        plane = np.where(below, fy * cam_h / dv, fy * (world.wall_height - cam_h) / -dv)
    depth[:] = plane[:, None]
    inst[below, :] = world.floor_instance_id
    inst[~below, :] = world.ceiling_instance_id

    wall_z = wall_t * s * cos_off
    closer = wall_z[None, :] < depth
    depth = np.where(closer, wall_z[None, :], depth)
    inst = np.where(closer, wall_inst[None, :], inst)

    if world.has_rugs:
        rows_b = np.nonzero(below)[0]
        sub = inst[rows_b] == world.floor_instance_id
        rr, cc = np.nonzero(sub)
        z = depth[rows_b[rr], cc]
        lat = (cc + 0.5 - cx) * z / fx
        gx = pose.x + z * math.cos(pose.theta) - lat * math.sin(pose.theta)
        gy = pose.y + z * math.sin(pose.theta) + lat * math.cos(pose.theta)
        gr = np.clip(np.floor(gy / s).astype(int), 0, world.shape[0] - 1)
        gc = np.clip(np.floor(gx / s).astype(int), 0, world.shape[1] - 1)
        rug = world.rug_id[gr, gc]
        on = rug > 0
        inst[rows_b[rr[on]], cc[on]] = rug[on]

    if hit_col:
        hc = np.concatenate(hit_col)
        z_in = np.concatenate(hit_tin) * s * cos_off[hc]
        z_out = np.concatenate(hit_tout) * s * cos_off[hc]
        hid = np.concatenate(hit_inst)
        hh = np.concatenate(hit_h)
        top_in = cy + fy * (cam_h - hh) / z_in
        cand = np.where(v[None, :] >= top_in[:, None], z_in[:, None], np.inf)
        low = hh < cam_h
        if low.any():
            with np.errstate(divide="ignore"):
                d_plane = np.where(below[None, :],
                                   fy * (cam_h - hh[:, None]) / np.where(below, dv, 1.0)[None, :],
                                   np.inf)
            top = (low[:, None] & below[None, :] & (v[None, :] < top_in[:, None])
                   & (d_plane <= z_out[:, None]) & (d_plane >= z_in[:, None]))
            cand = np.where(top, d_plane, cand)
        background = depth.copy()
        flat = depth.T.copy()  # (W, H) so hits index by column
        hit_rows = np.broadcast_to(np.arange(H), cand.shape)
        hit_cols = np.broadcast_to(hc[:, None], cand.shape)
        np.minimum.at(flat, (hit_cols, hit_rows), cand)
        depth = flat.T
        win = (cand == depth[hit_rows, hit_cols]) & (cand < background[hit_rows, hit_cols])
        inst[hit_rows[win], hit_cols[win]] = np.broadcast_to(hid[:, None], cand.shape)[win]

    return Observation(np.ascontiguousarray(inst), np.ascontiguousarray(depth), pose)


# -- kinematics -------------------------------------------------------------------

def _disc_offsets(cell_size: float, radius: float) -> list[tuple[int, int]]:
    """Cell offsets whose square lies closer than ``radius`` to the centre of cell (0, 0)."""
    k = int(math.ceil(radius / cell_size)) + 1
    out = []
    half = 0.5 * cell_size
    for dr in range(-k, k + 1):
        for dc in range(-k, k + 1):
            gx = max(abs(dc) * cell_size - half, 0.0)
            gy = max(abs(dr) * cell_size - half, 0.0)
            if math.hypot(gx, gy) < radius:
                out.append((dr, dc))
    return out


def clearance_mask(world: World, clearance: float) -> np.ndarray:
    """Free cells where a disc of radius ``clearance`` at the centre touches no solid cell."""
    return clearance_from_free(world.free, world.cell_size, clearance)


def clearance_from_free(free: np.ndarray, cell_size: float, clearance: float) -> np.ndarray:
    if clearance <= 0:
        return free.copy()
    offsets = _disc_offsets(cell_size, clearance)
    pad = max(max(abs(dr), abs(dc)) for dr, dc in offsets)
    rows, cols = free.shape
    padded = np.pad(free, pad, constant_values=False)
    ok = free.copy()
    for dr, dc in offsets:
        ok &= padded[pad + dr: pad + dr + rows, pad + dc: pad + dc + cols]
    return ok


def disc_collides(world: World, x: float, y: float, radius: float = ROBOT_RADIUS) -> bool:
    s = world.cell_size
    rows, cols = world.shape
    r_lo, r_hi = int(math.floor((y - radius) / s)), int(math.floor((y + radius) / s))
    c_lo, c_hi = int(math.floor((x - radius) / s)), int(math.floor((x + radius) / s))
    for r in range(r_lo, r_hi + 1):
        for c in range(c_lo, c_hi + 1):
            if 0 <= r < rows and 0 <= c < cols and world.occupancy[r, c] == FREE:
                continue
            gx = max(c * s - x, 0.0, x - (c + 1) * s)
            gy = max(r * s - y, 0.0, y - (r + 1) * s)
            if gx * gx + gy * gy < radius * radius:
                return True
    return False


def step_agent(world: World, pose: Pose2D, cmd: ControlCommand, dt: float,
               radius: float = ROBOT_RADIUS) -> tuple[Pose2D, bool]:
    """Unicycle update with a swept-disc collision check; a blocked move keeps the position."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dist = cmd.linear_v * dt
    nx = pose.x + dist * math.cos(pose.theta)
    ny = pose.y + dist * math.sin(pose.theta)
    theta = pose.theta + cmd.yaw_rate * dt
    collided = False
    if dist != 0.0:
        n = max(1, int(math.ceil(abs(dist) / (0.25 * radius))))
        for k in range(1, n + 1):
            f = k / n
            if disc_collides(world, pose.x + f * (nx - pose.x), pose.y + f * (ny - pose.y), radius):
                collided = True
                break
    if collided:
        return Pose2D(pose.x, pose.y, theta), True
    return Pose2D(nx, ny, theta), False


# -- geodesics --------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def grid_graph(mask: np.ndarray, corner_mask: np.ndarray | None = None) -> csr_matrix:
    """8-connected graph over ``mask`` cells, weights in cells; no corner cutting.

    A diagonal move needs both orthogonal neighbours in ``corner_mask``
    (defaults to ``mask``).
    """
    rows, cols = mask.shape
    corner = mask if corner_mask is None else corner_mask
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst, wts = [], [], []

    def add(a_sl, b_sl, extra, w):
        ok = mask[a_sl] & mask[b_sl]
        if extra is not None:
            ok &= extra
        src.append(idx[a_sl][ok])
        dst.append(idx[b_sl][ok])
        wts.append(np.full(int(ok.sum()), w))

    add((slice(None), slice(0, -1)), (slice(None), slice(1, None)), None, 1.0)
    add((slice(0, -1), slice(None)), (slice(1, None), slice(None)), None, 1.0)
    add((slice(0, -1), slice(0, -1)), (slice(1, None), slice(1, None)),
        corner[0:-1, 1:] & corner[1:, 0:-1], _SQRT2)
    add((slice(0, -1), slice(1, None)), (slice(1, None), slice(0, -1)),
        corner[0:-1, 0:-1] & corner[1:, 1:], _SQRT2)
    s = np.concatenate(src)
    d = np.concatenate(dst)
    w = np.concatenate(wts)
    n = rows * cols
    return csr_matrix((np.concatenate([w, w]), (np.concatenate([s, d]), np.concatenate([d, s]))),
                      shape=(n, n))


def distance_field(world: World, sources: Iterable[tuple[int, int]],
                   clearance: float = 0.0) -> np.ndarray:
    """Geodesic distance in metres from the nearest source cell to every cell.

    Paths run through free cells (optionally restricted by ``clearance``);
    source cells may be solid, which is how distances to an object
    footprint are measured. Unreachable cells are ``inf``.
    """
    passable = clearance_mask(world, clearance)
    src = list(sources)
    mask = passable.copy()
    for r, c in src:
        mask[r, c] = True
    graph = grid_graph(mask)
    cols = world.shape[1]
    flat = [r * cols + c for r, c in src]
    dist = dijkstra(graph, indices=flat, min_only=True)
    dist = dist.reshape(world.shape) * world.cell_size
    dist[~mask] = np.inf
    return dist


def geodesic_distance(world: World, a: Pose2D, b: Pose2D, clearance: float = 0.0) -> float:
    """Shortest 8-connected free-space path length between the cells of ``a`` and ``b``."""
    ca, cb = world.cell_of(a.x, a.y), world.cell_of(b.x, b.y)
    for pose in (a, b):
        if not world.is_free_point(pose.x, pose.y):
            raise ValueError(f"pose {pose} is not in free space")
    if ca == cb:
        return 0.0
    d = distance_field(world, [ca], clearance)[cb]
    if not math.isfinite(d):
        raise Unreachable(f"{a} and {b} are not connected")
    return float(d)


def footprint_distance(world: World, field_: np.ndarray, footprint: Iterable[tuple[int, int]]) -> float:
    """Distance from a distance field's sources to the nearest cell of a (solid) footprint."""
    rows, cols = world.shape
    best = math.inf
    s = world.cell_size
    for r, c in footprint:
        if math.isfinite(field_[r, c]):
            best = min(best, field_[r, c])
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if (dr or dc) and 0 <= nr < rows and 0 <= nc < cols and world.free[nr, nc]:
                    step = _SQRT2 if dr and dc else 1.0
                    best = min(best, field_[nr, nc] + step * s)
    return best


def grid_path(world: World, start: tuple[int, int], goal: tuple[int, int],
              clearance: float = 0.0) -> list[tuple[int, int]]:
    mask = clearance_mask(world, clearance)
    mask[start] = True
    mask[goal] = True
    graph = grid_graph(mask)
    cols = world.shape[1]
    s_idx, g_idx = start[0] * cols + start[1], goal[0] * cols + goal[1]
    dist, pred = dijkstra(graph, indices=s_idx, return_predecessors=True)
    if not math.isfinite(dist[g_idx]):
        raise Unreachable(f"no path from {start} to {goal}")
    path = [g_idx]
    while path[-1] != s_idx:
        path.append(int(pred[path[-1]]))
    return [divmod(i, cols) for i in reversed(path)]


def shortest_pose_path(world: World, a: Pose2D, b: Pose2D, spacing: float,
                       clearance: float = 0.0) -> list[Pose2D]:
    """Poses every ``spacing`` metres along the geodesic from ``a`` to ``b``.

    Headings follow the chord to the point one spacing further along the
    path, so they stay constant on straight runs and turn near corners.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    ca, cb = world.cell_of(a.x, a.y), world.cell_of(b.x, b.y)
    if ca == cb and math.hypot(a.x - b.x, a.y - b.y) < 1e-12:
        return [a]
    cells = grid_path(world, ca, cb, clearance)
    pts = [(a.x, a.y)] + [world.cell_center(r, c) for r, c in cells[1:-1]] + [(b.x, b.y)]
    pts = np.array(pts)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    keep = np.concatenate([[True], seg > 1e-12])
    pts = pts[keep]
    if len(pts) == 1:
        return [a]
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    total = arc[-1]
    n = int(math.floor(total / spacing + 1e-9)) + 1
    s_vals = np.arange(n) * spacing

    def at(sv: float) -> np.ndarray:
        sv = min(max(sv, 0.0), total)
        return np.array([np.interp(sv, arc, pts[:, 0]), np.interp(sv, arc, pts[:, 1])])

    poses = []
    for sv in s_vals:
        p = at(sv)
        ahead = at(sv + spacing)
        if np.hypot(*(ahead - p)) < 1e-9:
            ahead, p = p, at(sv - spacing)
        theta = math.atan2(ahead[1] - p[1], ahead[0] - p[0])
        q = at(sv)
        poses.append(Pose2D(float(q[0]), float(q[1]), theta))
    return poses
