"""Metric local control: traversability -> BEV cost map -> grid Dijkstra -> heading control.

BEV grid convention: row ``i`` is forward distance ``i * resolution``,
column ``j`` is lateral offset ``(j - cols // 2) * resolution`` (positive to
the right, matching image ``u``). The robot sits at the centre of cell
``(0, cols // 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .config import BevConfig, CameraModel, ControlParams
from .simworld import ControlCommand, SemanticClass
from .topograph import Segment

BLOCKED = math.inf
_SQRT2 = math.sqrt(2.0)


class EmptyTraversability(RuntimeError):
    pass


class SubgoalProjectionFailed(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TraversabilityMask:
    bits: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.bits.any()


def semantic_predicate(semantics: Mapping[int, SemanticClass],
                       classes: Iterable[SemanticClass | str]) -> Callable[[Segment], bool]:
    """Traversable iff the segment's instance belongs to one of ``classes``."""
    wanted = {SemanticClass(c) if isinstance(c, str) else c for c in classes}
    return lambda seg: semantics.get(seg.instance_id) in wanted


def classify_traversable(segments: Sequence[Segment], shape: tuple[int, int],
                         is_traversable: Callable[[Segment], bool]) -> TraversabilityMask:
    bits = np.zeros(shape, dtype=bool)
    for seg in segments:
        if is_traversable(seg):
            r, c = seg.pixels()
            bits[r, c] = True
    return TraversabilityMask(bits)


def unproject_pixels(u, v, z, camera: CameraModel):
    """Pinhole unprojection of continuous pixel coordinates.

    Returns ``(lateral, forward, height)`` with lateral positive to the right
    and height measured above the floor.
    """
    u, v, z = np.asarray(u, float), np.asarray(v, float), np.asarray(z, float)
    lateral = (u - camera.cx) * z / camera.fx
    height = camera.cam_height - (v - camera.cy) * z / camera.fy
    return lateral, z, height


def project(lateral, forward, height, camera: CameraModel):
    lateral, forward, height = (np.asarray(a, float) for a in (lateral, forward, height))
    u = camera.cx + camera.fx * lateral / forward
    v = camera.cy + camera.fy * (camera.cam_height - height) / forward
    return u, v


def bev_cells(points: np.ndarray, bev: BevConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid indices of ``(lateral, forward)`` points and a mask of those inside the extent."""
    points = np.asarray(points, float).reshape(-1, 2)
    i = np.floor(points[:, 1] / bev.resolution + 0.5).astype(np.int64)
    j = np.floor(points[:, 0] / bev.resolution + 0.5).astype(np.int64) + bev.cols // 2
    inside = (i >= 0) & (i < bev.rows) & (j >= 0) & (j < bev.cols)
    return i, j, inside


def cell_point(i, j, cols: int, resolution: float) -> np.ndarray:
    """Metric ``(lateral, forward)`` centre of BEV cell ``(i, j)``."""
    i, j = np.asarray(i), np.asarray(j)
    return np.stack([(j - cols // 2) * resolution, i * resolution], axis=-1)


def unproject(mask: np.ndarray, depth_image: np.ndarray, camera: CameraModel,
              bev: BevConfig) -> np.ndarray:
    """BEV ``(lateral, forward)`` points of the selected pixels that fall inside the extent."""
    rows, cols = np.nonzero(mask)
    z = depth_image[rows, cols]
    ok = np.isfinite(z) & (z > 0)
    lat, fwd, _ = unproject_pixels(cols[ok] + 0.5, rows[ok] + 0.5, z[ok], camera)
    pts = np.stack([lat, fwd], axis=1)
    return pts[bev_cells(pts, bev)[2]]


def traversable_points(trav: TraversabilityMask, depth_image: np.ndarray, camera: CameraModel,
                       bev: BevConfig, ground_tol: float = 0.1) -> tuple[np.ndarray, bool]:
    """Dense BEV points on traversable ground.

    Pixel centres are unprojected with their depth. Far floor rows spread
    over several BEV cells each, so every cell centre is also projected onto
    the image as a ground point and kept when it lands on a traversable
    pixel whose depth puts it on the ground (within ``ground_tol``). With
    ``fill_blind_zone`` cells below the bottom image row look up the bottom
    row along their bearing.

    Returns the points and whether the ground right in front of the robot
    was observed free.
    """
    bits = trav.bits
    H, W = bits.shape
    ok = bits & np.isfinite(depth_image) & (depth_image > 0)
    rows, cols = np.nonzero(ok)
    lat, fwd, _ = unproject_pixels(cols + 0.5, rows + 0.5, depth_image[rows, cols], camera)
    direct = np.stack([lat, fwd], axis=1)

    ground = np.zeros(ok.shape, dtype=bool)
    vv = np.arange(H)[:, None] + 0.5
    with np.errstate(invalid="ignore"):
        h = camera.cam_height - (vv - camera.cy) * np.where(ok, depth_image, np.nan) / camera.fy
    ground[ok] = np.abs(h[ok]) <= ground_tol

    ii, jj = np.mgrid[1:bev.rows, 0:bev.cols]
    cells = cell_point(ii, jj, bev.cols, bev.resolution).reshape(-1, 2)
    u, v = project(cells[:, 0], cells[:, 1], np.zeros(len(cells)), camera)
    ui = np.floor(u).astype(np.int64)
    vi = np.floor(v).astype(np.int64)
    if bev.fill_blind_zone:
        vi = np.minimum(vi, H - 1)
    inside = (ui >= 0) & (ui < W) & (vi >= 0) & (vi < H)
    hit = np.zeros(len(cells), dtype=bool)
    hit[inside] = ground[vi[inside], ui[inside]]
    points = np.concatenate([direct, cells[hit]])
    return points[bev_cells(points, bev)[2]], bool(ground[-1].any())


@dataclass(eq=False)
class BevCostMap:
    resolution: float
    traversable: np.ndarray
    distance: np.ndarray  # distance to the nearest non-traversable cell, in cells
    cost: np.ndarray
    robot_cell: tuple[int, int]
    goal_cell: tuple[int, int] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.traversable.shape


def distance_to_edge(traversable: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance (cells) to the nearest non-traversable cell; outside the grid counts as blocked."""
    padded = np.pad(traversable, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def edge_cost(distance_m, d_sat: float) -> np.ndarray:
    """Saturated inverted distance: ``d_sat`` at an edge, 0 from ``d_sat`` metres on."""
    return np.maximum(0.0, d_sat - np.minimum(distance_m, d_sat))


def rasterize(points: np.ndarray, bev: BevConfig, robot_free: bool = True) -> np.ndarray:
    """Traversable BEV grid from points; the robot disc counts as traversable when ``robot_free``."""
    trav = np.zeros((bev.rows, bev.cols), dtype=bool)
    i, j, inside = bev_cells(points, bev)
    trav[i[inside], j[inside]] = True
    if robot_free:
        k = int(math.ceil(bev.robot_radius / bev.resolution))
        di, dj = np.mgrid[0:k + 1, -k:k + 1]
        disc = np.hypot(di, dj) * bev.resolution <= bev.robot_radius
        trav[di[disc], bev.cols // 2 + dj[disc]] = True
    return trav


def costmap_from_grid(traversable: np.ndarray, bev: BevConfig,
                      robot_cell: tuple[int, int] | None = None) -> BevCostMap:
    """Smoothed edge-distance cost over a traversable grid.

    Cost before smoothing is ``edge_cost`` of the distance to the nearest
    non-traversable cell in metres; a ``box_k`` box filter follows, with
    cells beyond the grid counted as non-traversable. Non-traversable cells
    are ``BLOCKED``.
    """
    trav = np.asarray(traversable, dtype=bool)
    if not trav.any():
        raise EmptyTraversability("no traversable BEV cell")
    dist = distance_to_edge(trav)
    pre = edge_cost(dist * bev.resolution, bev.d_sat)
    kernel = np.full((bev.box_k, bev.box_k), 1.0 / bev.box_k**2)
    smooth = ndimage.correlate(pre, kernel, mode="constant", cval=bev.d_sat)
    cost = np.where(trav, smooth, BLOCKED)
    robot = (0, trav.shape[1] // 2) if robot_cell is None else robot_cell
    return BevCostMap(bev.resolution, trav, dist, cost, robot)


def build_costmap(points: np.ndarray, bev: BevConfig, robot_free: bool = True) -> BevCostMap:
    """Rasterise traversable BEV points and derive the cost map."""
    return costmap_from_grid(rasterize(points, bev, robot_free), bev)


def select_subgoal_point(segment: Segment, depth_image: np.ndarray, camera: CameraModel,
                         bev: BevConfig) -> np.ndarray:
    """Farthest-forward unprojected pixel of the segment inside the BEV extent."""
    rows, cols = segment.pixels()
    z = depth_image[rows, cols]
    ok = np.isfinite(z) & (z > 0)
    if not ok.any():
        raise SubgoalProjectionFailed(f"segment {segment.local_id} has no valid depth")
    lat, fwd, _ = unproject_pixels(cols[ok] + 0.5, rows[ok] + 0.5, z[ok], camera)
    pts = np.stack([lat, fwd], axis=1)
    inside = bev_cells(pts, bev)[2]
    if inside.any():
        pts = pts[inside]
        k = np.lexsort((np.abs(pts[:, 0]), -pts[:, 1]))[0]
        return pts[k]
    # nothing inside: clamp along the centroid bearing to the extent
    tan_b = (segment.centroid_px[0] - camera.cx) / camera.fx
    fwd_max = (bev.rows - 1) * bev.resolution
    lat_max = (bev.cols // 2 - 1) * bev.resolution
    point = np.array([fwd_max * tan_b, fwd_max])
    if abs(point[0]) > lat_max:
        point *= lat_max / abs(point[0])
    return point


@dataclass(eq=False)
class LocalPlan:
    waypoints: np.ndarray  # (n, 2) lateral, forward in metres
    subgoal_point: np.ndarray
    feasible: bool
    cells: list[tuple[int, int]]
    cost: float = math.inf


def _snap(costmap: BevCostMap, goal: np.ndarray, radius: float) -> tuple[int, int] | None:
    res = costmap.resolution
    rows, cols = costmap.shape
    jc = cols // 2
    k = int(math.ceil(radius / res)) + 1
    gi, gj = goal[1] / res, goal[0] / res + jc
    i0, j0 = int(round(gi)), int(round(gj))
    ii, jj = np.mgrid[max(i0 - k, 0):min(i0 + k + 1, rows), max(j0 - k, 0):min(j0 + k + 1, cols)]
    if ii.size == 0:
        return None
    d = np.hypot(ii - gi, jj - gj) * res
    ok = costmap.traversable[ii, jj] & (d <= radius)
    if not ok.any():
        return None
    d = np.where(ok, d, np.inf).ravel()
    order = np.lexsort((jj.ravel(), ii.ravel(), d))
    best = order[0]
    return int(ii.ravel()[best]), int(jj.ravel()[best])


def cost_graph(traversable: np.ndarray, cost: np.ndarray) -> csr_matrix:
    """8-connected traversable-cell graph; diagonals need both orthogonal cells traversable.

    Edge weight: step length in cells times ``1 + mean(cost of both ends)``.
    """
    rows, cols = traversable.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    t = traversable
    src, dst, wts = [], [], []
    moves = [
        ((slice(None), slice(0, -1)), (slice(None), slice(1, None)), None, 1.0),
        ((slice(0, -1), slice(None)), (slice(1, None), slice(None)), None, 1.0),
        ((slice(0, -1), slice(0, -1)), (slice(1, None), slice(1, None)),
         t[0:-1, 1:] & t[1:, 0:-1], _SQRT2),
        ((slice(0, -1), slice(1, None)), (slice(1, None), slice(0, -1)),
         t[0:-1, 0:-1] & t[1:, 1:], _SQRT2),
    ]
    for a, b, extra, step in moves:
        ok = t[a] & t[b]
        if extra is not None:
            ok &= extra
        src.append(idx[a][ok])
        dst.append(idx[b][ok])
        wts.append(step * (1.0 + 0.5 * (cost[a][ok] + cost[b][ok])))
    s, d, w = np.concatenate(src), np.concatenate(dst), np.concatenate(wts)
    n = rows * cols
    return csr_matrix((np.concatenate([w, w]), (np.concatenate([s, d]), np.concatenate([d, s]))),
                      shape=(n, n))


def plan_path(costmap: BevCostMap, goal: np.ndarray, snap_radius: float = 0.5) -> LocalPlan:
    """Minimum-cost 8-connected path from the robot cell to the cell snapped to ``goal``."""
    goal = np.asarray(goal, float)
    empty = np.empty((0, 2))
    if not costmap.traversable[costmap.robot_cell]:
        return LocalPlan(empty, goal, False, [])
    goal_cell = _snap(costmap, goal, snap_radius)
    if goal_cell is None:
        return LocalPlan(empty, goal, False, [])
    costmap.goal_cell = goal_cell
    cols = costmap.shape[1]
    start = costmap.robot_cell[0] * cols + costmap.robot_cell[1]
    target = goal_cell[0] * cols + goal_cell[1]
    if start == target:
        return LocalPlan(cell_point([goal_cell[0]], [goal_cell[1]], cols, costmap.resolution),
                         goal, True, [goal_cell], 0.0)
    graph = cost_graph(costmap.traversable, np.where(costmap.traversable, costmap.cost, 0.0))
    dist, pred = dijkstra(graph, indices=start, return_predecessors=True)
    if not math.isfinite(dist[target]):
        return LocalPlan(empty, goal, False, [])
    path = [target]
    while path[-1] != start:
        path.append(int(pred[path[-1]]))
    cells = [divmod(p, cols) for p in reversed(path)]
    ci, cj = np.array(cells).T
    return LocalPlan(cell_point(ci, cj, cols, costmap.resolution), goal, True, cells,
                     float(dist[target]))


def follow_path(plan: LocalPlan, params: ControlParams | None = None) -> ControlCommand:
    """Proportional heading control towards a lookahead waypoint at fixed speed."""
    params = params or ControlParams()
    if not plan.feasible or len(plan.waypoints) == 0:
        raise ValueError("cannot follow an infeasible plan")
    wp = plan.waypoints
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(wp, axis=0).T))])
    ahead = np.nonzero(arc >= params.lookahead)[0]
    target = wp[ahead[0]] if ahead.size else wp[-1]
    if np.hypot(*target) < 1e-12:
        return ControlCommand(params.v_fixed, 0.0)
    alpha = math.atan2(target[0], target[1])
    yaw = max(-params.omega_max, min(params.omega_max, params.k_p * alpha))
    v = 0.0 if abs(alpha) > params.turn_in_place else params.v_fixed
    return ControlCommand(v, yaw)
