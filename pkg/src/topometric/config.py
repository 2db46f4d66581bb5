"""Dataclass configuration for worlds, perception, control and the benchmark.

Every tunable default lives here. ``load_config`` reads a YAML file whose
top-level keys mirror the ``BenchConfig`` fields; missing keys keep their
defaults, unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


@dataclass(frozen=True)
class WorldGenParams:
    rows: int = 56
    cols: int = 56
    cell_size: float = 0.25
    rooms: int = 6
    min_room_cells: int = 10
    door_width_cells: int = 4
    corridor_prob: float = 0.0
    corridor_width_cells: int = 4
    obstacles: int = 10
    rugs: int = 0
    wall_height: float = 2.5
    wall_chunk_cells: int = 8
    clearance: float = 0.2
    max_retries: int = 50

    def __post_init__(self) -> None:
        if self.rows < 20 or self.cols < 20:
            raise ValueError("world grid must be at least 20x20 cells")
        if self.rooms < 1:
            raise ValueError("room count must be >= 1")
        if self.obstacles < 0 or self.rugs < 0:
            raise ValueError("obstacle and rug counts must be >= 0")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with zero pitch; square pixels, principal point at the image centre."""

    width: int = 640
    height: int = 480
    hfov: float = math.pi / 2
    cam_height: float = 1.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not 0 < self.hfov < math.pi:
            raise ValueError("hfov must lie in (0, pi)")

    @property
    def fx(self) -> float:
        return (self.width / 2) / math.tan(self.hfov / 2)

    @property
    def fy(self) -> float:
        return self.fx

    @property
    def cx(self) -> float:
        return self.width / 2

    @property
    def cy(self) -> float:
        return self.height / 2

    def scale_area(self, area_at_vga: float) -> int:
        """Scale a pixel-area threshold quoted at 640x480 to this resolution."""
        return max(1, int(round(area_at_vga * self.width * self.height / (640 * 480))))


@dataclass(frozen=True)
class PerceptionConfig:
    min_area_vga: int = 50
    teach_goal_px_vga: int = 100
    traversable_classes: tuple[str, ...] = ("floor", "rug")


@dataclass(frozen=True)
class NoiseConfig:
    p_drop: float = 0.2
    p_swap: float = 0.1


@dataclass(frozen=True)
class MappingConfig:
    window: int = 1
    window_radius: int = 3


@dataclass(frozen=True)
class BevConfig:
    resolution: float = 0.05
    forward: float = 6.0
    lateral: float = 3.0
    d_sat: float = 0.5
    box_k: int = 5
    snap_radius: float = 0.5
    robot_radius: float = 0.2
    fill_blind_zone: bool = True

    @property
    def rows(self) -> int:
        return int(round(self.forward / self.resolution))

    @property
    def cols(self) -> int:
        return int(round(2 * self.lateral / self.resolution))


@dataclass(frozen=True)
class ControlParams:
    v_fixed: float = 0.25
    k_p: float = 1.5
    lookahead: float = 0.5
    omega_max: float = 1.0
    turn_in_place: float = math.pi / 2


@dataclass(frozen=True)
class ServoParams:
    tau: float = 5.0
    gain: float = 0.4
    image_width: int = 640
    v_fixed: float = 0.25
    v_scale: float = 0.5
    omega_max: float = 1.0
    omega_search: float = 0.5

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau):
            raise ValueError("tau must be finite")
        if self.gain <= 0 or self.image_width <= 0:
            raise ValueError("gain and image_width must be positive")


@dataclass(frozen=True)
class BenchParams:
    seed: int = 0
    worlds: int = 12
    goals_per_world: int = 3
    categories: tuple[str, ...] = ("easy", "hard", "full")
    budget: int = 500
    ablation_budget: int = 250
    dt: float = 0.2
    success_radius: float = 1.0
    teach_spacing: float = 0.3
    alt_tail_fraction: float = 0.3
    alt_categories: tuple[str, ...] = ("hard", "full")
    alt_regime: str = "noisy"
    fallback_regimes: tuple[str, ...] = ("gt_metric",)
    clutter_categories: tuple[str, ...] = ("easy", "hard")
    clutter_count: int = 2
    switch_worlds: int = 12
    switch_category: str = "hard"
    max_start_tries: int = 40


@dataclass(frozen=True)
class BenchConfig:
    world: WorldGenParams = field(default_factory=WorldGenParams)
    corridor_world: WorldGenParams = field(
        default_factory=lambda: WorldGenParams(rooms=7, corridor_prob=0.7, obstacles=8)
    )
    camera: CameraModel = field(default_factory=CameraModel)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    bev: BevConfig = field(default_factory=BevConfig)
    control: ControlParams = field(default_factory=ControlParams)
    servo: ServoParams = field(default_factory=ServoParams)
    bench: BenchParams = field(default_factory=BenchParams)

    @property
    def min_area(self) -> int:
        return self.camera.scale_area(self.perception.min_area_vga)

    @property
    def teach_goal_px(self) -> int:
        return self.camera.scale_area(self.perception.teach_goal_px_vga)

    def servo_params(self) -> ServoParams:
        """Servo parameters with the image width tied to the camera."""
        return dataclasses.replace(
            self.servo, image_width=self.camera.width, v_fixed=self.control.v_fixed
        )


def _build(cls: type, data: dict[str, Any] | None) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"{cls.__name__}: expected a mapping, got {data!r}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value)
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> BenchConfig:
    return _build(BenchConfig, data)


def config_to_dict(cfg: Any) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def load_config(path: str | Path | None) -> BenchConfig:
    if path is None:
        return BenchConfig()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def dump_config(cfg: BenchConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
