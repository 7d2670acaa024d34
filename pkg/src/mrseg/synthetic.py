"""Synthetic labeled scenes with structural and detail classes.

The scene is a small car-park bay: ground, ceiling, a wall holding a door
and a mural light, a pillar carrying an extinguisher, and a barrier rail.
Structural surfaces carry white sensor noise; detail surfaces are smooth
but ridged with the same RMS deviation, so the two only differ at the
neighborhood scale of the full-resolution cloud. Objects of different
merged classes are kept more than one voxel apart so that every voxel of
the subsampling grid is pure in the merged class space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .config import PipelineConfig, make_config

SCENE_CLASSES = (
    ("ground", "low"),
    ("ceiling", "low"),
    ("wall", "low"),
    ("pillar", "low"),
    ("barrier", "low"),
    ("door", "high"),
    ("light", "high"),
    ("extinguisher", "high"),
)
SCENE_MERGE = {"door": "wall", "light": "wall", "extinguisher": "pillar"}

GROUND, CEILING, WALL, PILLAR, BARRIER, DOOR, LIGHT, EXTINGUISHER = range(8)

_BASE_COLORS = {
    GROUND: (110, 110, 115),
    CEILING: (205, 205, 200),
    WALL: (180, 170, 150),
    PILLAR: (200, 180, 60),
    BARRIER: (215, 70, 45),
}
_COLOR_OF = {DOOR: WALL, LIGHT: WALL, EXTINGUISHER: PILLAR}


def scene_config(voxel_size: float = 0.05, k: int = 14, **kwargs) -> PipelineConfig:
    return make_config(SCENE_CLASSES, SCENE_MERGE, voxel_size=voxel_size, k=k, **kwargs)


@dataclass(frozen=True)
class SceneParams:
    density: float = 25_000.0  # points per m^2
    noise: float = 0.0015  # structural surface noise, m
    ridge_wavelength: float = 0.08  # m
    detail_noise: float = 0.0002  # m
    voxel_size: float = 0.05

    @property
    def ridge_amplitude(self) -> float:
        # same RMS as the structural noise
        return self.noise * np.sqrt(2.0)

    @property
    def gap(self) -> float:
        return max(0.12, 2.5 * self.voxel_size)


def _count(rng: np.random.Generator, area: float, density: float) -> int:
    return int(round(area * density))


def _colors(rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    base = np.array([_BASE_COLORS[_COLOR_OF.get(int(c), int(c))] for c in range(8)], dtype=np.float64)
    col = base[labels] + rng.normal(0.0, 8.0, size=(len(labels), 3))
    return np.clip(np.rint(col), 0, 255).astype(np.uint8)


def make_scene(seed: int = 0, params: SceneParams = SceneParams()) -> PointCloud:
    """Generate one labeled scene. Different seeds move and resize the objects."""
    rng = np.random.default_rng(seed)
    p = params
    width = 2.2 + rng.uniform(-0.1, 0.1)
    depth = 1.6 + rng.uniform(-0.05, 0.05)
    height = 1.5
    g = p.gap
    parts_pos, parts_lab = [], []

    def add(points: np.ndarray, labels: np.ndarray | int) -> None:
        parts_pos.append(points)
        parts_lab.append(np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(points),)).copy())

    # ground and ceiling: horizontal, normal along z
    for z0, cid in ((0.0, GROUND), (height, CEILING)):
        n = _count(rng, width * depth, p.density)
        pts = np.column_stack([rng.uniform(0, width, n), rng.uniform(0, depth, n),
                               z0 + rng.normal(0, p.noise, n)])
        add(pts, cid)

    # wall in the plane y = wall_y, spanning [wx0, wx1] x [g, height - g]
    wall_y = depth - 0.15
    wx0 = 0.2 + rng.uniform(-0.05, 0.05)
    wx1 = wx0 + 1.2 + rng.uniform(-0.1, 0.1)
    wz0, wz1 = g, height - g
    n = _count(rng, (wx1 - wx0) * (wz1 - wz0), p.density)
    x = rng.uniform(wx0, wx1, n)
    z = rng.uniform(wz0, wz1, n)
    lab = np.full(n, WALL, dtype=np.int64)
    door_x0 = wx0 + 0.12 + rng.uniform(0, 0.1)
    door = (x >= door_x0) & (x < door_x0 + 0.5) & (z < wz0 + 0.9)
    light_x0 = door_x0 + 0.65 + rng.uniform(0, 0.1)
    light = (x >= light_x0) & (x < light_x0 + 0.3) & (z >= wz1 - 0.3) & (z < wz1 - 0.05)
    lab[door] = DOOR
    lab[light] = LIGHT
    amp, wl = p.ridge_amplitude, p.ridge_wavelength
    phase = rng.uniform(0, 2 * np.pi)
    offset = rng.normal(0, p.noise, n)
    offset[door] = amp * np.sin(2 * np.pi * z[door] / wl + phase) + rng.normal(0, p.detail_noise, door.sum())
    offset[light] = amp * np.sin(2 * np.pi * x[light] / wl + phase) + rng.normal(0, p.detail_noise, light.sum())
    add(np.column_stack([x, wall_y + offset, z]), lab)

    # pillar: vertical cylinder with an extinguisher patch
    cx = width - 0.45 + rng.uniform(-0.05, 0.05)
    cy = 0.5 + rng.uniform(-0.05, 0.05)
    radius = 0.1
    n = _count(rng, 2 * np.pi * radius * (wz1 - wz0), p.density)
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(wz0, wz1, n)
    lab = np.full(n, PILLAR, dtype=np.int64)
    t0 = rng.uniform(0, np.pi)
    ext = (np.mod(theta - t0, 2 * np.pi) < np.pi / 3) & (z >= 0.4) & (z < 0.85)
    lab[ext] = EXTINGUISHER
    dr = rng.normal(0, p.noise, n)
    dr[ext] = amp * np.sin(2 * np.pi * z[ext] / wl + phase) + rng.normal(0, p.detail_noise, ext.sum())
    r = radius + dr
    add(np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta), z]), lab)

    # barrier: horizontal rail along x
    bz = 0.6 + rng.uniform(-0.05, 0.05)
    by = 0.6 + rng.uniform(-0.05, 0.05)
    bx0, bx1 = 0.2, cx - radius - 0.35
    br = 0.025
    n = _count(rng, 2 * np.pi * br * (bx1 - bx0), p.density)
    theta = rng.uniform(0, 2 * np.pi, n)
    rr = br + rng.normal(0, p.noise, n)
    add(np.column_stack([rng.uniform(bx0, bx1, n), by + rr * np.cos(theta), bz + rr * np.sin(theta)]),
        BARRIER)

    positions = np.concatenate(parts_pos)
    labels = np.concatenate(parts_lab)
    return PointCloud(positions, colors=_colors(rng, labels), labels=labels)
