"""Synthetic scene specs and the deterministic rasterizer behind the benchmarks.

Scenes live on a coarse cell grid: the 64x64 canvas is divided into 8x8
cells of 8px, and every object occupies exactly one cell. Keeping objects
cell-aligned makes overlap checking trivial and the renderer exactly
reproducible (pure integer masks, no anti-aliasing, no RNG).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError

CANVAS = 64
CELL = 8
GRID = CANVAS // CELL  # 8x8 cells

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue", "yellow")

_RGB = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.15),
    "blue": (0.15, 0.25, 0.9),
    "yellow": (0.9, 0.85, 0.1),
}

_BACKGROUND = 0.08


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    cell: tuple[int, int]  # (row, col) on the GRID x GRID lattice
    size: int = 7  # side/diameter in pixels, <= CELL


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectSpec, ...] = field(default_factory=tuple)
    canvas: tuple[int, int] = (CANVAS, CANVAS)
    seed: int = 0

    def validate(self) -> None:
        occupied = set()
        for obj in self.objects:
            if obj.shape not in SHAPES:
                raise ValidationError(f"unknown shape {obj.shape!r}")
            if obj.color not in COLORS:
                raise ValidationError(f"unknown color {obj.color!r}")
            r, c = obj.cell
            if not (0 <= r < GRID and 0 <= c < GRID):
                raise ValidationError(f"cell {obj.cell} outside the {GRID}x{GRID} grid")
            if not 1 <= obj.size <= CELL:
                raise ValidationError(f"object size {obj.size} outside [1, {CELL}]")
            if obj.cell in occupied:
                raise ValidationError(f"two objects overlap at cell {obj.cell}")
            occupied.add(obj.cell)

    def shifted(self, dr: int, dc: int) -> "SceneSpec":
        """Translate every object by (dr, dc) cells (a camera shift)."""
        moved = tuple(replace(o, cell=(o.cell[0] + dr, o.cell[1] + dc)) for o in self.objects)
        out = replace(self, objects=moved)
        out.validate()
        return out


def _shape_mask(shape: str, size: int) -> np.ndarray:
    """Boolean size x size mask for one object, centered in its bounding box."""
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        c = (size - 1) / 2.0
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2
    if shape == "triangle":
        # upward triangle: row y spans a symmetric width growing with y
        half = (yy + 1) * (size / 2.0) / size
        c = (size - 1) / 2.0
        return np.abs(xx - c) <= half
    raise ValidationError(f"unknown shape {shape!r}")


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Rasterize a scene to a float32 (H, W, 3) image in [0, 1]."""
    spec.validate()
    h, w = spec.canvas
    img = np.full((h, w, 3), _BACKGROUND, dtype=np.float32)
    for obj in spec.objects:
        r, c = obj.cell
        pad = (CELL - obj.size) // 2
        y0, x0 = r * CELL + pad, c * CELL + pad
        mask = _shape_mask(obj.shape, obj.size)
        tile = img[y0:y0 + obj.size, x0:x0 + obj.size]
        tile[mask] = np.asarray(_RGB[obj.color], dtype=np.float32)
    return img


def relation_between(a: ObjectSpec, b: ObjectSpec) -> str | None:
    """Dominant-axis relation of `a` as seen from `b`.

    Returns left/right/above/below, or None when the two axes tie and no
    single word applies (generators avoid producing such pairs).
    """
    dy = a.cell[0] - b.cell[0]
    dx = a.cell[1] - b.cell[1]
    if abs(dx) > abs(dy):
        return "left" if dx < 0 else "right"
    if abs(dy) > abs(dx):
        return "above" if dy < 0 else "below"
    return None
