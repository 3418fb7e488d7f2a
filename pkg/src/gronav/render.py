"""Raster views of the grid: aerial image, patches, and the marked aerial image.

Layout for marked images (kept fixed so remote prompts are reproducible):
``CELL_PX`` pixels per grid cell, north up, each marker a filled white circle
of radius ``MARKER_RADIUS`` px outlined in black with its decimal id centered
inside in PIL's default bitmap font. Start and goal markers are outlined in
green and red.
"""

from __future__ import annotations

import base64
import io
from typing import TYPE_CHECKING, Iterable

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .world import PatchDescriptor, WorldGrid

if TYPE_CHECKING:
    from .global_planner import WaypointGraph

CELL_PX = 4
MARKER_RADIUS = 9
OBSTACLE_RGB = (40, 40, 40)


def grid_rgb(grid: WorldGrid) -> np.ndarray:
    """(height, width, 3) uint8 array, row 0 = southmost row."""
    palette = np.array([c.appearance for c in grid.classes], dtype=np.uint8)
    rgb = palette[grid.cells]
    rgb[grid.obstacles] = OBSTACLE_RGB
    return rgb


def render_grid(grid: WorldGrid, cell_px: int = CELL_PX) -> Image.Image:
    rgb = grid_rgb(grid)[::-1]
    img = Image.fromarray(np.ascontiguousarray(rgb), mode="RGB")
    return img.resize((grid.width * cell_px, grid.height * cell_px), Image.NEAREST)


def to_px(grid: WorldGrid, x: float, y: float, cell_px: int = CELL_PX) -> tuple[float, float]:
    scale = cell_px / grid.resolution
    return x * scale, grid.height * cell_px - y * scale


def render_patch(grid: WorldGrid, patch: PatchDescriptor, cell_px: int = 8) -> Image.Image:
    full = render_grid(grid, cell_px)
    h = patch.size / 2
    x0, y0 = to_px(grid, patch.center[0] - h, patch.center[1] + h, cell_px)
    x1, y1 = to_px(grid, patch.center[0] + h, patch.center[1] - h, cell_px)
    box = tuple(int(round(v)) for v in (max(x0, 0), max(y0, 0), min(x1, full.width), min(y1, full.height)))
    return full.crop(box)


def render_marked(
    grid: WorldGrid,
    graph: "WaypointGraph",
    start_id: int,
    goal_id: int,
    path: Iterable[int] = (),
    cell_px: int = CELL_PX,
) -> Image.Image:
    img = render_grid(grid, cell_px)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    path = list(path)
    for a, b in zip(path, path[1:]):
        draw.line([to_px(grid, *graph.markers[a], cell_px), to_px(grid, *graph.markers[b], cell_px)],
                  fill=(0, 120, 255), width=2)
    for mid, (x, y) in sorted(graph.markers.items()):
        px, py = to_px(grid, x, y, cell_px)
        outline = (0, 160, 0) if mid == start_id else (200, 0, 0) if mid == goal_id else (0, 0, 0)
        r = MARKER_RADIUS
        draw.ellipse([px - r, py - r, px + r, py + r], fill=(255, 255, 255), outline=outline, width=2)
        text = str(mid)
        left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
        draw.text((px - (right - left) / 2, py - (bottom - top) / 2 - top), text, fill=(0, 0, 0), font=font)
    return img


def png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def png_base64(img: Image.Image) -> str:
    return base64.b64encode(png_bytes(img)).decode("ascii")
