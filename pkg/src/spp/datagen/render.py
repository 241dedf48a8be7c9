"""Deterministic 2D rasteriser for symbolic states.

Frames are drawn at ``supersample`` times the target resolution with PIL and
box-filtered down, which gives anti-aliased edges. The result is quantised to
8 bits before being returned as float32 so that PNG storage is lossless.
"""

from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from spp.core import N_CELLS, BoardPose, Color, SymbolicState
from spp.datagen.config import DatagenConfig

_FONT_CANDIDATES = (
    "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans-Bold.ttf",
    "/Library/Fonts/Arial Bold.ttf",
)


@lru_cache(maxsize=None)
def _font(px: int) -> ImageFont.ImageFont:
    for path in _FONT_CANDIDATES:
        if Path(path).exists():
            return ImageFont.truetype(path, px)
    return ImageFont.load_default(size=px)


@lru_cache(maxsize=4096)
def glyph_mask(letter: str, size: int, angle_mrad: int) -> np.ndarray:
    """Square uint8 coverage mask for ``letter`` rotated by ``angle_mrad``/1000 rad."""
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    font = _font(int(size * 0.9))
    x0, y0, x1, y1 = draw.textbbox((0, 0), letter, font=font)
    draw.text(((size - (x1 - x0)) / 2 - x0, (size - (y1 - y0)) / 2 - y0), letter, fill=255, font=font)
    if angle_mrad:
        canvas = canvas.rotate(math.degrees(angle_mrad / 1000.0), resample=Image.BICUBIC)
    return np.asarray(canvas)


def _rgb255(rgb: tuple[float, float, float]) -> tuple[int, int, int]:
    return tuple(int(round(255 * c)) for c in rgb)  # type: ignore[return-value]


def _paste_glyph(img: np.ndarray, letter: str, color: Color, center_px: tuple[float, float],
                 size_px: int, angle: float) -> None:
    mask = glyph_mask(letter, size_px, int(round(angle * 1000))).astype(np.float32) / 255.0
    h, w = img.shape[:2]
    cx, cy = center_px
    x0 = int(round(cx - size_px / 2))
    y0 = int(round(cy - size_px / 2))
    # clip to image
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    dx1, dy1 = min(w, x0 + size_px), min(h, y0 + size_px)
    if dx1 <= dx0 or dy1 <= dy0:
        return
    m = mask[sy0:sy0 + (dy1 - dy0), sx0:sx0 + (dx1 - dx0), None]
    col = np.asarray(_rgb255(color.rgb), dtype=np.float32)
    region = img[dy0:dy1, dx0:dx1]
    img[dy0:dy1, dx0:dx1] = region * (1.0 - m) + col * m


def draw_board(img: np.ndarray, pose: BoardPose, config: DatagenConfig) -> None:
    n = img.shape[0]
    s = config.supersample
    x0 = pose.x - pose.width / 2
    y0 = pose.y - pose.height / 2
    px0, py0 = int(round(x0 * n)), int(round(y0 * n))
    px1, py1 = int(round((x0 + pose.width) * n)), int(round((y0 + pose.height) * n))
    img[max(py0, 0):max(py1, 0), max(px0, 0):max(px1, 0)] = config.board_rgb
    grid = np.asarray(config.grid_rgb, dtype=np.float32)
    for k in range(N_CELLS + 1):
        gx = int(round((x0 + k * pose.width / N_CELLS) * n))
        a, b = max(gx - s // 2, 0), max(gx - s // 2 + s, 0)
        img[max(py0, 0):max(py1, 0), a:b] = grid
    for gy in (py0, py1):
        a, b = max(gy - s // 2, 0), max(gy - s // 2 + s, 0)
        img[a:b, max(px0, 0):max(px1, 0)] = grid


def render_frame(state: SymbolicState, config: DatagenConfig = DatagenConfig()) -> np.ndarray:
    """Rasterise ``state`` to an (H, W, 3) float32 frame with values k/255."""
    s = config.supersample
    n = config.resolution * s
    img = np.empty((n, n, 3), dtype=np.float32)
    img[:] = np.asarray(config.background_rgb, dtype=np.float32)
    draw_board(img, state.board_pose, config)
    size_px = int(round(config.glyph_size * n))
    for k, obj in enumerate(state.cells):
        if obj is None:
            continue
        cx, cy = state.board_pose.cell_center(k)
        _paste_glyph(img, obj[1], obj[0], (cx * n, cy * n), size_px, 0.0)
    for tile in state.staging:
        _paste_glyph(img, tile.letter, tile.color,
                     (tile.position[0] * n, tile.position[1] * n), size_px, tile.orientation)
    r = config.resolution
    small = img.reshape(r, s, r, s, 3).mean(axis=(1, 3))
    return (np.clip(np.rint(small), 0, 255).astype(np.uint8)).astype(np.float32) / 255.0


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
