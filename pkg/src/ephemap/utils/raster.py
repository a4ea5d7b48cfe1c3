"""Top-down PNG previews of heatmaps and maps."""

from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from ..model import AttributedPointCloud
from ..spatial import cell_keys
from ..update import Heatmap
from .io import atomic_write_bytes

# Low values blue, high values red.
_COLD = np.array([40, 60, 200], dtype=np.float64)
_HOT = np.array([220, 40, 30], dtype=np.float64)
_EMPTY = (255, 255, 255)


def _colorize(values: np.ndarray) -> np.ndarray:
    v = np.clip(values, 0.0, 1.0)[..., None]
    return (_COLD * (1.0 - v) + _HOT * v).astype(np.uint8)


def _grid_image(ij: np.ndarray, values: np.ndarray, scale: int) -> Image.Image:
    """Rasterise per-cell values (max over collisions); +y points up."""
    if len(ij) == 0:
        return Image.new("RGB", (scale, scale), _EMPTY)
    lo = ij.min(axis=0)
    size = ij.max(axis=0) - lo + 1
    grid = np.full((size[1], size[0]), -1.0)
    cols = ij[:, 0] - lo[0]
    rows = size[1] - 1 - (ij[:, 1] - lo[1])
    np.maximum.at(grid, (rows, cols), values)
    rgb = np.empty(grid.shape + (3,), dtype=np.uint8)
    rgb[:] = _EMPTY
    filled = grid >= 0
    rgb[filled] = _colorize(grid[filled])
    img = Image.fromarray(rgb)
    if scale > 1:
        img = img.resize((img.width * scale, img.height * scale), Image.Resampling.NEAREST)
    return img


def _png_bytes(img: Image.Image) -> bytes:
    out = BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


def heatmap_png(heatmap: Heatmap, scale: int = 8) -> bytes:
    """Heatmap values seen from above, one block of ``scale`` pixels per cell."""
    return _png_bytes(_grid_image(np.asarray(heatmap.cells)[:, :2], heatmap.values, scale))


def cloud_png(cloud: AttributedPointCloud, resolution: float = 0.2, scale: int = 2) -> bytes:
    """Map seen from above, coloured by the highest eps_g per pixel."""
    ij = cell_keys(cloud.positions, resolution)[:, :2] if len(cloud) else np.zeros((0, 2), np.int64)
    return _png_bytes(_grid_image(ij, cloud.eps_g, scale))


def write_png(data: bytes, path: Path) -> None:
    atomic_write_bytes(path, data)
