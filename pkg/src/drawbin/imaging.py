"""Image containers and the low-level grid machinery shared by every binarizer.

Images are plain numpy arrays:

* gray image   -- ``uint8`` array of shape ``(height, width)``
* color image  -- ``uint8`` array of shape ``(height, width, 3)``, RGB order
* binary map   -- ``bool`` array of shape ``(height, width)``, ``True`` = foreground

Window statistics use integral images, so every local query is O(1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .errors import DimensionError
from scipy.ndimage import maximum_filter1d

BLOCK_SIDE = 224

_LUMA = (0.299, 0.587, 0.114)


def as_gray(img: np.ndarray) -> np.ndarray:
    """Validate a gray image, converting color input through :func:`to_grayscale`."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 3:
        return to_grayscale(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255):
            raise ValueError("gray intensities must lie in [0, 255]")
        img = img.astype(np.uint8)
    return img


def check_binary(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"binary map must be 2-D, got shape {m.shape}")
    if m.dtype != np.bool_:
        raise TypeError(f"binary map must have bool dtype, got {m.dtype}")
    return m


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma, rounded half away from zero and clamped to [0, 255]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) color image, got shape {img.shape}")
    rgb = img.astype(np.float64)
    luma = _LUMA[0] * rgb[..., 0] + _LUMA[1] * rgb[..., 1] + _LUMA[2] * rgb[..., 2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class IntegralImage:
    """Zero-bordered prefix sums of intensities (``s1``) and squared intensities (``s2``).

    ``s1[y, x]`` is the sum over rows ``[0, y)`` and columns ``[0, x)``.
    """

    s1: np.ndarray
    s2: np.ndarray

    @property
    def height(self) -> int:
        return self.s1.shape[0] - 1

    @property
    def width(self) -> int:
        return self.s1.shape[1] - 1

    def rect_sum(self, x0, y0, x1, y1, which: str = "s1"):
        """Sum over the half-open rectangle ``[x0, x1) x [y0, y1)``; broadcasts over arrays."""
        s = self.s1 if which == "s1" else self.s2
        return s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]


def _prefix(values: np.ndarray) -> np.ndarray:
    h, w = values.shape
    out = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(values, axis=0, out=out[1:, 1:])
    np.cumsum(out[1:, 1:], axis=1, out=out[1:, 1:])
    return out


def integral_build(img: np.ndarray) -> IntegralImage:
    v = as_gray(img).astype(np.int64)
    return IntegralImage(_prefix(v), _prefix(v * v))


def window_bounds(n: int, side: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-index half-open bounds of a window of ``side`` samples centered on each index.

    Odd sides are symmetric; even sides reach one sample further back than forward.
    Bounds are truncated to ``[0, n)``.
    """
    idx = np.arange(n)
    lo = np.maximum(idx - side // 2, 0)
    hi = np.minimum(idx + (side - 1 - side // 2) + 1, n)
    return lo, hi


def window_sums(ii: IntegralImage, side: int):
    """Per-pixel ``(count, sum, sum_sq)`` int64 arrays over truncated ``side`` windows."""
    y0, y1 = window_bounds(ii.height, side)
    x0, x1 = window_bounds(ii.width, side)
    Y0, X0 = y0[:, None], x0[None, :]
    Y1, X1 = y1[:, None], x1[None, :]
    count = (Y1 - Y0) * (X1 - X0)
    return count, ii.rect_sum(X0, Y0, X1, Y1, "s1"), ii.rect_sum(X0, Y0, X1, Y1, "s2")


def _mean_std_from_sums(count, s1, s2):
    # n*S2 - S1^2 is computed in integers, so constant windows give exactly zero spread.
    spread = np.maximum(count * s2 - s1 * s1, 0)
    mean = s1 / count
    std = np.sqrt(spread.astype(np.float64)) / count
    return mean, std


def local_mean_std(ii: IntegralImage, x: int, y: int, w: int) -> tuple[float, float]:
    """Mean and population standard deviation of the ``w x w`` window centered at ``(x, y)``."""
    if w < 3 or w % 2 == 0:
        raise ValueError(f"window side must be odd and >= 3, got {w}")
    if not (0 <= x < ii.width and 0 <= y < ii.height):
        raise IndexError(f"({x}, {y}) lies outside a {ii.width}x{ii.height} image")
    r = w // 2
    x0, x1 = max(x - r, 0), min(x + r + 1, ii.width)
    y0, y1 = max(y - r, 0), min(y + r + 1, ii.height)
    n = (x1 - x0) * (y1 - y0)
    mean, std = _mean_std_from_sums(
        np.int64(n), ii.rect_sum(x0, y0, x1, y1, "s1"), ii.rect_sum(x0, y0, x1, y1, "s2")
    )
    return float(mean), float(std)


def local_mean_std_map(img: np.ndarray, side: int, ii: IntegralImage | None = None):
    """Vectorized :func:`local_mean_std` over every pixel; ``side`` may be even here."""
    if ii is None:
        ii = integral_build(img)
    return _mean_std_from_sums(*window_sums(ii, side))


def window_mean(values: np.ndarray, side: int) -> np.ndarray:
    """Truncated-window mean of a real-valued field."""
    h, w = values.shape
    s = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(values, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    y0, y1 = window_bounds(h, side)
    x0, x1 = window_bounds(w, side)
    Y0, X0, Y1, X1 = y0[:, None], x0[None, :], y1[:, None], x1[None, :]
    total = s[Y1, X1] - s[Y0, X1] - s[Y1, X0] + s[Y0, X0]
    return total / ((Y1 - Y0) * (X1 - X0))


def window_max(values: np.ndarray, side: int) -> np.ndarray:
    """Truncated-window maximum, separable (rows then columns)."""
    # 'nearest' only replicates samples already inside the window, so the max is unchanged.
    # scipy centers even sizes at side // 2, matching window_bounds.
    out = maximum_filter1d(values, side, axis=0, mode="nearest")
    return maximum_filter1d(out, side, axis=1, mode="nearest")


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    """3x3 Sobel gradient magnitude with edge-replicated borders."""
    v = np.pad(as_gray(img).astype(np.float64), 1, mode="edge")
    h, w = v.shape[0] - 2, v.shape[1] - 2

    def at(dy, dx):
        return v[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    gx = (at(-1, 1) + 2 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2 * at(0, -1) + at(1, -1))
    gy = (at(1, -1) + 2 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1))
    return np.hypot(gx, gy)


@dataclass(frozen=True)
class Tiling:
    """Bookkeeping needed to undo :func:`partition_blocks`."""

    height: int
    width: int
    rows: int
    cols: int
    side: int = BLOCK_SIDE

    @property
    def count(self) -> int:
        return self.rows * self.cols


def _reflect_index(n: int, total: int) -> np.ndarray:
    """Indices ``0..total-1`` folded back into ``[0, n)`` by mirror reflection (edge not repeated)."""
    idx = np.arange(total)
    if n == 1:
        return np.zeros(total, dtype=np.intp)
    period = 2 * (n - 1)
    m = idx % period
    return np.where(m < n, m, period - m)


def partition_blocks(img: np.ndarray, side: int = BLOCK_SIDE) -> tuple[list[np.ndarray], Tiling]:
    """Cut an image into row-major ``side x side`` blocks after reflect-padding to a multiple of ``side``.

    Works on any array whose first two axes are spatial (gray, color, or label maps).
    """
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"cannot partition an array of shape {img.shape}")
    h, w = img.shape[:2]
    rows, cols = -(-h // side), -(-w // side)
    padded = img[_reflect_index(h, rows * side)][:, _reflect_index(w, cols * side)]
    blocks = [
        padded[r * side : (r + 1) * side, c * side : (c + 1) * side].copy()
        for r in range(rows)
        for c in range(cols)
    ]
    return blocks, Tiling(h, w, rows, cols, side)


def stitch_blocks(blocks, tiling: Tiling) -> np.ndarray:
    if len(blocks) != tiling.count:
        raise DimensionError(f"expected {tiling.count} blocks for a {tiling.rows}x{tiling.cols} grid, got {len(blocks)}")
    side = tiling.side
    first = np.asarray(blocks[0])
    out = np.empty((tiling.rows * side, tiling.cols * side) + first.shape[2:], dtype=first.dtype)
    for i, b in enumerate(blocks):
        b = np.asarray(b)
        if b.shape[:2] != (side, side):
            raise ValueError(f"block {i} has shape {b.shape}, expected {side}x{side}")
        r, c = divmod(i, tiling.cols)
        out[r * side : (r + 1) * side, c * side : (c + 1) * side] = b
    return out[: tiling.height, : tiling.width]
