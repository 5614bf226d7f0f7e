"""Synthetic degraded line drawings with known clean masks.

A drawing is rendered as a binary stroke mask (lines, outlines, filled parts,
circles, hatching), then degraded with the three artifacts of aged scans:
uneven yellowing, soft fold streaks, and scattered speckle noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter, zoom


@dataclass(frozen=True)
class SynthParams:
    height: int = 224
    width: int = 224
    strokes: int = 14
    speckle_density: float = 0.0015
    folds: int = 2
    fold_depth: float = 0.08
    yellowing: float = 0.45
    noise_sigma: float = 2.0


def _draw_mask(rng: np.random.Generator, p: SynthParams) -> np.ndarray:
    im = Image.new("L", (p.width, p.height), 0)
    d = ImageDraw.Draw(im)
    h, w = p.height, p.width

    def pt():
        return int(rng.integers(0, w)), int(rng.integers(0, h))

    for _ in range(p.strokes):
        kind = rng.choice(["line", "hline", "rect", "fill", "circle", "hatch"], p=[0.25, 0.25, 0.15, 0.1, 0.15, 0.1])
        width = int(rng.choice([1, 1, 2, 2, 3, 4]))
        if kind == "line":
            d.line([pt(), pt()], fill=255, width=width)
        elif kind == "hline":
            x0, y0 = pt()
            length = int(rng.integers(w // 4, w))
            if rng.random() < 0.5:
                d.line([(x0, y0), (min(x0 + length, w - 1), y0)], fill=255, width=width)
            else:
                d.line([(x0, y0), (x0, min(y0 + length, h - 1))], fill=255, width=width)
        elif kind in ("rect", "fill"):
            x0, y0 = pt()
            bw, bh = int(rng.integers(12, w // 3)), int(rng.integers(12, h // 3))
            box = [x0, y0, min(x0 + bw, w - 1), min(y0 + bh, h - 1)]
            if kind == "fill":
                d.rectangle(box, fill=255)
            else:
                d.rectangle(box, outline=255, width=width)
        elif kind == "circle":
            cx, cy = pt()
            r = int(rng.integers(6, min(h, w) // 5))
            d.ellipse([cx - r, cy - r, cx + r, cy + r], outline=255, width=width)
        else:
            x0, y0 = pt()
            size, step = int(rng.integers(20, 60)), int(rng.integers(5, 9))
            for off in range(0, size, step):
                d.line([(x0 + off, y0), (x0, y0 + off)], fill=255, width=1)
    return np.asarray(im) > 0


def _smooth_field(rng: np.random.Generator, h: int, w: int, cells: int = 4) -> np.ndarray:
    coarse = rng.random((cells, cells))
    field = zoom(coarse, (h / cells, w / cells), order=3)[:h, :w]
    field = np.pad(field, ((0, h - field.shape[0]), (0, w - field.shape[1])), mode="edge")
    field -= field.min()
    return field / max(field.max(), 1e-12)


def synth_drawing(seed: int, p: SynthParams = SynthParams()) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(color image uint8 (H, W, 3), clean foreground mask)``."""
    rng = np.random.default_rng(seed)
    h, w = p.height, p.width
    mask = _draw_mask(rng, p)

    paper = np.array([243.0, 238.0, 226.0])
    yellow = np.array([0.97, 0.90, 0.68])
    stain = _smooth_field(rng, h, w)[..., None] * p.yellowing
    img = paper * (1.0 - stain * (1.0 - yellow)) * (1.0 - 0.3 * stain)

    shade = np.ones((h, w))
    for _ in range(p.folds):
        sigma = rng.uniform(8.0, 12.0)
        if rng.random() < 0.5:
            c = rng.uniform(0.15, 0.85) * h
            prof = np.exp(-0.5 * ((np.arange(h) - c) / sigma) ** 2)[:, None]
        else:
            c = rng.uniform(0.15, 0.85) * w
            prof = np.exp(-0.5 * ((np.arange(w) - c) / sigma) ** 2)[None, :]
        shade *= 1.0 - p.fold_depth * prof
    img = img * shade[..., None]

    ink = rng.uniform(25, 70) + rng.normal(0, 4, (h, w))
    img = np.where(mask[..., None], ink[..., None] * np.array([1.0, 1.0, 1.1]), img)

    speck = rng.random((h, w)) < p.speckle_density
    big = gaussian_filter(speck.astype(float), 0.5) > 0.25
    speck |= big & (rng.random((h, w)) < 0.5)
    img = np.where((speck & ~mask)[..., None], rng.uniform(50, 130), img)

    img = img + rng.normal(0, p.noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def synth_dataset(count: int, seed: int = 0, p: SynthParams = SynthParams()) -> list[tuple[str, np.ndarray, np.ndarray]]:
    return [(f"synth{seed:03d}_{i:03d}", *synth_drawing(seed * 100003 + i, p)) for i in range(count)]
