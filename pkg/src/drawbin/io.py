"""Reading and writing images: PNG and binary PGM/PPM, 8 bits per sample."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

FOREGROUND_VALUE = 0
BACKGROUND_VALUE = 255

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


def _format_for(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".png":
        return "PNG"
    if suffix in (".pgm", ".ppm", ".pnm"):
        return "PPM"
    raise ValueError(f"unsupported image format {suffix!r} for {path}")


def read_image(path) -> np.ndarray:
    """Load an image as ``uint8``: gray files give ``(H, W)``, anything else ``(H, W, 3)``."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode in ("L", "1", "P") and (im.mode != "P" or _palette_is_gray(im)):
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
        if im.mode in ("I;16", "I;16B", "I"):
            raise ValueError(f"{path}: only 8-bit images are supported")
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def _palette_is_gray(im: Image.Image) -> bool:
    rgb = np.asarray(im.convert("RGB"))
    return bool(np.all(rgb[..., 0] == rgb[..., 1]) and np.all(rgb[..., 1] == rgb[..., 2]))


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 pixels, got {img.dtype}")
    if path.suffix.lower() == ".pgm" and img.ndim != 2:
        raise ValueError("PGM holds gray images only")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(path, format=_format_for(path))


def binary_to_image(m: np.ndarray) -> np.ndarray:
    return np.where(m, FOREGROUND_VALUE, BACKGROUND_VALUE).astype(np.uint8)


def image_to_binary(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        img = img.min(axis=2)
    return img < 128


def read_binary(path) -> np.ndarray:
    return image_to_binary(read_image(path))


def write_binary(path, m: np.ndarray) -> None:
    write_image(path, binary_to_image(m))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
