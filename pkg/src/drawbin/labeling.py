"""Semi-automatic ground-truth labeling.

Stage one fuses MLT (connected stroke boundaries) with IHEGT (solid stroke
interiors). Stage two removes scattered noise with a center-weighted median
filter and optionally applies a hand-made correction layer.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .classical import MLT_DEFAULTS, ThresholdParams, mlt
from .ihegt import ihegt_binarize
from .imaging import as_gray, check_binary
from .errors import DimensionError

CORRECTION_KEEP = 128
CORRECTION_FOREGROUND = 0
CORRECTION_BACKGROUND = 255

MANIFEST_NAME = "manifest.json"


class Provenance(enum.IntEnum):
    ROUGH = 0
    REFINED = 1
    CORRECTED = 2


@dataclass(frozen=True)
class CwmfParams:
    window: int = 7
    center_weight: int = 37

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.center_weight < 1 or self.center_weight % 2 == 0:
            raise ValueError(f"center weight must be odd and >= 1, got {self.center_weight}")


@dataclass(frozen=True)
class HdadPair:
    """A source drawing and its binary ground truth."""

    id: str
    source: np.ndarray
    truth: np.ndarray
    provenance: Provenance = Provenance.REFINED

    def __post_init__(self):
        if self.source.shape[:2] != self.truth.shape:
            raise DimensionError(f"pair {self.id!r}: source {self.source.shape[:2]} and truth {self.truth.shape} differ")

    def advance(self, truth: np.ndarray, provenance: Provenance) -> "HdadPair":
        if provenance < self.provenance:
            raise ValueError(f"cannot move provenance back from {self.provenance.name} to {provenance.name}")
        return replace(self, truth=truth, provenance=provenance)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def fuse(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Union of the two foreground sets."""
    a, b = check_binary(a), check_binary(b)
    _same_shape(a, b, "fuse")
    return a | b


def _box_count(m: np.ndarray, side: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = m.shape
    s = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(m, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    r = side // 2
    y0, y1 = np.maximum(np.arange(h) - r, 0), np.minimum(np.arange(h) + r + 1, h)
    x0, x1 = np.maximum(np.arange(w) - r, 0), np.minimum(np.arange(w) + r + 1, w)
    Y0, Y1, X0, X1 = y0[:, None], y1[:, None], x0[None, :], x1[None, :]
    ones = s[Y1, X1] - s[Y0, X1] - s[Y1, X0] + s[Y0, X0]
    return ones, (Y1 - Y0) * (X1 - X0)


def cwmf_denoise(m: np.ndarray, p: CwmfParams = CwmfParams()) -> np.ndarray:
    """Center-weighted median of a binary map.

    The window's labels form a multiset in which the center label counts
    ``center_weight`` times; the output is the lower median of that multiset,
    i.e. foreground iff foreground holds a strict majority. Border windows are
    truncated, not padded.
    """
    m = check_binary(m)
    fg, count = _box_count(m, p.window)
    extra = p.center_weight - 1
    fg = fg + extra * m
    size = count + extra
    return 2 * fg > size


def apply_corrections(truth: np.ndarray, corrections: np.ndarray) -> np.ndarray:
    """Override ``truth`` where the correction layer says so (0 = foreground, 255 = background, 128 = keep)."""
    truth = check_binary(truth)
    corrections = np.asarray(corrections)
    _same_shape(truth, corrections, "apply_corrections")
    bad = ~np.isin(corrections, (CORRECTION_KEEP, CORRECTION_FOREGROUND, CORRECTION_BACKGROUND))
    if bad.any():
        raise ValueError(f"correction layer holds {int(bad.sum())} values outside {{0, 128, 255}}")
    out = truth.copy()
    out[corrections == CORRECTION_FOREGROUND] = True
    out[corrections == CORRECTION_BACKGROUND] = False
    return out


def rough_truth(gray: np.ndarray, mlt_params: ThresholdParams = MLT_DEFAULTS, max_iterations: int = 100) -> np.ndarray:
    return fuse(mlt(gray, mlt_params), ihegt_binarize(gray, max_iterations))


def label_pair(
    src: np.ndarray,
    id: str,
    mlt_params: ThresholdParams = MLT_DEFAULTS,
    cwmf: CwmfParams = CwmfParams(),
    max_iterations: int = 100,
) -> HdadPair:
    gray = as_gray(src)
    truth = cwmf_denoise(rough_truth(gray, mlt_params, max_iterations), cwmf)
    return HdadPair(id, np.asarray(src), truth, Provenance.REFINED)


def correct_pair(pair: HdadPair, corrections: np.ndarray) -> HdadPair:
    return pair.advance(apply_corrections(pair.truth, corrections), Provenance.CORRECTED)


# -- dataset directories ------------------------------------------------------
#
#   <root>/manifest.json
#   <root>/pairs/<id>/source.png
#   <root>/pairs/<id>/truth.png
#   <root>/pairs/<id>/corrections.png     (optional)


def save_pair(root, pair: HdadPair, split: str | None = None) -> Path:
    root = Path(root)
    d = root / "pairs" / pair.id
    io.write_image(d / "source.png", np.asarray(pair.source, dtype=np.uint8))
    io.write_binary(d / "truth.png", pair.truth)
    if split is not None:
        manifest = read_manifest(root) if (root / MANIFEST_NAME).exists() else {}
        manifest[pair.id] = split
        write_manifest(root, manifest)
    return d


def load_pair(root, pair_id: str, apply_correction_layer: bool = True) -> HdadPair:
    d = Path(root) / "pairs" / pair_id
    if not d.is_dir():
        raise FileNotFoundError(f"no pair directory {d}")
    pair = HdadPair(pair_id, io.read_image(d / "source.png"), io.read_binary(d / "truth.png"), Provenance.REFINED)
    corr = d / "corrections.png"
    if apply_correction_layer and corr.exists():
        layer = io.read_image(corr)
        if layer.ndim == 3:
            layer = layer[..., 0]
        pair = correct_pair(pair, layer)
    return pair


def read_manifest(root) -> dict[str, str]:
    """``{id: split}`` in manifest order."""
    with open(Path(root) / MANIFEST_NAME) as f:
        data = json.load(f)
    entries = data.get("pairs", [])
    out = {}
    for e in entries:
        if e.get("split") not in ("train", "test"):
            raise ValueError(f"pair {e.get('id')!r}: split must be 'train' or 'test'")
        out[str(e["id"])] = e["split"]
    return out


def write_manifest(root, manifest: dict[str, str]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    body = {"pairs": [{"id": k, "split": v} for k, v in sorted(manifest.items())]}
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(body, f, indent=2)
        f.write("\n")


def list_pair_ids(root, split: str | None = None) -> list[str]:
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        ids = [i for i, s in read_manifest(root).items() if split is None or s == split]
    else:
        if split is not None:
            raise FileNotFoundError(f"{root} has no {MANIFEST_NAME}; cannot select split {split!r}")
        ids = sorted(p.name for p in (root / "pairs").iterdir() if p.is_dir())
    return ids


def load_pairs(root, split: str | None = None) -> list[HdadPair]:
    return [load_pair(root, i) for i in list_pair_ids(root, split)]
