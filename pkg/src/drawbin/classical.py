"""Threshold-based binarizers: Otsu (global), Niblack, Sauvola and MLT (local).

Every binarizer returns a boolean map with ``True`` marking foreground (dark ink).
Local rules classify a pixel as foreground when its intensity is strictly below
the local threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import as_gray, gradient_magnitude, local_mean_std_map, window_max, window_mean

MLT_BLOCK_SIDE = 256


@dataclass(frozen=True)
class ThresholdParams:
    k: float
    w: int = 17
    r: float = 128.0

    def __post_init__(self):
        if self.w < 3 or self.w % 2 == 0:
            raise ValueError(f"window side must be odd and >= 3, got {self.w}")
        if not self.r > 0:
            raise ValueError(f"dynamic range R must be positive, got {self.r}")


NIBLACK_DEFAULTS = ThresholdParams(k=0.1, w=17)
SAUVOLA_DEFAULTS = ThresholdParams(k=0.5, w=17, r=128.0)
MLT_DEFAULTS = ThresholdParams(k=0.02, w=17)


def otsu_threshold(hist) -> int | None:
    """Threshold minimizing within-class variance of a 256-bin histogram.

    Class 0 holds levels ``<= t``. Only thresholds leaving both classes nonempty are
    considered; the search is exact (integer arithmetic) and ties go to the smaller
    threshold. Returns ``None`` when the histogram has a single occupied level.
    """
    hist = [int(c) for c in hist]
    if len(hist) != 256:
        raise ValueError("histogram must have 256 bins")
    n = sum(hist)
    s = sum(v * c for v, c in enumerate(hist))
    # Minimizing sum_k(S2_k - S1_k^2/n_k) is maximizing S1_0^2/n_0 + S1_1^2/n_1,
    # compared by cross-multiplication to stay in integers.
    best_t, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1, s1 = n - n0, s - s0
        if n0 == 0 or n1 == 0:
            continue
        num = s0 * s0 * n1 + s1 * s1 * n0
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu(img: np.ndarray) -> np.ndarray:
    g = as_gray(img)
    t = otsu_threshold(np.bincount(g.ravel(), minlength=256))
    if t is None:
        return np.zeros(g.shape, dtype=bool)
    return g <= t


def niblack_threshold(img: np.ndarray, p: ThresholdParams = NIBLACK_DEFAULTS) -> np.ndarray:
    m, s = local_mean_std_map(as_gray(img), p.w)
    return m + p.k * s


def sauvola_threshold(img: np.ndarray, p: ThresholdParams = SAUVOLA_DEFAULTS) -> np.ndarray:
    m, s = local_mean_std_map(as_gray(img), p.w)
    return m * (1.0 + p.k * (s / p.r - 1.0))


def mlt_threshold(img: np.ndarray, p: ThresholdParams = MLT_DEFAULTS, block: bool = False) -> np.ndarray:
    """Per-pixel MLT threshold ``mu * (1 - k * exp(-mu_grad / M))``.

    ``mu``, ``mu_grad`` and ``M`` are the mean intensity, mean gradient and maximum
    gradient over the window around each pixel: ``p.w`` wide, or 256 wide when
    ``block`` is set. Where ``M`` is zero the exponent is taken as 0.
    """
    g = as_gray(img)
    side = MLT_BLOCK_SIDE if block else p.w
    mu, _ = local_mean_std_map(g, side)
    grad = gradient_magnitude(g)
    mu_grad = window_mean(grad, side)
    peak = window_max(grad, side)
    ratio = np.divide(mu_grad, peak, out=np.zeros_like(mu_grad), where=peak > 0)
    return mu * (1.0 - p.k * np.exp(-ratio))


def niblack(img: np.ndarray, p: ThresholdParams = NIBLACK_DEFAULTS) -> np.ndarray:
    return as_gray(img) < niblack_threshold(img, p)


def sauvola(img: np.ndarray, p: ThresholdParams = SAUVOLA_DEFAULTS) -> np.ndarray:
    return as_gray(img) < sauvola_threshold(img, p)


def mlt(img: np.ndarray, p: ThresholdParams = MLT_DEFAULTS, block: bool = False) -> np.ndarray:
    return as_gray(img) < mlt_threshold(img, p, block)
