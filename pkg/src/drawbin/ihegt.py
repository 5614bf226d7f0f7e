"""Iterative histogram-equalization global thresholding (IHEGT).

Each round shifts the image up by ``255 - mean``, saturates everything that
reaches 255 (those pixels become background for good), and linearly stretches
the surviving pixels so their minimum lands on 0. Rounds repeat until the mean
stops moving.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import as_gray

MEAN_TOLERANCE = 1e-9


@dataclass
class IhegtState:
    working: np.ndarray
    background: np.ndarray
    prev_mean: float | None = None
    iteration: int = 0
    means: list[float] = field(default_factory=list)
    converged: bool = False


def stretch(values: np.ndarray, minimum: float) -> np.ndarray:
    """Map ``minimum -> 0`` and ``255 -> 255`` linearly."""
    return 255.0 - 255.0 * (255.0 - values) / (255.0 - minimum)


def ihegt_step(state: IhegtState, exclude_background: bool = False) -> bool:
    """Run one round in place. Returns ``False`` once the procedure has stopped."""
    w, bg = state.working, state.background
    if bg.all():
        return False
    mean = float(w[~bg].mean() if exclude_background else w.mean())
    if state.prev_mean is not None and abs(mean - state.prev_mean) < MEAN_TOLERANCE:
        state.converged = True
        return False
    state.means.append(mean)

    w += 255.0 - mean
    saturated = w >= 255.0
    w[saturated] = 255.0
    bg |= saturated
    if not bg.all():
        live = ~bg
        w[live] = stretch(w[live], w[live].min())
    state.prev_mean = mean
    state.iteration += 1
    return not bg.all()


def ihegt_run(img: np.ndarray, max_iterations: int = 100, exclude_background: bool = False) -> IhegtState:
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    g = as_gray(img)
    state = IhegtState(g.astype(np.float64), np.zeros(g.shape, dtype=bool))
    while state.iteration < max_iterations and ihegt_step(state, exclude_background):
        pass
    return state


def ihegt_binarize(img: np.ndarray, max_iterations: int = 100, exclude_background: bool = False) -> np.ndarray:
    """Foreground is every pixel that never saturated to 255."""
    return ~ihegt_run(img, max_iterations, exclude_background).background
