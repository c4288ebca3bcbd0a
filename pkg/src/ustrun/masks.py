"""Copy-paste masks: random rectangles, foreground boxes, label agreement."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RectSpec:
    area_fraction_range: tuple[float, float] = (0.04, 0.36)
    aspect_ratio_range: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self):
        alo, ahi = self.area_fraction_range
        rlo, rhi = self.aspect_ratio_range
        if not (0 < alo <= ahi <= 1):
            raise ValueError(f"bad area_fraction_range {self.area_fraction_range}")
        if not (0 < rlo <= rhi):
            raise ValueError(f"bad aspect_ratio_range {self.aspect_ratio_range}")


def _rect_sides(area_px: float, aspect: float) -> tuple[int, int]:
    # aspect = height / width
    return max(1, round(math.sqrt(area_px * aspect))), max(1, round(math.sqrt(area_px / aspect)))


def sample_rect_mask(h: int, w: int, spec: RectSpec, rng: np.random.Generator,
                     max_tries: int = 1000) -> np.ndarray:
    """One axis-aligned rectangle of ones, uniformly placed.

    Area fraction and aspect ratio (height/width) are drawn uniformly from
    ``spec``; draws whose rounded rectangle does not fit are redrawn.
    """
    alo, ahi = spec.area_fraction_range
    rlo, rhi = spec.aspect_ratio_range
    # the smallest admissible rectangle, shaped as close to the frame as allowed
    best_aspect = min(max(h / w, rlo), rhi)
    rh, rw = _rect_sides(alo * h * w, best_aspect)
    if rh > h or rw > w:
        raise ValueError(f"{spec} cannot fit a rectangle inside {h}x{w}")

    for _ in range(max_tries):
        area = rng.uniform(alo, ahi) * h * w
        aspect = rng.uniform(rlo, rhi)
        rh, rw = _rect_sides(area, aspect)
        if rh <= h and rw <= w:
            break
    else:
        raise ValueError(f"{spec}: no fitting rectangle after {max_tries} draws in {h}x{w}")
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[top:top + rh, left:left + rw] = 1
    return mask


def foreground_union_box(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tight bounding box of the pixels that are foreground (class != 0) in a or b."""
    if a.shape != b.shape:
        raise ValueError(f"label shapes differ: {a.shape} vs {b.shape}")
    fg = (a != 0) | (b != 0)
    mask = np.zeros(a.shape, dtype=np.uint8)
    rows = np.flatnonzero(fg.any(axis=1))
    if rows.size == 0:
        return mask
    cols = np.flatnonzero(fg.any(axis=0))
    mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = 1
    return mask


def mask_xor_agreement(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 where two label fields assign the same class, 0 where they differ."""
    if a.shape != b.shape:
        raise ValueError(f"label shapes differ: {a.shape} vs {b.shape}")
    return (a == b).astype(np.uint8)
