"""Masked cross-entropy / Dice losses, their gradients, and the warm-up weight.

Leading batch axes are pooled: the CE mean runs over every pixel of every
sample and the Dice sums run over the whole batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import one_hot

EPS = 1e-7


def _ce(y, p, w):
    c = p.shape[-3]
    yh = one_hot(y, c, dtype=p.dtype)
    pc = np.clip(p, EPS, 1 - EPS)
    n = y.size
    wy = yh * np.expand_dims(w, -3)
    value = float(-(wy * np.log(pc)).sum() / n)
    inside = (p >= EPS) & (p <= 1 - EPS)
    grad = np.where(inside, -wy / (pc * n), 0.0).astype(p.dtype, copy=False)
    return value, grad


def _dice(y, p, w):
    c = p.shape[-3]
    yh = one_hot(y, c, dtype=p.dtype)
    wb = np.expand_dims(w, -3).astype(p.dtype)
    axes = tuple(i for i in range(p.ndim) if i != p.ndim - 3)
    inter = (wb * p * yh).sum(axis=axes)
    denom = (wb * (p * p + yh * yh)).sum(axis=axes)
    grad = np.zeros_like(p)
    total = 0.0
    for k in range(1, c):
        if denom[k] == 0:
            continue
        total += 1.0 - 2.0 * inter[k] / denom[k]
        g = -2.0 * (wb[..., 0, :, :] * yh[..., k, :, :] * denom[k]
                    - inter[k] * 2.0 * wb[..., 0, :, :] * p[..., k, :, :]) / denom[k] ** 2
        grad[..., k, :, :] = g / (c - 1)
    return float(total / (c - 1)), grad


def weighted_ce(y: np.ndarray, p: np.ndarray, w: np.ndarray) -> float:
    """Mean over all pixels of ``w * -log p[true class]``; masked pixels still count in the mean."""
    return _ce(y, p, w)[0]


def weighted_dice(y: np.ndarray, p: np.ndarray, w: np.ndarray) -> float:
    """Masked soft Dice loss averaged over the foreground classes 1..C-1."""
    return _dice(y, p, w)[0]


def ce_dice(y, p, w):
    """CE + Dice value and its gradient with respect to ``p``."""
    v1, g1 = _ce(y, p, w)
    v2, g2 = _dice(y, p, w)
    return v1 + v2, g1 + g2


def lambda_schedule(t: float, t_total: float) -> float:
    return math.exp(-5.0 * (1.0 - t / t_total))


@dataclass(frozen=True)
class LossBreakdown:
    l_s: float
    l_in: float
    l_out: float
    l_sym: float
    l_total: float
    lambda_t: float


def total_loss(l_s: float, l_in: float, l_out: float, l_sym: float, lam: float) -> LossBreakdown:
    """Supervised term plus warm-up weighted unsupervised terms; the symmetric term gets lambda squared."""
    total = l_s + lam * (l_in + l_out + lam * l_sym)
    return LossBreakdown(l_s, l_in, l_out, l_sym, total, lam)
