"""Centered 2D spectra and progress-aware low-frequency amplitude mixup."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Spectrum:
    """Amplitude and phase over the last two axes, DC bin at ``(H//2, W//2)``."""
    amplitude: np.ndarray
    phase: np.ndarray


@dataclass(frozen=True)
class StyleSchedule:
    t: int
    t_total: int
    beta: float = 0.01

    def __post_init__(self):
        if not 0 <= self.t <= self.t_total or self.t_total <= 0:
            raise ValueError(f"need 0 <= t <= t_total, got t={self.t}, t_total={self.t_total}")
        if not 0 < self.beta < 0.5:
            raise ValueError(f"beta must lie in (0, 0.5), got {self.beta}")

    @property
    def progress(self) -> float:
        return self.t / self.t_total


def fft2(x: np.ndarray) -> Spectrum:
    f = np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1)), axes=(-2, -1))
    phase = np.angle(f)
    phase[phase <= -np.pi] = np.pi
    return Spectrum(np.abs(f), phase)


def ifft2(s: Spectrum) -> np.ndarray:
    f = s.amplitude * np.exp(1j * s.phase)
    return np.fft.ifft2(np.fft.ifftshift(f, axes=(-2, -1)), axes=(-2, -1)).real


def low_freq_block(h: int, w: int, beta: float) -> tuple[slice, slice]:
    """Rows/cols of the centered block with half-extents ceil(beta*H), ceil(beta*W)."""
    bh, bw = math.ceil(beta * h), math.ceil(beta * w)
    ch, cw = h // 2, w // 2
    return slice(max(ch - bh, 0), min(ch + bh + 1, h)), slice(max(cw - bw, 0), min(cw + bw + 1, w))


def mix_amplitude(labeled: np.ndarray, unlabeled: np.ndarray, rho: float, beta: float,
                  block: tuple[slice, slice] | None = None) -> np.ndarray:
    """Blend unlabeled low-frequency amplitude into labeled at ratio ``rho``.

    The labeled phase is kept; the result is clamped to [0, 1]. Every leading
    axis (channels, batch) uses the same ``rho``.
    """
    if labeled.shape != unlabeled.shape:
        raise ValueError(f"shape mismatch {labeled.shape} vs {unlabeled.shape}")
    if rho == 0:
        return labeled.copy()
    sx, su = fft2(labeled), fft2(unlabeled)
    h, w = labeled.shape[-2:]
    rows, cols = block if block is not None else low_freq_block(h, w, beta)
    amp = sx.amplitude.copy()
    amp[..., rows, cols] = rho * su.amplitude[..., rows, cols] + (1 - rho) * amp[..., rows, cols]
    out = ifft2(Spectrum(amp, sx.phase))
    return np.clip(out, 0.0, 1.0).astype(labeled.dtype, copy=False)


def sample_mixing_ratio(schedule: StyleSchedule, rng: np.random.Generator) -> float:
    return float(rng.uniform(0.0, schedule.progress))


def amplitude_mixup(labeled, unlabeled, schedule: StyleSchedule, rng: np.random.Generator):
    rho = sample_mixing_ratio(schedule, rng)
    log.debug("amplitude mixup t=%d rho=%.6f", schedule.t, rho)
    return mix_amplitude(labeled, unlabeled, rho, schedule.beta)


def ram_mixup(labeled, unlabeled, beta: float, rng: np.random.Generator):
    """Progress-agnostic variant: ratio drawn from U[0, 1] at every step."""
    rho = float(rng.uniform(0.0, 1.0))
    return mix_amplitude(labeled, unlabeled, rho, beta)
