"""Raster conventions and elementwise algebra.

Everything is a plain numpy array:

* image / MultiGrid: float array ``(..., D, H, W)``
* ProbField: float array ``(..., C, H, W)``, sums to 1 over the class axis
* LabelField: integer array ``(..., H, W)`` of class indices
* BinaryMask: uint8 array ``(..., H, W)`` holding only 0 and 1

Leading batch axes are allowed everywhere and broadcast the usual way.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

GRID_MAGIC = b"GRID"
_HEADER = struct.Struct("<4sIII")


class ShapeError(ValueError):
    pass


def check_prob_field(p: np.ndarray, atol: float = 1e-6) -> None:
    if p.ndim < 3 or p.shape[-3] < 2:
        raise ShapeError(f"prob field needs a class axis with C >= 2, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("prob field has non-finite values")
    if p.min() < -atol or p.max() > 1 + atol:
        raise ValueError("probabilities outside [0, 1]")
    if not np.allclose(p.sum(axis=-3), 1.0, atol=atol):
        raise ValueError("probabilities do not sum to 1 per pixel")


def check_mask(m: np.ndarray) -> None:
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be exactly 0 or 1")


def one_hot(label: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    """(..., H, W) int labels -> (..., C, H, W) one-hot planes."""
    label = np.asarray(label)
    if label.size and (label.min() < 0 or label.max() >= num_classes):
        raise ValueError("label index out of range")
    eye = np.eye(num_classes, dtype=dtype)
    return np.moveaxis(eye[label], -1, -3)


def argmax_field(p: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(p, axis=-3).astype(np.int64)


def confidence_mask(p: np.ndarray, tau: float) -> np.ndarray:
    return (p.max(axis=-3) >= tau).astype(np.uint8)


def blend(a: np.ndarray, b: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``a`` where ``m`` is 1, ``b`` where it is 0.

    Works for images/prob fields (mask broadcast over the channel axis) and
    for label fields (same shape as the mask). Selection instead of
    ``a*m + b*(1-m)`` keeps the result bit-exact.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    m = np.asarray(m)
    if a.shape != b.shape:
        raise ShapeError(f"blend operands differ: {a.shape} vs {b.shape}")
    if a.shape[-2:] != m.shape[-2:]:
        raise ShapeError(f"mask {m.shape} does not match operands {a.shape}")
    if a.ndim == m.ndim:
        sel = m.astype(bool)
    else:
        sel = np.expand_dims(m.astype(bool), -3)
    return np.where(sel, a, b)


# ---------------------------------------------------------------- serialization

def write_grid(path, data: np.ndarray) -> None:
    """Write a (H, W) or (C, H, W) raster as little-endian float32 with a GRID header."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected (H, W) or (C, H, W), got {arr.shape}")
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(GRID_MAGIC, h, w, c))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_grid(path) -> np.ndarray:
    """Inverse of :func:`write_grid`; always returns (C, H, W) float32."""
    raw = Path(path).read_bytes()
    magic, h, w, c = _HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != c * h * w:
        raise ValueError(f"{path}: expected {c * h * w} values, found {body.size}")
    return body.reshape(c, h, w).astype(np.float32)


def write_pgm(path, data: np.ndarray, vmin: float | None = 0.0, vmax: float | None = 1.0) -> None:
    """8-bit binary graymap (P5). Values are linearly mapped from [vmin, vmax]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[0]
    lo = arr.min() if vmin is None else vmin
    hi = arr.max() if vmax is None else vmax
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip(np.rint((arr - lo) * scale), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 graymap written by :func:`write_pgm`; returns floats in [0, 1]."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a P5 graymap")
    w, h, maxval = (int(x) for x in fields[1:])
    pos += 1
    img = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.float64) / maxval
