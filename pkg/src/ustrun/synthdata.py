"""Synthetic multi-domain blob segmentation data and weak/strong augmentation.

Every sample is a random arrangement of 1-3 elliptical blobs rendered under a
per-domain intensity style. Geometry and style are drawn from separate seeded
streams, so the same geometry seed under two identical styles yields the same
pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import read_grid, write_grid

LABELED, UNLABELED, TEST = "labeled", "unlabeled", "test"
_SPLIT_CODE = {LABELED: 0, UNLABELED: 1, TEST: 2}


@dataclass(frozen=True)
class DomainStyle:
    gamma: float = 1.0
    brightness: float = 0.0
    contrast: float = 1.0
    bias_amplitude: float = 0.0     # strength of a smooth multiplicative field
    noise_sigma: float = 0.0
    texture_freq: float = 0.0       # cycles per image of an oriented grating, 0 disables
    texture_amplitude: float = 0.05


IDENTITY_STYLE = DomainStyle()

# domain 0 is the labeled one; the others shift brightness, contrast, gamma and
# the low-frequency bias field. The shifts are sized so a domain-0 model is
# partly right on the others: larger offsets push whole images across its
# intensity threshold and leave pseudo-labels nothing to work with.
DEFAULT_DOMAINS = (
    DomainStyle(gamma=1.0, brightness=0.0, contrast=1.0, bias_amplitude=0.05, noise_sigma=0.03),
    DomainStyle(gamma=0.8, brightness=0.08, contrast=0.8, bias_amplitude=0.25, noise_sigma=0.04,
                texture_freq=6.0),
    DomainStyle(gamma=1.3, brightness=-0.08, contrast=0.85, bias_amplitude=0.2, noise_sigma=0.05),
    DomainStyle(gamma=0.9, brightness=0.12, contrast=0.7, bias_amplitude=0.3, noise_sigma=0.06,
                texture_freq=10.0),
)


@dataclass
class Sample:
    image: np.ndarray   # (D, H, W) float32 in [0, 1]
    label: np.ndarray   # (H, W) int64
    domain: int
    sample_id: int = -1


@dataclass
class Dataset:
    labeled: list
    unlabeled: list
    test: list
    num_classes: int = 2

    def split(self, name: str) -> list:
        return getattr(self, name)


# ----------------------------------------------------------------- geometry

def _ellipse(h, w, cy, cx, ry, rx, theta):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(theta), math.sin(theta)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v


def make_geometry(rng: np.random.Generator, size: int = 64, num_classes: int = 2,
                  fg_range=(0.05, 0.30), max_tries: int = 200) -> np.ndarray:
    """Label field made of 1-3 ellipses covering ``fg_range`` of the frame.

    With three classes each blob is a ring (class 1) around a core (class 2).
    """
    for _ in range(max_tries):
        label = np.zeros((size, size), dtype=np.int64)
        for _ in range(int(rng.integers(1, 4))):
            ry, rx = rng.uniform(0.08, 0.25, size=2) * size
            cy, cx = rng.uniform(0.2, 0.8, size=2) * size
            r2 = _ellipse(size, size, cy, cx, ry, rx, rng.uniform(0, math.pi))
            label[r2 <= 1.0] = 1
            if num_classes == 3:
                label[r2 <= 0.4] = 2
        frac = (label > 0).mean()
        if fg_range[0] <= frac <= fg_range[1]:
            return label
    raise RuntimeError("could not draw a geometry inside the foreground range")


def _content(label: np.ndarray, num_classes: int) -> np.ndarray:
    levels = np.linspace(0.3, 0.75, num_classes)
    base = levels[label]
    return ndimage.gaussian_filter(base, 1.0, mode="reflect")


def _smooth_field(rng, size):
    coarse = rng.normal(size=(4, 4))
    field = ndimage.zoom(coarse, size / 4, order=3, mode="reflect")[:size, :size]
    return field / (np.abs(field).max() + 1e-12)


def apply_style(content: np.ndarray, style: DomainStyle, rng: np.random.Generator) -> np.ndarray:
    size = content.shape[-1]
    x = (content - 0.5) * style.contrast + 0.5 + style.brightness
    if style.texture_freq > 0:
        theta = rng.uniform(0, math.pi)
        yy, xx = np.mgrid[0:size, 0:size] / size
        phase = rng.uniform(0, 2 * math.pi)
        x = x + style.texture_amplitude * np.sin(
            2 * math.pi * style.texture_freq * (math.cos(theta) * xx + math.sin(theta) * yy) + phase)
    if style.bias_amplitude > 0:
        x = x * (1.0 + style.bias_amplitude * _smooth_field(rng, size))
    x = np.clip(x, 0.0, 1.0)
    if style.gamma != 1.0:
        x = x ** style.gamma
    if style.noise_sigma > 0:
        x = x + rng.normal(0.0, style.noise_sigma, size=x.shape)
    return np.clip(x, 0.0, 1.0)


def render_sample(geometry_seed, style: DomainStyle, size: int = 64, num_classes: int = 2,
                  style_seed=None) -> tuple[np.ndarray, np.ndarray]:
    label = make_geometry(np.random.default_rng(geometry_seed), size, num_classes)
    style_rng = np.random.default_rng(geometry_seed if style_seed is None else style_seed)
    image = apply_style(_content(label, num_classes), style, style_rng)
    return image[None].astype(np.float32), label


def generate_dataset(domains=DEFAULT_DOMAINS, seed: int = 0, n_labeled: int = 8,
                     n_unlabeled_per_domain: int = 50, n_test_per_domain: int = 20,
                     size: int = 64, num_classes: int = 2) -> Dataset:
    """Labeled split from domain 0 only; unlabeled and test splits cover every domain."""
    if len(domains) < 2:
        raise ValueError("need at least two domains")
    splits = {LABELED: [], UNLABELED: [], TEST: []}
    plan = [(LABELED, 0, i) for i in range(n_labeled)]
    plan += [(UNLABELED, d, i) for d in range(len(domains)) for i in range(n_unlabeled_per_domain)]
    plan += [(TEST, d, i) for d in range(len(domains)) for i in range(n_test_per_domain)]
    counter = {LABELED: 0, UNLABELED: 0, TEST: 0}
    for split, d, _ in plan:
        idx = counter[split]
        counter[split] += 1
        geo_seed = [seed, _SPLIT_CODE[split], idx]
        image, label = render_sample(geo_seed, domains[d], size, num_classes,
                                     style_seed=[seed, _SPLIT_CODE[split], idx, d, 7])
        splits[split].append(Sample(image, label, d, idx))
    return Dataset(splits[LABELED], splits[UNLABELED], splits[TEST], num_classes)


# ----------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class GeomDraw:
    scale: float = 1.0          # crop side as a fraction of the frame
    shift: tuple = (0.0, 0.0)   # crop centre offset in pixels
    angle: float = 0.0          # small rotation, degrees
    k90: int = 0
    flip_h: bool = False
    flip_v: bool = False


@dataclass(frozen=True)
class IntensityDraw:
    brightness: float = 0.0
    contrast: float = 1.0
    gamma: float = 1.0
    blur_sigma: float = 0.0


IDENTITY_GEOM = GeomDraw()
IDENTITY_INTENSITY = IntensityDraw()


def draw_geometry(rng: np.random.Generator, size: int) -> GeomDraw:
    scale = rng.uniform(0.8, 1.0)
    slack = (1.0 - scale) * size / 2
    return GeomDraw(scale=scale, shift=tuple(rng.uniform(-slack, slack, size=2)),
                    angle=rng.uniform(-10, 10), k90=int(rng.integers(4)),
                    flip_h=bool(rng.integers(2)), flip_v=bool(rng.integers(2)))


def draw_intensity(rng: np.random.Generator) -> IntensityDraw:
    return IntensityDraw(brightness=rng.uniform(-0.2, 0.2), contrast=rng.uniform(0.8, 1.2),
                         gamma=math.exp(rng.uniform(math.log(0.8), math.log(1.25))),
                         blur_sigma=rng.uniform(0.0, 1.0))


def apply_geometry(arr: np.ndarray, g: GeomDraw, order: int) -> np.ndarray:
    """Warp the last two axes; ``order=0`` for labels keeps classes exact."""
    out = arr
    if g.scale != 1.0 or g.angle != 0.0 or g.shift != (0.0, 0.0):
        h, w = arr.shape[-2:]
        a = math.radians(g.angle)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]) * g.scale
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        offset = centre + np.asarray(g.shift) - rot @ centre
        planes = out.reshape(-1, h, w)
        out = np.stack([ndimage.affine_transform(p, rot, offset=offset, order=order, mode="reflect")
                        for p in planes]).reshape(arr.shape)
    if g.k90:
        out = np.rot90(out, g.k90, axes=(-2, -1))
    if g.flip_h:
        out = out[..., :, ::-1]
    if g.flip_v:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


def apply_intensity(image: np.ndarray, d: IntensityDraw) -> np.ndarray:
    x = image
    if d.contrast != 1.0 or d.brightness != 0.0:
        mean = x.mean(axis=(-2, -1), keepdims=True)
        x = np.clip((x - mean) * d.contrast + mean + d.brightness, 0.0, 1.0)
    if d.gamma != 1.0:
        x = x ** d.gamma
    if d.blur_sigma > 0:
        x = np.stack([ndimage.gaussian_filter(p, d.blur_sigma, mode="reflect") for p in x])
    return x.astype(image.dtype, copy=False)


def weak_augment(s: Sample, rng: np.random.Generator, geom: GeomDraw | None = None) -> Sample:
    g = draw_geometry(rng, s.image.shape[-1]) if geom is None else geom
    return replace(s, image=apply_geometry(s.image, g, order=1).astype(s.image.dtype),
                   label=apply_geometry(s.label, g, order=0))


def strong_augment(s: Sample, rng: np.random.Generator, geom: GeomDraw | None = None,
                   intensity: IntensityDraw | None = None) -> Sample:
    weak = weak_augment(s, rng, geom)
    d = draw_intensity(rng) if intensity is None else intensity
    return replace(weak, image=apply_intensity(weak.image, d))


def weak_strong_pair(s: Sample, rng: np.random.Generator) -> tuple[Sample, Sample]:
    """Weak and strong views sharing one geometric draw, so their pixels line up."""
    g = draw_geometry(rng, s.image.shape[-1])
    weak = weak_augment(s, rng, g)
    return weak, replace(weak, image=apply_intensity(weak.image, draw_intensity(rng)))


# ----------------------------------------------------------------- on-disk layout

def save_dataset(ds: Dataset, out_dir) -> None:
    """images/ and labels/ hold GRID files; manifest.txt lists ``id domain split``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    lines = [f"# num_classes={ds.num_classes}"]
    for split in (LABELED, UNLABELED, TEST):
        for s in ds.split(split):
            name = f"{split}_{s.sample_id:04d}"
            write_grid(out / "images" / f"{name}.grid", s.image)
            write_grid(out / "labels" / f"{name}.grid", s.label.astype(np.float32))
            lines.append(f"{name} {s.domain} {split}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    splits = {LABELED: [], UNLABELED: [], TEST: []}
    num_classes = 2
    for line in (root / "manifest.txt").read_text().splitlines():
        if line.startswith("#"):
            if "num_classes=" in line:
                num_classes = int(line.split("num_classes=")[1])
            continue
        if not line.strip():
            continue
        name, domain, split = line.split()
        image = read_grid(root / "images" / f"{name}.grid")
        label = read_grid(root / "labels" / f"{name}.grid")[0].round().astype(np.int64)
        splits[split].append(Sample(image, label, int(domain), int(name.rsplit("_", 1)[1])))
    return Dataset(splits[LABELED], splits[UNLABELED], splits[TEST], num_classes)
