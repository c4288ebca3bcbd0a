"""A small two-scale conv segmenter with hand-written backprop.

Layout::

    x ─conv1─relu─┬─avgpool2─conv2─relu─conv3─relu─upsample2─(+)─conv4─softmax
                  └──────────────────── skip ───────────────────┘

All convolutions are 3x3 with reflect padding. Activations are kept
channels-last internally so im2col products need no transposes; the public
surface uses (B, C, H, W).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"SEGN"
LAYERS = ("conv1", "conv2", "conv3", "conv4")


def param_names() -> list[str]:
    return [f"{layer}.{kind}" for layer in LAYERS for kind in ("w", "b")]


def layer_shapes(in_channels: int, num_classes: int, widths=(16, 32, 16)):
    c1, c2, c3 = widths
    if c3 != c1:
        raise ValueError("decoder width must equal the skip width")
    return {
        "conv1": (c1, in_channels),
        "conv2": (c2, c1),
        "conv3": (c3, c2),
        "conv4": (num_classes, c3),
    }


def init_params(in_channels: int = 1, num_classes: int = 2, widths=(16, 32, 16),
                rng: np.random.Generator | int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-scaled init; the classifier layer starts at zero (uniform softmax)."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, (cout, cin) in layer_shapes(in_channels, num_classes, widths).items():
        if name == "conv4":
            w = np.zeros((cout, cin, 3, 3))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), size=(cout, cin, 3, 3))
        params[f"{name}.w"] = w.astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
    return params


def count_params(params) -> int:
    return sum(v.size for v in params.values())


# ----------------------------------------------------------------- primitives

def _pad(x):
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="reflect")


def _unpad_grad(g):
    # adjoint of a width-1 reflect pad on axes 1 and 2
    g = g.copy()
    g[:, 2, :, :] += g[:, 0, :, :]
    g[:, -3, :, :] += g[:, -1, :, :]
    g = g[:, 1:-1]
    g[:, :, 2, :] += g[:, :, 0, :]
    g[:, :, -3, :] += g[:, :, -1, :]
    return g[:, :, 1:-1]


def _wmat(w):
    # (Cout, Cin, 3, 3) -> (9*Cin, Cout) matching the (kh, kw, Cin) column order
    return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])


def _conv(x, w, b):
    """3x3 reflect-padded conv, channels-last. Returns (out, backward cache).

    Wide outputs use im2col; narrow ones (Cout < Cin) project every tap first
    and sum shifted planes, which avoids materialising the 9x column buffer.
    """
    bsz, h, wd, cin = x.shape
    cout = w.shape[0]
    xp = _pad(x)
    if cout < cin:
        taps = (xp.reshape(-1, cin) @ _wmat(w).reshape(9, cin, cout).transpose(1, 0, 2).reshape(cin, 9 * cout))
        taps = taps.reshape(bsz, h + 2, wd + 2, 9, cout)
        out = np.broadcast_to(b, (bsz, h, wd, cout)).copy()
        for k in range(9):
            i, j = divmod(k, 3)
            out += taps[:, i:i + h, j:j + wd, k, :]
        return out, ("shift", xp)
    cols = np.concatenate([xp[:, i:i + h, j:j + wd, :] for i in range(3) for j in range(3)], axis=-1)
    cols = cols.reshape(bsz * h * wd, 9 * cin)
    out = (cols @ _wmat(w) + b).reshape(bsz, h, wd, cout)
    return out, ("cols", cols)


def _conv_backward(dout, cache, w, x_shape):
    bsz, h, wd, cin = x_shape
    cout = w.shape[0]
    kind, saved = cache
    db = dout.reshape(-1, cout).sum(axis=0)
    if kind == "shift":
        dtaps = np.zeros((bsz, h + 2, wd + 2, 9, cout), dtype=dout.dtype)
        for k in range(9):
            i, j = divmod(k, 3)
            dtaps[:, i:i + h, j:j + wd, k, :] = dout
        dtaps = dtaps.reshape(-1, 9 * cout)
        wcat = _wmat(w).reshape(9, cin, cout).transpose(1, 0, 2).reshape(cin, 9 * cout)
        dwcat = saved.reshape(-1, cin).T @ dtaps
        dw = dwcat.reshape(cin, 3, 3, cout).transpose(3, 0, 1, 2)
        dxp = (dtaps @ wcat.T).reshape(bsz, h + 2, wd + 2, cin)
        return _unpad_grad(dxp), dw, db
    dflat = dout.reshape(-1, cout)
    dw = (saved.T @ dflat).reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
    dcols = (dflat @ _wmat(w).T).reshape(bsz, h, wd, 9, cin)
    dxp = np.zeros((bsz, h + 2, wd + 2, cin), dtype=dout.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, k, :]
    return _unpad_grad(dxp), dw, db


def _pool(x):
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _pool_backward(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample_backward(g):
    b, h, w, c = g.shape
    return g.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ----------------------------------------------------------------- network

def _as_batch(images):
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4:
        raise ValueError(f"expected (B, D, H, W) images, got {images.shape}")
    h, w = images.shape[-2:]
    if h % 2 or w % 2 or h < 4 or w < 4:
        raise ValueError(f"image sides must be even and >= 4, got {h}x{w}")
    return images


def forward(params, images, return_cache: bool = False):
    """Per-pixel class probabilities (B, C, H, W) for images (B, D, H, W)."""
    x = np.moveaxis(_as_batch(images), 1, -1).astype(params["conv1.w"].dtype, copy=False)
    z1, c1 = _conv(x, params["conv1.w"], params["conv1.b"])
    a1 = np.maximum(z1, 0)
    d = _pool(a1)
    z2, c2 = _conv(d, params["conv2.w"], params["conv2.b"])
    a2 = np.maximum(z2, 0)
    z3, c3 = _conv(a2, params["conv3.w"], params["conv3.b"])
    a3 = np.maximum(z3, 0)
    u = _upsample(a3) + a1
    z4, c4 = _conv(u, params["conv4.w"], params["conv4.b"])
    p = _softmax(z4)
    probs = np.moveaxis(p, -1, 1)
    if not return_cache:
        return probs
    cache = dict(x_shape=x.shape, z1=z1, d_shape=d.shape, z2=z2, z3=z3, u_shape=u.shape,
                 convs=(c1, c2, c3, c4), p=p)
    return probs, cache


def backward(params, cache, dprobs) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradient w.r.t. the output probabilities."""
    c1, c2, c3, c4 = cache["convs"]
    p = cache["p"]
    g = np.moveaxis(np.asarray(dprobs, dtype=p.dtype), 1, -1)
    dz4 = p * (g - (p * g).sum(axis=-1, keepdims=True))
    du, dw4, db4 = _conv_backward(dz4, c4, params["conv4.w"], cache["u_shape"])
    da3 = _upsample_backward(du)
    dz3 = da3 * (cache["z3"] > 0)
    da2, dw3, db3 = _conv_backward(dz3, c3, params["conv3.w"], cache["z2"].shape)
    dz2 = da2 * (cache["z2"] > 0)
    dd, dw2, db2 = _conv_backward(dz2, c2, params["conv2.w"], cache["d_shape"])
    da1 = _pool_backward(dd) + du
    dz1 = da1 * (cache["z1"] > 0)
    _, dw1, db1 = _conv_backward(dz1, c1, params["conv1.w"], cache["x_shape"])
    return {"conv1.w": dw1, "conv1.b": db1, "conv2.w": dw2, "conv2.b": db2,
            "conv3.w": dw3, "conv3.b": db3, "conv4.w": dw4, "conv4.b": db4}


def loss_and_grad(params, images, loss_fn):
    """``loss_fn(probs) -> (value, dvalue/dprobs)``; returns (value, param grads)."""
    probs, cache = forward(params, images, return_cache=True)
    value, dprobs = loss_fn(probs)
    return value, backward(params, cache, dprobs)


# ----------------------------------------------------------------- optimisation

def poly_lr(lr0: float, t: int, t_total: int, power: float = 0.9) -> float:
    return lr0 * (1.0 - t / t_total) ** power


@dataclass
class SGD:
    """Heavy-ball SGD; weight decay is added to the gradient before the momentum update."""
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: dict = field(default_factory=dict)

    def step(self, params, grads, lr: float) -> None:
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p
            if self.momentum:
                buf = self.buffers.get(name)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.buffers[name] = buf
                g = buf
            p -= (lr * g).astype(p.dtype, copy=False)


def ema_decay(t: int, decay: float = 0.99) -> float:
    return min(decay, 1.0 - 1.0 / (t + 1))


def ema_update(teacher, student, decay: float) -> None:
    if not 0 <= decay < 1:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    for name, tp in teacher.items():
        tp *= decay
        tp += (1 - decay) * student[name]


@dataclass
class TeacherStudent:
    student: dict
    teacher: dict
    decay: float = 0.99

    @classmethod
    def create(cls, params, decay: float = 0.99):
        return cls({k: v.copy() for k, v in params.items()}, {k: v.copy() for k, v in params.items()}, decay)

    def update_teacher(self, t: int) -> None:
        ema_update(self.teacher, self.student, ema_decay(t, self.decay))


# ----------------------------------------------------------------- checkpoints

def save_checkpoint(path, params) -> None:
    """``SEGN`` magic, u32 in/classes/width count/widths, then float32 blob in layer order."""
    c1, cin = params["conv1.w"].shape[:2]
    c2 = params["conv2.w"].shape[0]
    c3 = params["conv3.w"].shape[0]
    ncls = params["conv4.w"].shape[0]
    header = CKPT_MAGIC + struct.pack("<6I", 1, cin, ncls, 3, c1, c2) + struct.pack("<I", c3)
    blob = b"".join(np.ascontiguousarray(params[n], dtype="<f4").tobytes() for n in param_names())
    Path(path).write_bytes(header + blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a SEGN checkpoint")
    version, cin, ncls, nw, c1, c2, c3 = struct.unpack_from("<7I", raw, 4)
    if version != 1 or nw != 3:
        raise ValueError(f"{path}: unsupported checkpoint layout")
    template = init_params(cin, ncls, (c1, c2, c3))
    offset = 4 + 7 * 4
    params = {}
    for name in param_names():
        n = template[name].size
        params[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(
            template[name].shape).astype(np.float32)
        offset += 4 * n
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return params
