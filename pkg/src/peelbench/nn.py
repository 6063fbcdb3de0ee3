"""Minimal dense/conv network stack with explicit reverse-mode gradients.

Arrays are plain float64 numpy; each network class implements a paired
forward/backward instead of a general autodiff graph, which keeps the
arithmetic auditable. Parameters serialize to a small versioned binary
container with a JSON architecture sidecar.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolationError
from .seeding import rng_from

#: When true, every op asserts finiteness of its outputs.
DEBUG_FINITE = False

_MAGIC = b"PBNN"
_VERSION = 1

ACTIVATIONS = ("relu", "tanh", "identity")


def _check_finite(name: str, x: np.ndarray) -> None:
    if DEBUG_FINITE and not np.all(np.isfinite(x)):
        raise ContractViolationError(f"non-finite values in {name}")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x
    raise ContractViolationError(f"unknown activation {name!r}")


def _activate_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - post**2
    if name == "identity":
        return np.ones_like(pre)
    raise ContractViolationError(f"unknown activation {name!r}")


class DenseNet:
    """Fully-connected stack with per-layer activations and dropout.

    Dropout (inverted scaling) applies to hidden activations only, and
    only in train mode; all stochasticity derives from the seed passed
    to forward.
    """

    def __init__(self, sizes, activations, dropout_rate=0.0, seed=0):
        if len(activations) != len(sizes) - 1:
            raise ContractViolationError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ContractViolationError(f"unknown activation {a!r}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ContractViolationError("dropout_rate must lie in [0,1)")
        self.sizes = list(int(s) for s in sizes)
        self.activations = list(activations)
        self.dropout_rate = float(dropout_rate)
        rng = rng_from(seed, "dense-init")
        self.weights = [
            glorot_uniform(rng, (a, b), a, b)
            for a, b in zip(self.sizes[:-1], self.sizes[1:])
        ]
        self.biases = [np.zeros(b) for b in self.sizes[1:]]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_params(self, arrays) -> None:
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.weights):
            raise ContractViolationError("parameter count mismatch")
        for i in range(len(self.weights)):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ContractViolationError("parameter shape mismatch")
            self.weights[i] = np.array(w, dtype=float)
            self.biases[i] = np.array(b, dtype=float)

    def forward(self, x, mode="eval", seed=0):
        """Returns (output, cache); cache feeds backward."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ContractViolationError(
                f"input dim {x.shape[1]} != expected {self.in_dim}"
            )
        if mode not in ("train", "eval"):
            raise ContractViolationError("mode must be train or eval")
        h = x
        layers = []
        n_layers = len(self.weights)
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            pre = h @ w + b
            act_val = _activate(act, pre)
            mask = None
            if (
                mode == "train"
                and self.dropout_rate > 0.0
                and i < n_layers - 1
            ):
                rng = rng_from(seed, "dropout", i)
                keep = 1.0 - self.dropout_rate
                mask = (rng.random(act_val.shape) < keep) / keep
            layers.append((h, pre, act_val, mask))
            h = act_val if mask is None else act_val * mask
        _check_finite("dense forward", h)
        out = h[0] if squeeze else h
        cache = {"layers": layers, "squeeze": squeeze, "net": self}
        return out, cache

    def backward(self, cache, output_grad):
        """Returns (param_grads aligned with params(), input_grad)."""
        if cache.get("net") is not self:
            raise ContractViolationError("cache does not belong to this network")
        g = np.asarray(output_grad, dtype=float)
        if cache["squeeze"]:
            g = g[None, :]
        param_grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            h_in, pre, post, mask = cache["layers"][i]
            if mask is not None:
                g = g * mask
            g = g * _activate_grad(self.activations[i], pre, post)
            param_grads[2 * i] = h_in.T @ g
            param_grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        input_grad = g[0] if cache["squeeze"] else g
        return param_grads, input_grad

    def describe(self) -> dict:
        return {
            "kind": "dense",
            "sizes": self.sizes,
            "activations": self.activations,
            "dropout_rate": self.dropout_rate,
        }


def _conv_out(n: int, stride: int, pad: int, k: int = 3) -> int:
    return (n + 2 * pad - k) // stride + 1


class ConvEncoder:
    """Two strided 3x3 convolutions + dense head to a feature vector.

    Input is a single (H, W, C) image or a (B, H, W, C) batch; output is
    ``out_dim`` features (default 64). Dropout applies to the flattened
    conv features before the head, train mode only.
    """

    KERNEL = 3
    STRIDE = 2
    PAD = 1

    def __init__(
        self,
        height,
        width,
        channels,
        out_dim=64,
        conv_channels=(8, 16),
        dropout_rate=0.1,
        seed=0,
    ):
        if not 0.0 <= dropout_rate < 1.0:
            raise ContractViolationError("dropout_rate must lie in [0,1)")
        self.height, self.width, self.channels = int(height), int(width), int(channels)
        self.out_dim = int(out_dim)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.dropout_rate = float(dropout_rate)
        c1, c2 = self.conv_channels
        k = self.KERNEL
        rng = rng_from(seed, "conv-init")
        self.w1 = glorot_uniform(rng, (k, k, self.channels, c1), k * k * self.channels, k * k * c1)
        self.b1 = np.zeros(c1)
        self.w2 = glorot_uniform(rng, (k, k, c1, c2), k * k * c1, k * k * c2)
        self.b2 = np.zeros(c2)
        h1 = _conv_out(self.height, self.STRIDE, self.PAD)
        w1 = _conv_out(self.width, self.STRIDE, self.PAD)
        h2 = _conv_out(h1, self.STRIDE, self.PAD)
        w2 = _conv_out(w1, self.STRIDE, self.PAD)
        self.flat_dim = h2 * w2 * c2
        self.head_w = glorot_uniform(rng, (self.flat_dim, self.out_dim), self.flat_dim, self.out_dim)
        self.head_b = np.zeros(self.out_dim)

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.head_w, self.head_b]

    def set_params(self, arrays) -> None:
        arrays = list(arrays)
        names = ["w1", "b1", "w2", "b2", "head_w", "head_b"]
        if len(arrays) != len(names):
            raise ContractViolationError("parameter count mismatch")
        for name, a in zip(names, arrays):
            cur = getattr(self, name)
            if a.shape != cur.shape:
                raise ContractViolationError("parameter shape mismatch")
            setattr(self, name, np.array(a, dtype=float))

    @staticmethod
    def _conv_forward(x, w, b, stride, pad):
        B, H, W, _ = x.shape
        k = w.shape[0]
        ho, wo = _conv_out(H, stride, pad, k), _conv_out(W, stride, pad, k)
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        out = np.broadcast_to(b, (B, ho, wo, w.shape[3])).copy()
        for di in range(k):
            for dj in range(k):
                sl = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
                out += sl @ w[di, dj]
        return out, xp

    @staticmethod
    def _conv_backward(g, xp, w, stride, x_shape):
        B, H, W, _ = x_shape
        k = w.shape[0]
        ho, wo = g.shape[1], g.shape[2]
        grad_w = np.zeros_like(w)
        grad_xp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                sl = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
                grad_w[di, dj] = np.einsum("bijc,bijo->co", sl, g)
                grad_xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :] += g @ w[di, dj].T
        grad_b = g.sum(axis=(0, 1, 2))
        pad = ConvEncoder.PAD
        grad_x = grad_xp[:, pad : pad + H, pad : pad + W, :]
        return grad_w, grad_b, grad_x

    def forward(self, x, mode="eval", seed=0):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None, ...]
        if x.shape[1:] != (self.height, self.width, self.channels):
            raise ContractViolationError(
                f"image shape {x.shape[1:]} != expected "
                f"{(self.height, self.width, self.channels)}"
            )
        if mode not in ("train", "eval"):
            raise ContractViolationError("mode must be train or eval")
        pre1, xp1 = self._conv_forward(x, self.w1, self.b1, self.STRIDE, self.PAD)
        act1 = np.maximum(pre1, 0.0)
        pre2, xp2 = self._conv_forward(act1, self.w2, self.b2, self.STRIDE, self.PAD)
        act2 = np.maximum(pre2, 0.0)
        flat = act2.reshape(x.shape[0], -1)
        mask = None
        if mode == "train" and self.dropout_rate > 0.0:
            rng = rng_from(seed, "conv-dropout")
            keep = 1.0 - self.dropout_rate
            mask = (rng.random(flat.shape) < keep) / keep
            flat = flat * mask
        out = flat @ self.head_w + self.head_b
        _check_finite("conv forward", out)
        cache = {
            "x_shape": x.shape, "xp1": xp1, "pre1": pre1, "act1": act1,
            "xp2": xp2, "pre2": pre2, "act2": act2, "flat": flat,
            "mask": mask, "squeeze": squeeze, "net": self,
        }
        return (out[0] if squeeze else out), cache

    def backward(self, cache, output_grad):
        if cache.get("net") is not self:
            raise ContractViolationError("cache does not belong to this network")
        g = np.asarray(output_grad, dtype=float)
        if cache["squeeze"]:
            g = g[None, :]
        grad_head_w = cache["flat"].T @ g
        grad_head_b = g.sum(axis=0)
        gf = g @ self.head_w.T
        if cache["mask"] is not None:
            gf = gf * cache["mask"]
        g2 = gf.reshape(cache["act2"].shape) * (cache["pre2"] > 0.0)
        grad_w2, grad_b2, g1 = self._conv_backward(
            g2, cache["xp2"], self.w2, self.STRIDE, cache["act1"].shape
        )
        g1 = g1 * (cache["pre1"] > 0.0)
        grad_w1, grad_b1, grad_x = self._conv_backward(
            g1, cache["xp1"], self.w1, self.STRIDE, cache["x_shape"]
        )
        if cache["squeeze"]:
            grad_x = grad_x[0]
        return [grad_w1, grad_b1, grad_w2, grad_b2, grad_head_w, grad_head_b], grad_x

    def describe(self) -> dict:
        return {
            "kind": "conv",
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "out_dim": self.out_dim,
            "conv_channels": list(self.conv_channels),
            "dropout_rate": self.dropout_rate,
        }


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update; returns (new_params, new_state)."""
    b1, b2 = betas
    if state is None:
        state = {
            "m": [np.zeros_like(p) for p in params],
            "v": [np.zeros_like(p) for p in params],
            "t": 0,
        }
    if len(params) != len(grads) or len(params) != len(state["m"]):
        raise ContractViolationError("params/grads/state length mismatch")
    t = state["t"] + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if p.shape != g.shape:
            raise ContractViolationError("gradient shape mismatch")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, {"m": new_m, "v": new_v, "t": t}


class Adam:
    """Stateful convenience wrapper around adam_step for one network."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = None

    def update(self, net, grads) -> None:
        new_params, self.state = adam_step(
            net.params(), grads, self.state, self.lr, self.betas, self.eps
        )
        net.set_params(new_params)


def serialize_params(arrays) -> bytes:
    chunks = [_MAGIC, struct.pack("<H", _VERSION), struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
        chunks.append(struct.pack("<B", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    return b"".join(chunks)


def deserialize_params(blob: bytes) -> list[np.ndarray]:
    if blob[:4] != _MAGIC:
        raise ContractViolationError("bad magic bytes in parameter container")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _VERSION:
        raise ContractViolationError(f"unsupported container version {version}")
    (count,) = struct.unpack_from("<I", blob, 6)
    off = 10
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out.append(arr.astype(float))
    return out


def save_params(path, arrays, meta: dict) -> None:
    path = Path(path)
    path.write_bytes(serialize_params(arrays))
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_params(path) -> tuple[list[np.ndarray], dict]:
    path = Path(path)
    arrays = deserialize_params(path.read_bytes())
    sidecar = path.with_name(path.name + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return arrays, meta


def params_hash(arrays) -> str:
    """Stable content hash of a parameter list."""
    return hashlib.sha256(serialize_params(arrays)).hexdigest()
