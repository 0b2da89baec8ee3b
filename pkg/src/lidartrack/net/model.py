"""Micro fully-convolutional vehicle segmenter.

Three strided conv blocks contract the 2-channel range image, three transposed
conv blocks expand it again. After each transposed conv the matching encoder
activation is concatenated, then batch-norm and ReLU are applied. A 1x1
classifier head sits on each decoder block, giving logits at three
resolutions (coarsest first).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L

CROP_WIDTH = 448


@dataclass
class NetArch:
    in_channels: int = 2
    conv_channels: tuple = (24, 48, 96)
    conv_kernels: tuple = ((5, 11), (7, 15), (3, 3))
    conv_strides: tuple = ((1, 2), (2, 2), (2, 2))
    deconv_channels: tuple = (48, 24, 12)
    n_classes: int = 2
    bn_eps: float = 1e-5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetArch":
        tup = lambda v: tuple(tuple(x) if isinstance(x, list) else x for x in v)
        return cls(**{k: (tup(v) if isinstance(v, list) else v) for k, v in d.items()})

    def pad(self, k):
        return ((k[0] - 1) // 2, (k[1] - 1) // 2)

    def decoder_in(self, i: int) -> int:
        return self.conv_channels[2] if i == 0 else self.decoder_out(i - 1)

    def decoder_out(self, i: int) -> int:
        """Channels after concatenating the skip into decoder block ``i``."""
        skip = (self.conv_channels[1], self.conv_channels[0], self.in_channels)[i]
        return self.deconv_channels[i] + skip


@dataclass
class NetworkParams:
    arch: NetArch
    weights: dict[str, np.ndarray]
    running: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            {k: v.copy() for k, v in self.weights.items()},
            {k: {n: a.copy() for n, a in v.items()} for k, v in self.running.items()},
        )

    def astype(self, dtype) -> "NetworkParams":
        out = self.copy()
        out.weights = {k: v.astype(dtype) for k, v in out.weights.items()}
        out.running = {k: {n: a.astype(dtype) for n, a in v.items()} for k, v in out.running.items()}
        return out

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype


def he_init(shape, seed=None, fan_in=None, rng=None, dtype=np.float32) -> np.ndarray:
    """Zero-mean Gaussian with variance ``2 / fan_in``."""
    if fan_in is None:
        fan_in = int(np.prod(shape[1:]))
    if fan_in <= 0:
        raise ValueError("he_init needs a positive fan-in")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(arch: NetArch | None = None, seed: int = 0, dtype=np.float32) -> NetworkParams:
    arch = arch or NetArch()
    rng = np.random.default_rng(seed)
    w: dict[str, np.ndarray] = {}
    running: dict[str, dict[str, np.ndarray]] = {}

    def bn(name, c):
        w[f"{name}.gamma"] = np.ones(c, dtype)
        w[f"{name}.beta"] = np.zeros(c, dtype)
        running[name] = {"mean": np.zeros(c, dtype), "var": np.ones(c, dtype)}

    c_in = arch.in_channels
    for i, (c, k) in enumerate(zip(arch.conv_channels, arch.conv_kernels)):
        w[f"conv{i}.W"] = he_init((c, c_in, *k), rng=rng, dtype=dtype)
        w[f"conv{i}.b"] = np.zeros(c, dtype)
        bn(f"bn_conv{i}", c)
        c_in = c
    for i in range(3):
        k = arch.conv_kernels[2 - i]
        s = arch.conv_strides[2 - i]
        cin, cout = arch.decoder_in(i), arch.deconv_channels[i]
        fan = cin * k[0] * k[1] / (s[0] * s[1])
        w[f"deconv{i}.W"] = he_init((cin, cout, *k), fan_in=fan, rng=rng, dtype=dtype)
        w[f"deconv{i}.b"] = np.zeros(cout, dtype)
        bn(f"bn_deconv{i}", arch.decoder_out(i))
        w[f"head{i}.W"] = he_init((arch.n_classes, arch.decoder_out(i), 1, 1), rng=rng, dtype=dtype)
        w[f"head{i}.b"] = np.zeros(arch.n_classes, dtype)
    return NetworkParams(arch, w, running)


def _finite(name, arr):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite activations after {name}")


def forward(params: NetworkParams, x: np.ndarray, mode: str = "eval", momentum: float = 0.1):
    """Return ``(logits, cache)`` with logits ordered coarse to fine.

    Train mode uses batch statistics and updates the running estimates in
    ``params.running``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    a, W = params.arch, params.weights
    if x.ndim != 4 or x.shape[1] != a.in_channels:
        raise L.ShapeError(f"input: expected (B, {a.in_channels}, H, W), got {x.shape}")
    x = x.astype(params.dtype, copy=False)
    cache: dict = {"train": train}

    enc = [x]
    h = x
    for i in range(3):
        k, s = a.conv_kernels[i], a.conv_strides[i]
        h, cache[f"conv{i}"] = L.conv_forward(h, W[f"conv{i}.W"], W[f"conv{i}.b"], s, a.pad(k), name=f"conv{i}")
        h, cache[f"bn_conv{i}"] = L.batchnorm_forward(
            h, W[f"bn_conv{i}.gamma"], W[f"bn_conv{i}.beta"], params.running[f"bn_conv{i}"],
            train, momentum, a.bn_eps)
        h, cache[f"relu_conv{i}"] = L.relu_forward(h)
        _finite(f"conv{i}", h)
        enc.append(h)

    logits = []
    for i in range(3):
        k, s = a.conv_kernels[2 - i], a.conv_strides[2 - i]
        skip = enc[2 - i]
        h, cache[f"deconv{i}"] = L.deconv_forward(
            h, W[f"deconv{i}.W"], W[f"deconv{i}.b"], s, a.pad(k), skip.shape[2:], name=f"deconv{i}")
        h = np.concatenate([h, skip], axis=1)
        h, cache[f"bn_deconv{i}"] = L.batchnorm_forward(
            h, W[f"bn_deconv{i}.gamma"], W[f"bn_deconv{i}.beta"], params.running[f"bn_deconv{i}"],
            train, momentum, a.bn_eps)
        h, cache[f"relu_deconv{i}"] = L.relu_forward(h)
        _finite(f"deconv{i}", h)
        out, cache[f"head{i}"] = L.conv_forward(h, W[f"head{i}.W"], W[f"head{i}.b"], name=f"head{i}")
        logits.append(out)
    return tuple(logits), cache


def backward(params: NetworkParams, cache: dict, dlogits) -> dict[str, np.ndarray]:
    """Exact gradients of every weight given gradients w.r.t. the three logit maps."""
    if not cache:
        raise ValueError("backward needs the cache from a forward pass")
    a = params.arch
    grads: dict[str, np.ndarray] = {}
    dh = None
    # d(loss)/d(encoder activation) accumulated from skip connections
    denc: dict[int, np.ndarray] = {}
    for i in reversed(range(3)):
        try:
            head_cache = cache[f"head{i}"]
        except KeyError:
            raise ValueError(f"cache is missing block head{i}") from None
        dl = dlogits[i]
        if dl is None:
            dl = np.zeros((head_cache[0][0], a.n_classes, head_cache[5], head_cache[6]), dtype=params.dtype)
        dfeat, grads[f"head{i}.W"], grads[f"head{i}.b"] = L.conv_backward(dl, head_cache)
        if dh is not None:
            dfeat = dfeat + dh
        dfeat = L.relu_backward(dfeat, cache[f"relu_deconv{i}"])
        dfeat, grads[f"bn_deconv{i}.gamma"], grads[f"bn_deconv{i}.beta"] = \
            L.batchnorm_backward(dfeat, cache[f"bn_deconv{i}"])
        c_up = a.deconv_channels[i]
        denc[2 - i] = dfeat[:, c_up:]
        dh, grads[f"deconv{i}.W"], grads[f"deconv{i}.b"] = \
            L.deconv_backward(np.ascontiguousarray(dfeat[:, :c_up]), cache[f"deconv{i}"])

    # dh is now the gradient w.r.t. the deepest encoder activation
    for i in reversed(range(3)):
        if i < 2:
            dh = dh + denc[i + 1]
        dh = L.relu_backward(dh, cache[f"relu_conv{i}"])
        dh, grads[f"bn_conv{i}.gamma"], grads[f"bn_conv{i}.beta"] = \
            L.batchnorm_backward(dh, cache[f"bn_conv{i}"])
        dh, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = L.conv_backward(dh, cache[f"conv{i}"])
    return grads


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def crop_input(x: np.ndarray) -> np.ndarray:
    return x[..., :CROP_WIDTH]


def predict(params: NetworkParams, image) -> np.ndarray:
    """Vehicle probability per pixel, shape (64, 451); the 3 cropped columns score 0.

    ``image`` is a :class:`RangeImage` or a ``(2, H, W)`` array.
    """
    x = image.stacked() if hasattr(image, "stacked") else np.asarray(image)
    width = x.shape[-1]
    logits, _ = forward(params, crop_input(x)[None], "eval")
    prob = softmax(logits[-1])[0, 1]
    out = np.zeros((x.shape[-2], width), dtype=np.float64)
    out[:, :prob.shape[-1]] = prob
    return out


def hflip_augment(x: np.ndarray, gt: np.ndarray, coin: bool):
    if not coin:
        return x, gt
    return np.ascontiguousarray(x[..., ::-1]), np.ascontiguousarray(gt[..., ::-1])
