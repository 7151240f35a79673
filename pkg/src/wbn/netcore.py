"""Forward propagation of a fully connected classifier with optional (weighted) batch norm.

Signals are stored unit-major: a layer's pre-normalization affine signal
``lam`` is an ``H x B`` array whose columns are the samples of the batch.
Each layer ``l`` computes

    lam = W @ z_prev
    u   = lam                                  (mode "none")
    u   = gamma * (lam - m) / sqrt(v + eps)    (modes "bn" and "wbn")
    z   = a(b + u)

where ``m, v`` are the batch mean and unbiased variance ("bn") or their
weighted counterparts normalized by ``Z_r`` and ``G_r`` ("wbn").  At
inference the moving statistics ``M, V`` replace ``m, v``.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .weighting import batch_normalizers

__all__ = [
    "NORM_MODES",
    "ACTIVATIONS",
    "NetworkConfig",
    "LayerParams",
    "NetworkModel",
    "LayerCache",
    "BatchCache",
    "affine",
    "batch_stats",
    "normalize_forward_train",
    "normalize_forward_infer",
    "MovingStats",
    "activate",
    "activation_derivative",
    "softmax_probs",
    "predict",
    "forward_full",
    "save_model",
    "load_model",
    "CheckpointError",
]

NORM_MODES = ("none", "bn", "wbn")
ACTIVATIONS = ("tanh", "identity")
VARIANCE_DIVISORS = ("R-1", "R")


@dataclass
class NetworkConfig:
    """Layer sizes ``(H_0, ..., H_L)`` plus one activation and norm mode per layer."""

    layer_sizes: tuple
    activations: tuple
    norm_modes: tuple
    eps: float = 1e-8
    legacy_variance_normalizer: bool = False
    moving_variance_divisor: str = "R-1"
    dtype: str = "float64"

    def __post_init__(self):
        self.layer_sizes = tuple(int(h) for h in self.layer_sizes)
        self.activations = tuple(self.activations)
        self.norm_modes = tuple(self.norm_modes)
        L = len(self.layer_sizes) - 1
        if L < 1 or any(h < 1 for h in self.layer_sizes):
            raise ValueError("need at least one layer and positive layer sizes")
        if len(self.activations) != L or len(self.norm_modes) != L:
            raise ValueError(f"expected {L} activations and norm modes")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unsupported activations {bad}")
        bad = [m for m in self.norm_modes if m not in NORM_MODES]
        if bad:
            raise ValueError(f"unsupported norm modes {bad}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.moving_variance_divisor not in VARIANCE_DIVISORS:
            raise ValueError(f"moving_variance_divisor must be one of {VARIANCE_DIVISORS}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def uses_weights(self):
        return "wbn" in self.norm_modes

    @classmethod
    def classifier(cls, n, hidden, K, norm="bn", eps=1e-8, **kwargs):
        """``n -> hidden... -> K`` with tanh hidden layers, identity output and ``norm`` on hidden layers."""
        hidden = tuple(hidden)
        return cls(
            layer_sizes=(n, *hidden, K),
            activations=("tanh",) * len(hidden) + ("identity",),
            norm_modes=(norm,) * len(hidden) + ("none",),
            eps=eps,
            **kwargs,
        )


@dataclass
class LayerParams:
    W: np.ndarray
    b: np.ndarray
    gamma: np.ndarray | None = None
    M: np.ndarray | None = None
    V: np.ndarray | None = None

    @property
    def normalized(self):
        return self.gamma is not None


@dataclass
class NetworkModel:
    config: NetworkConfig
    layers: list
    class_names: tuple | None = None

    def parameters(self):
        """Trainable tensors in a fixed order: ``W, b[, gamma]`` for each layer."""
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
            if layer.normalized:
                out.append(layer.gamma)
        return out

    def parameter_names(self):
        names = []
        for i, layer in enumerate(self.layers, start=1):
            names += [f"W{i}", f"b{i}"]
            if layer.normalized:
                names.append(f"gamma{i}")
        return names

    def copy(self):
        return copy.deepcopy(self)

    def set_mode(self, mode):
        """Switch every normalized layer to ``mode`` ("bn" or "wbn")."""
        modes = tuple(mode if m != "none" else "none" for m in self.config.norm_modes)
        self.config = NetworkConfig(**{**asdict(self.config), "norm_modes": modes})


@dataclass
class LayerCache:
    mode: str
    z_in: np.ndarray
    lam: np.ndarray
    u: np.ndarray
    pre: np.ndarray
    z: np.ndarray
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    y: np.ndarray | None = None


@dataclass
class BatchCache:
    layers: list = field(default_factory=list)
    weights: np.ndarray | None = None
    Z_r: float | None = None
    G_r: float | None = None

    @property
    def size(self):
        return self.layers[0].z_in.shape[1]


def affine(z_prev, W):
    if W.shape[1] != z_prev.shape[0]:
        raise ValueError(f"W is {W.shape} but input has {z_prev.shape[0]} rows")
    return W @ z_prev


def batch_stats(lam, weights=None, mode="bn", legacy=False):
    """Per-unit batch mean and unbiased variance of ``lam`` (``H x B``).

    For ``mode="wbn"`` the weighted versions are returned,
    ``m = sum(w lam) / Z_r`` and ``v = sum(w (lam - m)**2) / G_r``.
    """
    lam = np.asarray(lam)
    B = lam.shape[-1]
    if B < 2:
        raise ValueError("batch statistics need at least 2 samples")
    if mode == "bn":
        if weights is not None:
            raise ValueError("bn statistics take no sample weights")
        m = lam.mean(axis=-1)
        dev = lam - m[..., None]
        v = (dev * dev).sum(axis=-1) / (B - 1)
        return m, v
    if mode == "wbn":
        if weights is None:
            raise ValueError("wbn statistics require sample weights")
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (B,):
            raise ValueError("one weight per batch column is required")
        Z, G = batch_normalizers(w, legacy=legacy)
        w = w.astype(lam.dtype, copy=False)
        m = (lam @ w) / Z
        dev = lam - m[..., None]
        v = ((dev * dev) @ w) / G
        return m, v
    raise ValueError(f"no batch statistics for mode {mode!r}")


def normalize_forward_train(lam, gamma, eps, weights=None, mode="bn", legacy=False):
    """Standardize with the current batch statistics; returns ``(u, y, m, v)``."""
    m, v = batch_stats(lam, weights, mode, legacy)
    y = (lam - m[:, None]) / np.sqrt(v + eps)[:, None]
    return gamma[:, None] * y, y, m, v


def normalize_forward_infer(lam, gamma, eps, M, V):
    scale = V + eps
    assert np.all(scale > 0), "moving variance plus eps must be positive"
    return gamma[:, None] * (lam - M[:, None]) / np.sqrt(scale)[:, None]


class MovingStats:
    """Accumulates per-batch ``m_r, v_r`` and turns them into inference statistics.

    ``M = sum_r m_r / R`` and ``V = sum_r v_r / (R - 1)`` (divisor "R-1"),
    or ``V = sum_r v_r / R`` with divisor "R".
    """

    def __init__(self, n_layers):
        self.sum_m = [None] * n_layers
        self.sum_v = [None] * n_layers
        self.R = 0

    def update(self, cache):
        for i, lc in enumerate(cache.layers):
            if lc.m is None:
                continue
            if self.sum_m[i] is None:
                self.sum_m[i] = np.zeros_like(lc.m, dtype=np.float64)
                self.sum_v[i] = np.zeros_like(lc.v, dtype=np.float64)
            self.sum_m[i] += lc.m
            self.sum_v[i] += lc.v
        self.R += 1

    def finalize(self, divisor="R-1"):
        """Return per-layer ``(M, V)`` (``None`` for unnormalized layers)."""
        if self.R < 1:
            raise ValueError("no batches accumulated")
        if divisor == "R-1":
            if self.R < 2:
                raise ValueError("V with divisor R-1 needs at least 2 batches")
            v_div = self.R - 1
        elif divisor == "R":
            v_div = self.R
        else:
            raise ValueError(f"unknown divisor {divisor!r}")
        out = []
        for sm, sv in zip(self.sum_m, self.sum_v):
            out.append(None if sm is None else (sm / self.R, sv / v_div))
        return out

    def apply(self, model):
        for layer, stats in zip(model.layers, self.finalize(model.config.moving_variance_divisor)):
            if stats is not None:
                M, V = stats
                dtype = layer.W.dtype
                layer.M, layer.V = M.astype(dtype), V.astype(dtype)


def activate(pre, kind):
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "identity":
        return pre.copy()
    raise ValueError(f"unsupported activation {kind!r}")


def activation_derivative(pre, kind, z=None):
    """``a'(pre)``; pass ``z = a(pre)`` to reuse it for tanh."""
    if kind == "tanh":
        t = np.tanh(pre) if z is None else z
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unsupported activation {kind!r}")


def softmax_probs(zL):
    """Column-wise softmax of the ``K x B`` output signals."""
    zL = np.asarray(zL)
    if not np.all(np.isfinite(zL)):
        raise FloatingPointError("non-finite network output")
    e = np.exp(zL - zL.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def predict(p):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(p, axis=0)


def forward_full(model, inputs, weights=None, regime="train"):
    """Propagate ``inputs`` (``n x B``) through the network.

    Returns ``(p, cache)`` where ``p`` holds class probabilities column-wise.
    The cache is only filled in the train regime; it is ``None`` at inference.
    """
    cfg = model.config
    dtype = np.dtype(cfg.dtype)
    z = np.asarray(inputs, dtype=dtype)
    train = regime == "train"
    if regime not in ("train", "infer"):
        raise ValueError(f"unknown regime {regime!r}")
    cache = BatchCache() if train else None
    if train and weights is not None:
        cache.weights = np.asarray(weights, dtype=np.float64)
        if cache.weights.shape != (z.shape[1],):
            raise ValueError("one weight per sample is required")
        if z.shape[1] >= 2:
            cache.Z_r, cache.G_r = batch_normalizers(
                cache.weights, legacy=cfg.legacy_variance_normalizer
            )
    for layer, mode, kind in zip(model.layers, cfg.norm_modes, cfg.activations):
        lam = affine(z, layer.W)
        m = v = y = None
        if mode == "none":
            u = lam
        elif train:
            w = weights if mode == "wbn" else None
            u, y, m, v = normalize_forward_train(
                lam, layer.gamma, cfg.eps, w, mode, cfg.legacy_variance_normalizer
            )
        else:
            u = normalize_forward_infer(lam, layer.gamma, cfg.eps, layer.M, layer.V)
        pre = layer.b[:, None] + u
        z_out = activate(pre, kind)
        if train:
            cache.layers.append(LayerCache(mode, z, lam, u, pre, z_out, m, v, y))
        z = z_out
    return softmax_probs(z), cache


# Checkpoint layout (all integers little-endian):
#   8 bytes   magic b"WBNMODEL"
#   uint32    format version (1)
#   uint32    header length H
#   H bytes   UTF-8 JSON: {"config": {...}, "class_names": [...], "tensors": [[name, shape], ...]}
#   then every tensor listed in "tensors", in order, as little-endian float64, C order.
CHECKPOINT_MAGIC = b"WBNMODEL"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _checkpoint_tensors(model):
    for i, layer in enumerate(model.layers, start=1):
        for name in ("W", "b", "gamma", "M", "V"):
            value = getattr(layer, name)
            if value is not None:
                yield f"{name}{i}", value


def save_model(model, path):
    tensors = list(_checkpoint_tensors(model))
    header = json.dumps({
        "config": asdict(model.config),
        "class_names": list(model.class_names) if model.class_names else None,
        "tensors": [[name, list(t.shape)] for name, t in tensors],
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack("<II", buf[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    config = NetworkConfig(**header["config"])
    dtype = np.dtype(config.dtype)
    offset = 16 + hlen
    arrays = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated at tensor {name}")
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=offset) \
            .reshape(shape).astype(dtype)
        offset += nbytes
    layers = []
    for i in range(1, config.n_layers + 1):
        layers.append(LayerParams(
            W=arrays[f"W{i}"], b=arrays[f"b{i}"], gamma=arrays.get(f"gamma{i}"),
            M=arrays.get(f"M{i}"), V=arrays.get(f"V{i}"),
        ))
    names = tuple(header["class_names"]) if header["class_names"] else None
    return NetworkModel(config, layers, names)
