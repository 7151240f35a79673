"""Xavier initialization and the Adamax update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netcore import LayerParams, NetworkModel

__all__ = ["xavier_bound", "xavier_init", "init_model", "AdamaxState", "adamax_step"]


def xavier_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, fan_in, fan_out, rng):
    """Uniform Glorot initialization on ``[-sqrt(6/(fan_in+fan_out)), +...]``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan sizes must be positive")
    a = xavier_bound(fan_in, fan_out)
    return rng.uniform(-a, a, size=shape)


def init_model(config, rng, class_names=None):
    """Fresh model: Xavier ``W``, zero ``b``, unit ``gamma``; moving stats start at ``M=0, V=1``."""
    dtype = np.dtype(config.dtype)
    layers = []
    sizes = config.layer_sizes
    for l, mode in enumerate(config.norm_modes, start=1):
        fan_in, fan_out = sizes[l - 1], sizes[l]
        W = xavier_init((fan_out, fan_in), fan_in, fan_out, rng).astype(dtype)
        layer = LayerParams(W=W, b=np.zeros(fan_out, dtype=dtype))
        if mode != "none":
            layer.gamma = np.ones(fan_out, dtype=dtype)
            layer.M = np.zeros(fan_out, dtype=dtype)
            layer.V = np.ones(fan_out, dtype=dtype)
        layers.append(layer)
    return NetworkModel(config, layers, tuple(class_names) if class_names else None)


@dataclass
class AdamaxState:
    """Adamax moments per parameter tensor (defaults from Kingma & Ba)."""

    alpha: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    floor: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    u: list = field(default_factory=list)


def adamax_step(state, params, grads):
    """In-place Adamax update of ``params`` (a list of arrays).

    m <- beta1 m + (1 - beta1) g
    u <- max(beta2 u, |g|)
    theta <- theta - alpha / (1 - beta1**t) * m / (u + floor)
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.u = [np.zeros_like(p) for p in params]
    state.t += 1
    step = state.alpha / (1.0 - state.beta1 ** state.t)
    for theta, g, m, u in zip(params, grads, state.m, state.u):
        if theta.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {theta.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        theta -= step * m / (u + state.floor)
    return state
