"""Analytic gradients of the mini-batch cross-entropy loss.

The batch loss is ``E_r = (1/|B_r|) sum_mu f_mu`` (plain) or
``E_r = (1/Z_r) sum_mu w_mu f_mu`` (weighted), with ``f_mu = -sum_k t ln p``.
Back-propagating signals ``delta = dE_r/du`` are pushed down layer by layer.
For a normalized layer the signal reaching the affine input ``lam`` is

    g_{j,mu} = D_{j,mu} - c_mu sum_alpha D_{j,alpha} (1 + kappa y_{j,alpha} y_{j,mu}),
    D = gamma / sqrt(v + eps) * delta,

with ``c_mu = 1/|B_r|, kappa = |B_r|/(|B_r|-1)`` for batch norm and
``c_mu = w_mu/Z_r, kappa = Z_r/G_r`` for weighted batch norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import activation_derivative, forward_full

__all__ = [
    "CE_CLAMP",
    "LayerGrads",
    "GradientSet",
    "batch_loss",
    "output_delta",
    "lambda_signal",
    "backward_plain",
    "backward_bn",
    "backward_wbn",
    "backward",
    "param_grads",
    "loss_and_grads",
    "finite_diff_check",
    "numerical_gradients",
    "relative_error",
    "GradCheckReport",
]

CE_CLAMP = 1e-30


@dataclass
class LayerGrads:
    dW: np.ndarray
    db: np.ndarray
    dgamma: np.ndarray | None = None


@dataclass
class GradientSet:
    layers: list

    def tensors(self):
        """Gradients in the order of :meth:`NetworkModel.parameters`."""
        out = []
        for g in self.layers:
            out += [g.dW, g.db]
            if g.dgamma is not None:
                out.append(g.dgamma)
        return out


def _loss_scale(weights, B, weighted):
    if weighted:
        w = np.asarray(weights, dtype=np.float64)
        return w / w.sum()
    return np.full(B, 1.0 / B)


def batch_loss(p, targets, weights=None, weighted=False):
    """Normalized cross-entropy over one batch; ``targets`` is one-hot ``K x B``."""
    per_sample = -(targets * np.log(np.maximum(p, CE_CLAMP))).sum(axis=0)
    return float(per_sample @ _loss_scale(weights, p.shape[1], weighted))


def output_delta(p, targets, weights=None, weighted=False):
    """``dE_r/dz^(L) = c_mu (p - t)`` with ``c_mu = 1/|B_r|`` or ``w_mu/Z_r``."""
    c = _loss_scale(weights, p.shape[1], weighted).astype(p.dtype)
    return (p - targets) * c


def lambda_signal(delta, lc, gamma, eps, weights=None, Z_r=None, G_r=None):
    """``dE_r/dlam`` for one layer given its ``delta = dE_r/du`` and forward cache ``lc``."""
    if lc.mode == "none":
        return delta
    B = delta.shape[1]
    D = (gamma / np.sqrt(lc.v + eps))[:, None] * delta
    y = lc.y
    if lc.mode == "bn":
        c = np.full(B, 1.0 / B, dtype=delta.dtype)
        kappa = B / (B - 1)
    elif lc.mode == "wbn":
        c = (np.asarray(weights) / Z_r).astype(delta.dtype)
        kappa = Z_r / G_r
    else:
        raise ValueError(f"unknown norm mode {lc.mode!r}")
    # sum_alpha D_a (1 + kappa y_a y_mu) = sum(D) + kappa * sum(D y) * y_mu
    sum_D = D.sum(axis=1, keepdims=True)
    sum_Dy = (D * y).sum(axis=1, keepdims=True)
    return D - c[None, :] * (sum_D + kappa * sum_Dy * y)


def _backward_through(lc_lower, kind_lower, g_upper, W_upper):
    if W_upper.shape[0] != g_upper.shape[0]:
        raise ValueError("W_upper does not match the upper layer signal")
    return activation_derivative(lc_lower.pre, kind_lower, lc_lower.z) * (W_upper.T @ g_upper)


def backward_plain(lc_lower, kind_lower, delta_upper, W_upper):
    """``delta_j = a'(pre_j) sum_k W_kj delta_k`` for an unnormalized upper layer."""
    return _backward_through(lc_lower, kind_lower, delta_upper, W_upper)


def backward_bn(lc_lower, kind_lower, lc_upper, delta_upper, W_upper, gamma_upper, eps):
    if lc_upper.mode != "bn":
        raise ValueError("upper layer is not batch-normalized")
    g = lambda_signal(delta_upper, lc_upper, gamma_upper, eps)
    return _backward_through(lc_lower, kind_lower, g, W_upper)


def backward_wbn(lc_lower, kind_lower, lc_upper, delta_upper, W_upper, gamma_upper, eps,
                 weights, Z_r, G_r):
    if lc_upper.mode != "wbn":
        raise ValueError("upper layer is not weight-batch-normalized")
    g = lambda_signal(delta_upper, lc_upper, gamma_upper, eps, weights, Z_r, G_r)
    return _backward_through(lc_lower, kind_lower, g, W_upper)


def backward(model, cache, p, targets, weighted=False):
    """Return the per-layer ``delta`` signals (bottom to top) for one batch."""
    cfg = model.config
    L = cfg.n_layers
    top = cache.layers[-1]
    dz = output_delta(p, targets, cache.weights, weighted)
    deltas = [None] * L
    deltas[-1] = activation_derivative(top.pre, cfg.activations[-1], top.z) * dz
    for i in range(L - 2, -1, -1):
        upper, lower = cache.layers[i + 1], cache.layers[i]
        params = model.layers[i + 1]
        if upper.mode == "none":
            deltas[i] = backward_plain(lower, cfg.activations[i], deltas[i + 1], params.W)
        elif upper.mode == "bn":
            deltas[i] = backward_bn(
                lower, cfg.activations[i], upper, deltas[i + 1], params.W, params.gamma, cfg.eps
            )
        else:
            deltas[i] = backward_wbn(
                lower, cfg.activations[i], upper, deltas[i + 1], params.W, params.gamma, cfg.eps,
                cache.weights, cache.Z_r, cache.G_r,
            )
    return deltas


def param_grads(model, cache, deltas):
    """Gradients of ``E_r`` w.r.t. every ``W``, ``b`` and ``gamma``."""
    eps = model.config.eps
    grads = []
    for params, lc, delta in zip(model.layers, cache.layers, deltas):
        if (lc.mode != "none") != params.normalized:
            raise ValueError("cache and model disagree on normalization")
        g = lambda_signal(delta, lc, params.gamma, eps, cache.weights, cache.Z_r, cache.G_r)
        grads.append(LayerGrads(
            dW=g @ lc.z_in.T,
            db=delta.sum(axis=1),
            dgamma=(delta * lc.y).sum(axis=1) if params.normalized else None,
        ))
    return GradientSet(grads)


def loss_and_grads(model, inputs, targets, weights=None, weighted=False):
    """One forward/backward pass on a batch; returns ``(E_r, GradientSet, cache)``."""
    p, cache = forward_full(model, inputs, weights, regime="train")
    E = batch_loss(p, targets, weights, weighted)
    deltas = backward(model, cache, p, targets, weighted)
    return E, param_grads(model, cache, deltas), cache


@dataclass
class GradCheckReport:
    """Per-tensor relative errors between analytic and finite-difference gradients.

    ``errors`` uses tensor norms, ``|a - n| / max(|a|, |n|, 1e-12)``;
    ``elementwise`` is the largest entrywise ratio and is only informative
    for entries well above the finite-difference noise floor.
    """

    names: list
    errors: list
    elementwise: list

    @property
    def max_error(self):
        return max(self.errors)

    def passed(self, tol):
        return self.max_error <= tol

    def to_csv(self):
        lines = ["tensor,rel_error,max_entry_rel_error"]
        lines += [f"{n},{e:.3e},{x:.3e}" for n, e, x in zip(self.names, self.errors, self.elementwise)]
        return "\n".join(lines) + "\n"


def relative_error(a, n):
    """Relative error of two tensors (norm based) with a ``1e-12`` floor."""
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def entrywise_relative_error(a, n):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)


def numerical_gradients(model, inputs, targets, weights=None, weighted=False, h=1e-5):
    """Central differences of the batch loss for every parameter tensor."""
    if h <= 0:
        raise ValueError("step h must be positive")

    def loss():
        p, _ = forward_full(model, inputs, weights, regime="train")
        E = batch_loss(p, targets, weights, weighted)
        if not np.isfinite(E):
            raise FloatingPointError("non-finite loss during gradient check")
        return E

    out = []
    for theta in model.parameters():
        numeric = np.empty(theta.shape)
        flat = theta.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + h
            plus = loss()
            flat[idx] = saved - h
            minus = loss()
            flat[idx] = saved
            num_flat[idx] = (plus - minus) / (2 * h)
        out.append(numeric)
    return out


def finite_diff_check(model, inputs, targets, weights=None, weighted=False, h=1e-5,
                      analytic=None):
    """Compare analytic gradients with central differences ``(E(t+h) - E(t-h)) / 2h``.

    ``analytic`` may be supplied (same order as ``model.parameters()``) to
    check an externally produced gradient.
    """
    if analytic is None:
        _, grads, _ = loss_and_grads(model, inputs, targets, weights, weighted)
        analytic = grads.tensors()
    numeric = numerical_gradients(model, inputs, targets, weights, weighted, h)
    errors = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    elementwise = [float(entrywise_relative_error(a, n).max()) for a, n in zip(analytic, numeric)]
    return GradCheckReport(model.parameter_names(), errors, elementwise)
