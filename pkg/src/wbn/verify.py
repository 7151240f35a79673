"""Monte-Carlo checks that the weighted batch mean and variance are unbiased.

For i.i.d. samples ``lam_mu`` with mean ``mu`` and variance ``sigma2``,

    E[sum(w lam) / Z]                = mu
    E[sum(w (lam - m)**2) / G]       = sigma2,    G = (Z**2 - sum w**2) / Z

whereas the older normalizer ``Z - 1`` gives ``E = sigma2 * G / (Z - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import LayerParams, NetworkConfig, NetworkModel, batch_stats

__all__ = [
    "BiasReport",
    "weighted_estimators",
    "legacy_variance",
    "legacy_bias_factor",
    "unbiasedness_mc",
    "BAND",
    "gradcheck_problem",
]

BAND = 4.0
CHUNK = 200_000


@dataclass
class BiasReport:
    estimator: str
    mu_true: float
    var_true: float
    mean_m: float
    mean_v: float
    se_m: float
    se_v: float
    trials: int
    expected_v: float

    @property
    def z_m(self):
        return abs(self.mean_m - self.mu_true) / self.se_m

    @property
    def z_v(self):
        return abs(self.mean_v - self.var_true) / self.se_v

    @property
    def passed(self):
        return self.z_m <= BAND and self.z_v <= BAND

    def to_csv(self):
        head = "estimator,mu_true,var_true,mean_m,se_m,mean_v,se_v,expected_v,trials,z_m,z_v,result"
        row = (
            f"{self.estimator},{self.mu_true:.6g},{self.var_true:.6g},{self.mean_m:.8f},"
            f"{self.se_m:.3e},{self.mean_v:.8f},{self.se_v:.3e},{self.expected_v:.8f},"
            f"{self.trials},{self.z_m:.2f},{self.z_v:.2f},{'PASS' if self.passed else 'FAIL'}"
        )
        return head + "\n" + row + "\n"


def weighted_estimators(lam, w):
    """Weighted mean and unbiased weighted variance of the last axis of ``lam``."""
    lam = np.asarray(lam, dtype=np.float64)
    m, v = batch_stats(np.atleast_2d(lam), w, mode="wbn")
    if lam.ndim == 1:
        return float(m[0]), float(v[0])
    return m, v


def legacy_variance(lam, w):
    """Weighted variance normalized by ``Z - 1`` (biased unless all weights are 1)."""
    w = np.asarray(w, dtype=np.float64)
    if w.sum() <= 1:
        raise ValueError("legacy normalizer needs Z_r > 1")
    lam = np.asarray(lam, dtype=np.float64)
    m, v = batch_stats(np.atleast_2d(lam), w, mode="wbn", legacy=True)
    if lam.ndim == 1:
        return float(v[0])
    return v


def legacy_bias_factor(w):
    """``E[v_legacy] / sigma2 = G / (Z - 1)``."""
    w = np.asarray(w, dtype=np.float64)
    Z = w.sum()
    G = (Z * Z - w @ w) / Z
    return G / (Z - 1.0)


def unbiasedness_mc(mu, var, w, trials=1_000_000, rng=None, legacy=False):
    """Sample ``trials`` batches from ``Normal(mu, var)`` and average the estimators.

    The sampler is ``numpy.random.Generator.normal`` on a PCG64 stream; pass a
    seeded ``rng`` for reproducible reports.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.count_nonzero(w > 0) < 2:
        raise ValueError("need at least 2 positive weights")
    if trials < 2:
        raise ValueError("need at least 2 trials")
    rng = np.random.default_rng() if rng is None else rng
    sd = np.sqrt(var)
    sums = np.zeros(4)  # sum m, sum m^2, sum v, sum v^2
    done = 0
    while done < trials:
        k = min(CHUNK, trials - done)
        lam = rng.normal(mu, sd, size=(k, w.size))
        if legacy:
            m, _ = weighted_estimators(lam, w)
            v = legacy_variance(lam, w)
        else:
            m, v = weighted_estimators(lam, w)
        # accumulate centred on the true values to keep the sums well conditioned
        dm, dv = m - mu, v - var
        sums += (dm.sum(), dm @ dm, dv.sum(), dv @ dv)
        done += k
    mean_dm, mean_dv = sums[0] / trials, sums[2] / trials
    var_m = (sums[1] - trials * mean_dm ** 2) / (trials - 1)
    var_v = (sums[3] - trials * mean_dv ** 2) / (trials - 1)
    expected = var * legacy_bias_factor(w) if legacy else var
    return BiasReport(
        estimator="legacy" if legacy else "weighted",
        mu_true=mu,
        var_true=var,
        mean_m=mu + mean_dm,
        mean_v=var + mean_dv,
        se_m=float(np.sqrt(var_m / trials)),
        se_v=float(np.sqrt(var_v / trials)),
        trials=trials,
        expected_v=expected,
    )


def gradcheck_problem(seed, norm_modes=("bn", "wbn", "none"), n=5, hidden=(8, 7), K=3, B=6,
                      activations=None, dtype="float64", eps=1e-8):
    """Random small network and batch for finite-difference checks.

    Parameters and inputs are standard normal, sample weights log-uniform on
    ``[0.1, 10]``.  Returns ``(model, inputs, targets, weights)``.
    """
    rng = np.random.default_rng(seed)
    sizes = (n, *hidden, K)
    L = len(sizes) - 1
    if activations is None:
        activations = ("tanh",) * (L - 1) + ("identity",)
    cfg = NetworkConfig(sizes, activations, tuple(norm_modes), eps=eps, dtype=dtype)
    layers = []
    for l, mode in enumerate(cfg.norm_modes, start=1):
        layer = LayerParams(
            W=rng.standard_normal((sizes[l], sizes[l - 1])),
            b=rng.standard_normal(sizes[l]),
        )
        if mode != "none":
            layer.gamma = rng.standard_normal(sizes[l])
            layer.M = np.zeros(sizes[l])
            layer.V = np.ones(sizes[l])
        for name in ("W", "b", "gamma", "M", "V"):
            value = getattr(layer, name)
            if value is not None:
                setattr(layer, name, value.astype(dtype))
        layers.append(layer)
    model = NetworkModel(cfg, layers)
    inputs = rng.standard_normal((n, B)).astype(dtype)
    labels = rng.integers(0, K, size=B)
    targets = np.zeros((K, B), dtype=dtype)
    targets[labels, np.arange(B)] = 1.0
    weights = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=B))
    return model, inputs, targets, weights
