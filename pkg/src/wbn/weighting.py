"""Per-sample loss weights for imbalanced classification.

Three schemes are supported:

* ``uniform`` -- every sample has weight 1 (the weighted loss reduces to the
  plain average loss).
* ``icf`` -- inverse class frequency, ``w = N / N_k``.  Every class ends up
  with the same effective size ``N``.
* ``cbl`` -- class-balanced loss, ``w = (1 - beta) / (1 - beta**N_k)``, which
  interpolates between ``uniform`` (``beta = 0``) and a rescaled ``icf``
  (``beta -> 1``).

The module also provides the mini-batch normalizers used by weighted batch
normalization: the weight mass ``Z_r`` and the variance normalizer ``G_r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "WeightScheme",
    "SampleWeights",
    "ClassStats",
    "class_counts",
    "uniform_weights",
    "icf_weights",
    "cbl_weights",
    "cbl_effective_closed_form",
    "compute_weights",
    "effective_sizes",
    "batch_normalizers",
    "default_cbl_beta",
]

SCHEMES = ("uniform", "icf", "cbl")


@dataclass(frozen=True)
class WeightScheme:
    """Weighting variant; ``beta`` is only meaningful for ``cbl``."""

    kind: str = "uniform"
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown weight scheme {self.kind!r}; expected one of {SCHEMES}")
        if self.kind == "cbl":
            if self.beta is None:
                raise ValueError("cbl scheme requires beta")
            _check_beta(self.beta)


@dataclass
class SampleWeights:
    w: np.ndarray
    Z: float
    scheme: WeightScheme

    def __post_init__(self):
        if np.any(self.w <= 0):
            raise ValueError("sample weights must be strictly positive")


@dataclass
class ClassStats:
    counts: np.ndarray
    effective: np.ndarray
    rho: np.ndarray


def _check_beta(beta):
    if not (0.0 <= beta < 1.0):
        raise ValueError(f"beta must lie in [0, 1), got {beta!r}")


def _require_populated(counts, labels):
    present = np.unique(labels)
    if np.any(counts[present] < 1):
        raise ValueError("every class that appears among the labels needs N_k >= 1")


def class_counts(labels, K):
    """Number of samples per class, ``counts[k] = #{mu : label_mu = k}``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return np.bincount(labels, minlength=K).astype(np.int64)


def uniform_weights(N):
    w = np.ones(N, dtype=np.float64)
    return SampleWeights(w=w, Z=float(N), scheme=WeightScheme("uniform"))


def icf_weights(counts, labels):
    """Inverse class frequency weights ``w_mu = N / N_{class(mu)}``.

    With every class populated the normalizer is ``Z = K * N``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    _require_populated(counts, labels)
    N = labels.size
    w = N / counts[labels].astype(np.float64)
    return SampleWeights(w=w, Z=float(w.sum()), scheme=WeightScheme("icf"))


def _one_minus_pow(beta, rho):
    # 1 - beta**rho without cancellation near beta -> 1; beta = 0 gives log1p(-1) = -inf -> 1.
    with np.errstate(divide="ignore"):
        log_beta = np.log1p(beta - 1.0)
    return -np.expm1(rho * log_beta)


def cbl_weights(counts, labels, beta):
    """Class-balanced weights ``(1 - beta) / (1 - beta**rho_mu)`` with ``rho_mu = N_{class(mu)}``."""
    _check_beta(beta)
    counts = np.asarray(counts, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    _require_populated(counts, labels)
    rho = counts[labels].astype(np.float64)
    if beta == 0.0:
        w = np.ones_like(rho)
    else:
        w = (1.0 - beta) / _one_minus_pow(beta, rho)
    return SampleWeights(w=w, Z=float(w.sum()), scheme=WeightScheme("cbl", float(beta)))


def cbl_effective_closed_form(counts, beta):
    """Effective class sizes ``N_k (1 - beta) / (1 - beta**N_k)`` evaluated directly."""
    _check_beta(beta)
    counts = np.asarray(counts, dtype=np.float64)
    if beta == 0.0:
        return counts.copy()
    return counts * (1.0 - beta) / _one_minus_pow(beta, counts)


def default_cbl_beta(N):
    """The fixed choice ``beta = (N - 1) / N``."""
    return (N - 1) / N


def compute_weights(scheme, labels, K):
    """Dispatch on ``scheme`` and return :class:`SampleWeights` for ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    if scheme.kind == "uniform":
        return uniform_weights(labels.size)
    counts = class_counts(labels, K)
    if scheme.kind == "icf":
        return icf_weights(counts, labels)
    return cbl_weights(counts, labels, scheme.beta)


def effective_sizes(weights, labels, K):
    """Per-class weight mass ``N_k^eff = sum_mu w_mu [label_mu = k]``."""
    labels = np.asarray(labels, dtype=np.int64)
    w = weights.w if isinstance(weights, SampleWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != labels.shape:
        raise ValueError("weights and labels must have the same length")
    counts = class_counts(labels, K)
    effective = np.bincount(labels, weights=w, minlength=K)
    return ClassStats(counts=counts, effective=effective, rho=counts[labels])


def batch_normalizers(batch_weights, legacy=False):
    """Return ``(Z_r, G_r)`` for the weights of one mini-batch.

    ``G_r = (Z_r**2 - sum w**2) / Z_r`` makes the weighted variance unbiased.
    ``legacy=True`` returns the older ``G_r = Z_r - 1`` instead; it is biased
    and only kept for comparison runs.
    """
    w = np.asarray(batch_weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("a mini-batch needs at least 2 samples")
    Z = float(w.sum())
    if legacy:
        return Z, Z - 1.0
    G = (Z * Z - float(np.dot(w, w))) / Z
    return Z, G
