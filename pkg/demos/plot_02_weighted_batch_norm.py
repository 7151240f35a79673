"""
Batch statistics that respect sample weights
============================================

A mini-batch with one heavily weighted sample.  Plain batch normalization
ignores the weights; the weighted version standardizes the weighted
distribution instead.
"""

import numpy as np

from wbn.netcore import normalize_forward_train

rng = np.random.default_rng(0)
lam = rng.normal(2.0, 3.0, size=(1, 8))
w = np.array([1, 1, 1, 1, 1, 1, 1, 50.0])

_, y_bn, m_bn, v_bn = normalize_forward_train(lam, np.ones(1), 1e-12, mode="bn")
_, y_w, m_w, v_w = normalize_forward_train(lam, np.ones(1), 1e-12, weights=w, mode="wbn")

print("batch norm       m=%.3f v=%.3f" % (m_bn[0], v_bn[0]))
print("weighted norm    m=%.3f v=%.3f" % (m_w[0], v_w[0]))

###############################################################################
# Under the weights only the weighted version is centred and scaled.

Z = w.sum()
G = (Z * Z - w @ w) / Z
for name, y in [("batch norm", y_bn), ("weighted norm", y_w)]:
    print(f"{name:15s} weighted mean {y[0] @ w / Z:+.2e}  weighted 2nd moment {(y[0] ** 2) @ w / G:.6f}")

###############################################################################
# Constant weights make both versions identical.

_, y_c, _, _ = normalize_forward_train(lam, np.ones(1), 1e-12, weights=np.full(8, 3.0), mode="wbn")
print("max |difference| with constant weights:", np.abs(y_c - y_bn).max())
