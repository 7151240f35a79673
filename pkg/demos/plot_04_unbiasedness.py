"""
Weighted variance: the right normalizer
=======================================

Monte-Carlo estimate of E[m] and E[v] for normal(3, 4) samples with weights
[1, 2, 3, 4], using G = (Z^2 - sum w^2) / Z and the older Z - 1.
"""

import numpy as np

from wbn.verify import legacy_bias_factor, unbiasedness_mc

w = [1.0, 2.0, 3.0, 4.0]
for legacy in (False, True):
    report = unbiasedness_mc(3.0, 4.0, w, trials=1_000_000, rng=np.random.default_rng(1), legacy=legacy)
    print(report.to_csv())

###############################################################################
# With Z - 1 the expectation shrinks by G / (Z - 1) = 7/9.

print("analytic legacy expectation:", 4.0 * legacy_bias_factor(w))
