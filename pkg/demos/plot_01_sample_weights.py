"""
Sample weights for an imbalanced training set
=============================================

Three minority digits with 5 samples each and one majority digit with 5000.
We compare the effective class sizes produced by the plain loss, inverse
class frequency (ICF) and the class-balanced loss (CBL).
"""

import numpy as np

from wbn.weighting import WeightScheme, compute_weights, default_cbl_beta, effective_sizes

counts = np.array([5, 5, 5, 5000])
labels = np.repeat(np.arange(4), counts)
N = labels.size

###############################################################################
# ICF gives every class the same weight mass N, so Z = K N = 20060.

for kind, beta in [("uniform", None), ("icf", None), ("cbl", default_cbl_beta(N))]:
    sw = compute_weights(WeightScheme(kind, beta), labels, 4)
    stats = effective_sizes(sw, labels, 4)
    print(f"{kind:8s} Z={sw.Z:10.2f}  N_eff={np.array2string(stats.effective, precision=2)}")

###############################################################################
# CBL moves from the plain loss (beta = 0) towards ICF as beta approaches 1.

for beta in [0.0, 0.9, 0.999, 1 - 1e-6]:
    eff = effective_sizes(compute_weights(WeightScheme("cbl", beta), labels, 4), labels, 4).effective
    print(f"beta={beta:<10.6g} minority/majority mass ratio {eff[0] / eff[3]:.4f}")
