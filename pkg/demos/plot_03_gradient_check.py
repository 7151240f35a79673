"""
Checking back-propagation against finite differences
====================================================

A small three-layer network with a batch-normalized, a weight-batch-normalized
and a plain layer, trained on a weighted loss.
"""

from wbn.backprop import finite_diff_check
from wbn.verify import gradcheck_problem

model, x, t, w = gradcheck_problem(seed=0, norm_modes=("bn", "wbn", "none"))
report = finite_diff_check(model, x, t, w, weighted=True, h=1e-5)
print(report.to_csv())

###############################################################################
# The per-tensor error sits many orders below the 1e-6 threshold.  The
# entrywise column can be larger: tiny gradient entries are dominated by
# finite-difference noise.

print("max per-tensor relative error: %.2e" % report.max_error)
