"""
When does the constant fit stay put?
====================================

At the constant fit every first-layer gradient entry is bounded by a closed
form. Above that bound the proximal step cannot leave zero; below it some
entry switches on immediately.
"""

import numpy as np

from qutnet import (Architecture, Dataset, FitConfig, OracleInit, fit, gradient,
                    null_gradient_sup, null_params)

rng = np.random.default_rng(7)
data = Dataset(rng.standard_normal((50, 8)), rng.standard_normal(50))
arch = Architecture((8, 4))
bound = null_gradient_sup(data, 0.5)
print("closed-form bound:", round(bound, 6))

# the bound is attained when the output row points at a single neuron
e = np.eye(4)[0]
print("attained:", round(np.abs(gradient(null_params(arch, data, w_out=e), arch, data).w1).max(), 6))

start = OracleInit(null_params(arch, data, seed=1, w_out=e))
for factor in (1.01, 0.5):
    counts = []
    fit(data, arch, factor * bound, FitConfig(smooth_iters=0, prox_iters=200, init=start),
        callback=lambda phase, it, p: counts.append(np.count_nonzero(p.w1)))
    print(f"lambda = {factor} x bound: nonzero after step 1 = {counts[0]}, at the end = {counts[-1]}")
