"""
Choosing the penalty without cross-validation
=============================================

The threshold is the upper quantile of a statistic that does not depend on
the unknown noise level, so it can be simulated from the design alone.
"""

import numpy as np

from qutnet import QutConfig, quantile_universal_threshold
from qutnet.qut import draw_rng, sample_lambda_statistic

# a Gaussian design with 300 rows and 16 candidate features
x = np.random.default_rng(0).standard_normal((300, 16))

# the softplus shifted to pass through the origin has slope 1/2 there
slope = 0.5

est = quantile_universal_threshold(x, slope, QutConfig(alpha=0.05, mc_samples=2000, seed=1))
print("threshold:", round(est.lambda_qut, 4))
print("simulated range:", round(est.sample_min, 4), "to", round(est.sample_max, 4))

# Rescaling or shifting the response leaves each draw unchanged.
for scale, shift in [(1.0, 0.0), (10.0, 0.0), (0.1, 10.0)]:
    value = sample_lambda_statistic(x, slope, draw_rng(1, 0), scale=scale, shift=shift)
    print(f"scale={scale:5} shift={shift:5}: {value:.15f}")

# A smaller alpha asks for stronger evidence before a feature enters.
for alpha in (0.01, 0.05, 0.2):
    lam = quantile_universal_threshold(x, slope, QutConfig(alpha, 2000, 1)).lambda_qut
    print(f"alpha={alpha}: {lam:.4f}")
