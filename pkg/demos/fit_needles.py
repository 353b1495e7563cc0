"""
Finding two needles in a small haystack
=======================================

A one-neuron teacher uses features 0 and 1 out of 16. Starting at the
teacher, the penalized fit keeps those two and, usually, nothing else.
"""

import numpy as np

from qutnet import (FitConfig, OracleInit, QutConfig, fit, generate_dataset, generate_teacher,
                    quantile_universal_threshold)
from qutnet.simulation import TeacherSpec

spec = TeacherSpec(h=1, p1=16, p2=16)
teacher = generate_teacher(spec)
data = generate_dataset(teacher, spec, seed=3)
print("teacher uses features", np.flatnonzero(teacher.w1.any(axis=0)).tolist())

lam = quantile_universal_threshold(data.x, 0.5, QutConfig(mc_samples=2000, seed=3)).lambda_qut
print("threshold:", round(lam, 3))

result = fit(data, spec.arch, lam, FitConfig(init=OracleInit(teacher)))
print("selected features:", sorted(result.support.selected_features))
print("active neurons:", sorted(result.support.active_neurons))

# The surviving weights are shrunk towards zero, a known price of the l1 penalty.
row = sorted(result.support.active_neurons)[0]
print("fitted row:", np.round(result.params.w1[row, :2], 3))

# Without a penalty the live neuron picks up every feature. Neurons that start
# with a zero row and a zero output weight get no gradient and stay dead.
dense = fit(data, spec.arch, 0.0, FitConfig(init=OracleInit(teacher), smooth_iters=500,
                                             prox_iters=500))
print("nonzero entries at lambda=0:", np.count_nonzero(dense.params.w1))
