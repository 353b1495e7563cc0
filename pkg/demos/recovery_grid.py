"""
A small recovery experiment
===========================

Each cell repeats: draw data from the teacher, compute the threshold, fit,
and check whether the estimated first-layer pattern matches the teacher's.
Here the grid is tiny so it runs in a few seconds.
"""

from qutnet import FitConfig, recovery_experiment

grid = {"h": (1,), "p1": (8, 16), "p2": (4,)}
cfg = FitConfig(smooth_iters=2000, prox_iters=2000)

result = recovery_experiment(grid, M=5, strategy="oracle", mc_samples=1000, fit_config=cfg,
                             n_test=5000, base_seed=0)
print(result.to_csv())

# a quarter of the threshold lets noise features in
loose = recovery_experiment(grid, M=5, strategy="oracle", mc_samples=1000, fit_config=cfg,
                            n_test=5000, base_seed=0, lambda_multiplier=0.25)
print(loose.to_csv())
