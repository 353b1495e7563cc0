"""Monte Carlo quantile universal threshold.

Under the constant-function null the first-layer gradient statistic is
pivotal for the square-root loss, so responses are simulated as standard
normal vectors and no noise level is ever estimated.

Random streams
--------------
Draw ``i`` of a run seeded with ``seed`` uses its own generator::

    np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))

which is the ``i``-th child of ``SeedSequence(seed).spawn(...)``. Results
therefore do not depend on how draws are scheduled across workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .loss_grad import ConstantResponse, null_gradient_sup_batch, null_statistic

__all__ = [
    "QutConfig",
    "QutEstimate",
    "draw_rng",
    "sample_lambda_statistic",
    "sample_lambda_statistics",
    "empirical_quantile",
    "quantile_universal_threshold",
]


@dataclass(frozen=True)
class QutConfig:
    alpha: float = 0.05
    mc_samples: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mc_samples < 100:
            raise ValueError(f"mc_samples must be >= 100, got {self.mc_samples}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class QutEstimate:
    lambda_qut: float
    config: QutConfig
    sample_min: float
    sample_median: float
    sample_max: float
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "lambda_qut": self.lambda_qut,
            "alpha": self.config.alpha,
            "mc_samples": self.config.mc_samples,
            "seed": int(self.config.seed),
            "sample_min": self.sample_min,
            "sample_median": self.sample_median,
            "sample_max": self.sample_max,
        }


def draw_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for Monte Carlo draw ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_lambda_statistic(x, deriv_at_zero: float, rng: np.random.Generator,
                            scale: float = 1.0, shift: float = 0.0) -> float:
    """One draw of the null statistic.

    ``y = shift + scale * z`` with ``z`` standard normal; the statistic does
    not depend on ``scale > 0`` or ``shift``, which is why the defaults are
    enough for calibration. A constant draw is retried once.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    for attempt in range(2):
        y = shift + scale * rng.standard_normal(n)
        try:
            return null_statistic(y, x, deriv_at_zero)
        except ConstantResponse:
            if attempt:
                raise
    raise AssertionError("unreachable")


def _draw_block(x, deriv_at_zero, seed, start, stop, scale, shift):
    n = x.shape[0]
    ys = np.empty((stop - start, n))
    for r, i in enumerate(range(start, stop)):
        ys[r] = draw_rng(seed, i).standard_normal(n)
    ys = shift + scale * ys
    try:
        return null_gradient_sup_batch(ys, x, deriv_at_zero)
    except ConstantResponse:
        return np.array([
            sample_lambda_statistic(x, deriv_at_zero, draw_rng(seed, i), scale, shift)
            for i in range(start, stop)
        ])


def sample_lambda_statistics(x, deriv_at_zero: float, n_draws: int, seed: int,
                             scale: float = 1.0, shift: float = 0.0,
                             n_jobs: int | None = None, block: int = 1000) -> np.ndarray:
    """Draws ``0 .. n_draws-1`` of the null statistic, ordered by draw index.

    Each draw matches ``sample_lambda_statistic(x, d, draw_rng(seed, i))``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 2:
        raise ValueError("need at least 2 observations")
    bounds = [(s, min(s + block, n_draws)) for s in range(0, n_draws, block)]
    n_jobs = n_jobs or int(os.environ.get("QUTNET_NUM_WORKERS", "1"))
    args = (x, deriv_at_zero, seed)
    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(lambda b: _draw_block(*args, b[0], b[1], scale, shift), bounds))
    else:
        parts = [_draw_block(*args, a, b, scale, shift) for a, b in bounds]
    return np.concatenate(parts) if parts else np.empty(0)


def empirical_quantile(samples, q: float) -> float:
    """Upper order statistic: the ``ceil(q * m)``-th smallest of ``m`` samples."""
    s = np.sort(np.ravel(np.asarray(samples, dtype=float)))
    if s.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    # guard q*m landing a hair above an integer through rounding
    k = math.ceil(round(q * s.size, 9))
    return float(s[max(k, 1) - 1])


def quantile_universal_threshold(x, deriv_at_zero: float, config: QutConfig = QutConfig(),
                                 n_jobs: int | None = None) -> QutEstimate:
    """Estimate ``lambda_QUT``, the ``1 - alpha`` quantile of the null statistic.

    The statistic is the two-layer closed form whatever depth is later fitted.
    """
    draws = sample_lambda_statistics(x, deriv_at_zero, config.mc_samples, config.seed,
                                     n_jobs=n_jobs)
    draws.flags.writeable = False
    return QutEstimate(
        lambda_qut=empirical_quantile(draws, 1.0 - config.alpha),
        config=config,
        sample_min=float(draws.min()),
        sample_median=float(np.median(draws)),
        sample_max=float(draws.max()),
        samples=draws,
    )
