"""Needle-in-a-haystack simulations with a sparse two-layer teacher.

The teacher uses ``h`` active neurons; neuron ``i`` reads
``x[2i+1] - x[2i]`` (zero-based) and the output averages them with weight
``1/sqrt(h)`` on top of an offset ``b2``.

Random streams: replicate ``r`` of cell ``(h, p1, p2)`` under ``base_seed``
uses ``SeedSequence(base_seed, spawn_key=(h, p1, p2, r))``, whose four
spawned children seed the data, the threshold, the random init and the
test locations. Results
depend on the cell values, not on grid order or worker count.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .network import Architecture, Dataset, NetworkParams, forward
from .optimizer import (FitConfig, OracleInit, RandomInit, SupportMask, fit, multi_start_fit,
                        random_params)
from .qut import QutConfig, quantile_universal_threshold

__all__ = [
    "TeacherSpec",
    "CellResult",
    "RecoveryGrid",
    "generate_teacher",
    "generate_dataset",
    "exact_support_recovery",
    "generalization_rmse",
    "replicate_seeds",
    "run_replicate",
    "recovery_experiment",
    "DESK_GRID",
    "FULL_GRID",
]

logger = logging.getLogger(__name__)

DESK_GRID = {"h": (1, 2), "p1": (16, 32, 64), "p2": (16, 32)}
FULL_GRID = {
    "h": (1, 2, 4),
    "p1": tuple(2**k for k in range(4, 10)),
    "p2": tuple(2**k for k in range(4, 10)),
}


@dataclass(frozen=True)
class TeacherSpec:
    h: int
    p1: int
    p2: int
    b2: float = 10.0
    xi: float = 0.1
    n: int = 300

    def __post_init__(self):
        if self.h < 1 or 2 * self.h > self.p1 or self.h > self.p2:
            raise ValueError(f"need 1 <= h, 2h <= p1 and h <= p2; got {self}")
        if self.xi < 0 or self.n < 2:
            raise ValueError("xi must be >= 0 and n >= 2")

    @property
    def arch(self) -> Architecture:
        return Architecture((self.p1, self.p2))


def generate_teacher(spec: TeacherSpec) -> NetworkParams:
    """Sparse teacher with a ``(-1, +1)`` pair per active neuron."""
    w1 = np.zeros((spec.p2, spec.p1))
    for i in range(spec.h):
        w1[i, 2 * i] = -1.0
        w1[i, 2 * i + 1] = 1.0
    w2 = np.zeros((1, spec.p2))
    w2[0, : spec.h] = 1.0
    return NetworkParams((w1, w2), (np.zeros(spec.p2), np.array(spec.b2)))


def generate_dataset(teacher: NetworkParams, spec: TeacherSpec, seed) -> Dataset:
    """Gaussian design and noisy teacher responses; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((spec.n, spec.p1))
    noise = rng.standard_normal(spec.n)
    y = forward(teacher, spec.arch, x)
    if spec.xi > 0:
        y = y + spec.xi * noise
    return Dataset(x, y)


def _canonical_rows(mask: np.ndarray) -> list:
    return sorted(tuple(bool(v) for v in row) for row in mask)


def exact_support_recovery(estimated, teacher: NetworkParams) -> bool:
    """Nonzero pattern of ``W1`` equals the teacher's, up to a relabeling of hidden neurons."""
    est = estimated.mask if isinstance(estimated, SupportMask) else np.abs(np.asarray(estimated)) > 0
    true = np.abs(teacher.w1) > 0
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {true.shape}")
    return _canonical_rows(est) == _canonical_rows(true)


def generalization_rmse(fitted: NetworkParams, teacher: NetworkParams, n_test: int = 30000,
                        seed=0, arch: Architecture | None = None,
                        teacher_arch: Architecture | None = None) -> float:
    """Root mean squared gap to the noiseless teacher at fresh Gaussian inputs."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    teacher_arch = teacher_arch or Architecture(tuple(teacher.w1.shape[::-1]))
    arch = arch or Architecture(
        (fitted.w1.shape[1],) + tuple(w.shape[0] for w in fitted.weights[:-1])
    )
    x = np.random.default_rng(seed).standard_normal((n_test, teacher_arch.n_features))
    diff = forward(fitted, arch, x) - forward(teacher, teacher_arch, x)
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class CellResult:
    h: int
    p1: int
    p2: int
    recovery_probability: float
    mean_rmse: float
    replicates: int
    failures: int
    recovered: tuple = field(default=(), repr=False)
    rmses: tuple = field(default=(), repr=False)


CSV_COLUMNS = ("h", "p1", "p2", "recovery_probability", "mean_rmse", "replicates", "failures")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class RecoveryGrid:
    axes: dict
    cells: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.cells:
            w.writerow([_fmt(getattr(c, k)) for k in CSV_COLUMNS])
        return buf.getvalue()

    def cell(self, h, p1, p2) -> CellResult:
        for c in self.cells:
            if (c.h, c.p1, c.p2) == (h, p1, p2):
                return c
        raise KeyError((h, p1, p2))


def replicate_seeds(base_seed: int, h: int, p1: int, p2: int, rep: int):
    """``(data_seed, qut_seed, init_seed, test_seed)`` for one replicate."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(h, p1, p2, rep))
    data, qut, init, test = ss.spawn(4)
    return (data, int(qut.generate_state(1, np.uint64)[0]),
            int(init.generate_state(1, np.uint64)[0]) % 2**63, test)


@dataclass(frozen=True)
class _Job:
    spec: TeacherSpec
    rep: int
    base_seed: int
    strategy: str
    restarts: int
    lambda_multiplier: float
    alpha: float
    mc_samples: int
    fit_config: FitConfig
    n_test: int
    fixed_lambda: float | None


def run_replicate(job: _Job):
    """Simulate, threshold, fit and score one replicate; returns ``(recovered, rmse)``."""
    spec = job.spec
    data_seed, qut_seed, init_seed, test_seed = replicate_seeds(job.base_seed, spec.h, spec.p1, spec.p2, job.rep)
    teacher = generate_teacher(spec)
    ds = generate_dataset(teacher, spec, data_seed)
    arch = spec.arch
    if job.fixed_lambda is None:
        est = quantile_universal_threshold(
            ds.x, arch.activation.deriv_at_zero,
            QutConfig(job.alpha, job.mc_samples, qut_seed), n_jobs=1)
        lam = job.lambda_multiplier * est.lambda_qut
    else:
        lam = job.fixed_lambda
    if job.strategy == "oracle":
        cfg = replace(job.fit_config, init=OracleInit(teacher))
        res = fit(ds, arch, lam, cfg)
    elif job.strategy == "oracle_w1":
        start = random_params(arch, ds, init_seed, w1=teacher.w1)
        res = fit(ds, arch, lam, replace(job.fit_config, init=OracleInit(start)))
    elif job.strategy == "nonoracle":
        cfg = replace(job.fit_config, init=RandomInit(init_seed))
        res = multi_start_fit(ds, arch, lam, cfg, restarts=job.restarts, n_jobs=1)
    else:
        raise ValueError(f"unknown strategy {job.strategy!r}")
    recovered = exact_support_recovery(res.support, teacher)
    rmse = generalization_rmse(res.params, teacher, job.n_test, seed=test_seed,
                               arch=arch, teacher_arch=arch)
    return recovered, rmse


def _safe_run(job):
    try:
        return run_replicate(job)
    except Exception as exc:  # recorded per replicate, never fatal
        logger.warning("replicate %s of %s failed: %s", job.rep, job.spec, exc)
        return None


def recovery_experiment(grid: dict | None = None, M: int = 20, strategy: str = "oracle",
                        restarts: int = 1, base_seed: int = 0, lambda_multiplier: float = 1.0,
                        alpha: float = 0.05, mc_samples: int = 10000, n: int = 300,
                        xi: float = 0.1, b2: float = 10.0, fit_config: FitConfig | None = None,
                        n_test: int | None = None, fixed_lambda: float | None = None,
                        n_jobs: int | None = None) -> RecoveryGrid:
    """Estimate support recovery probability and generalization RMSE per ``(h, p1, p2)`` cell.

    ``strategy`` is ``"oracle"`` (start at the teacher), ``"oracle_w1"`` (teacher
    ``W1``, everything else drawn as in a random start) or ``"nonoracle"``
    (best of ``restarts`` random starts).

    ``fixed_lambda`` replaces the per-replicate threshold (e.g. ``0.0`` for no
    penalty). Cells violating ``2h <= p1`` or ``h <= p2`` are skipped.
    """
    grid = dict(DESK_GRID if grid is None else grid)
    if M < 1:
        raise ValueError("M must be >= 1")
    if not all(grid.get(k) for k in ("h", "p1", "p2")):
        raise ValueError("grid needs nonempty 'h', 'p1' and 'p2' axes")
    fit_config = fit_config or FitConfig()
    n_test = 100 * n if n_test is None else n_test
    specs = []
    for h, p1, p2 in itertools.product(grid["h"], grid["p1"], grid["p2"]):
        if 2 * h <= p1 and h <= p2:
            specs.append(TeacherSpec(h, p1, p2, b2=b2, xi=xi, n=n))
        else:
            logger.warning("skipping infeasible cell h=%s p1=%s p2=%s", h, p1, p2)
    jobs = [
        _Job(s, r, base_seed, strategy, restarts, lambda_multiplier, alpha, mc_samples,
             fit_config, n_test, fixed_lambda)
        for s in specs for r in range(M)
    ]
    n_jobs = n_jobs or int(os.environ.get("QUTNET_NUM_WORKERS", "1"))
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            outcomes = list(pool.map(_safe_run, jobs))
    else:
        outcomes = [_safe_run(j) for j in jobs]

    cells = []
    for i, s in enumerate(specs):
        block = outcomes[i * M : (i + 1) * M]
        ok = [o for o in block if o is not None]
        recovered = tuple(bool(o[0]) for o in ok)
        rmses = tuple(float(o[1]) for o in ok)
        cells.append(CellResult(
            s.h, s.p1, s.p2,
            recovery_probability=sum(recovered) / M,
            mean_rmse=float(np.mean(rmses)) if rmses else float("nan"),
            replicates=M,
            failures=M - len(ok),
            recovered=recovered,
            rmses=rmses,
        ))
    axes = {k: tuple(grid[k]) for k in ("h", "p1", "p2")}
    return RecoveryGrid(axes, tuple(cells))
