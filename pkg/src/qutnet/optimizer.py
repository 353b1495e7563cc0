"""Two-phase solver for the l1-penalized square-root loss.

Phase 1 runs steepest descent on the penalized objective. Phase 2 runs
proximal gradient steps (ISTA, optionally with FISTA momentum) so that
entries of ``W1`` become exactly zero. Hidden biases are clipped back into
their feasible intervals after every step.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .loss_grad import DegenerateResidual, loss_and_gradient
from .network import Architecture, Dataset, NetworkParams, normalize_rows

__all__ = [
    "OracleInit",
    "RandomInit",
    "FitConfig",
    "SupportMask",
    "FitResult",
    "NonFiniteObjective",
    "soft_threshold",
    "project_biases",
    "null_params",
    "random_params",
    "fit",
    "multi_start_fit",
]

logger = logging.getLogger(__name__)

MAX_BACKTRACKS = 40


class NonFiniteObjective(FloatingPointError):
    """The objective became NaN or infinite; ``trace`` holds the values so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class OracleInit:
    params: NetworkParams


@dataclass(frozen=True)
class RandomInit:
    seed: int = 0
    scale: float = 0.1


Init = Union[OracleInit, RandomInit]


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``smooth_iters=0`` skips the descent phase and starts the proximal phase
    at the initial point. ``smooth_subgradient`` picks the l1 subgradient used
    at zero entries of ``W1`` in the descent phase: ``"min-norm"`` (steepest
    descent, keeps zeros whose gradient is below ``lam``) or ``"zero"``. ``patience`` is the number of consecutive steps with
    relative objective change below ``tol`` that ends a phase.
    """

    lr_smooth: float = 1e-3
    smooth_iters: int = 5000
    lr_prox: float = 1e-3
    prox_iters: int = 5000
    tol: float = 1e-8
    fista: bool = True
    backtracking: bool = True
    init: Init = field(default_factory=RandomInit)
    patience: int = 50
    smooth_subgradient: str = "min-norm"

    def __post_init__(self):
        if self.smooth_subgradient not in ("min-norm", "zero"):
            raise ValueError(f"unknown smooth_subgradient {self.smooth_subgradient!r}")
        if not (self.lr_smooth > 0 and self.lr_prox > 0):
            raise ValueError("learning rates must be positive")
        if self.smooth_iters < 0 or self.prox_iters < 1:
            raise ValueError("smooth_iters must be >= 0 and prox_iters >= 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass(frozen=True, eq=False)
class SupportMask:
    mask: np.ndarray
    selected_features: frozenset
    active_neurons: frozenset

    def __eq__(self, other):
        if not isinstance(other, SupportMask):
            return NotImplemented
        return self.mask.shape == other.mask.shape and bool(np.array_equal(self.mask, other.mask))

    __hash__ = None

    @classmethod
    def from_w1(cls, w1) -> "SupportMask":
        mask = np.abs(np.asarray(w1)) > 0
        mask.flags.writeable = False
        return cls(
            mask,
            frozenset(int(j) for j in np.flatnonzero(mask.any(axis=0))),
            frozenset(int(i) for i in np.flatnonzero(mask.any(axis=1))),
        )

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()


@dataclass(frozen=True)
class FitResult:
    params: NetworkParams
    objective_trace: np.ndarray
    loss_trace: np.ndarray
    phase_boundary: int
    converged: bool
    support: SupportMask
    lam: float
    seed: int | None = None

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    @property
    def loss(self) -> float:
        return float(self.loss_trace[-1])


def soft_threshold(w, t):
    """``sign(w) * max(|w| - t, 0)`` with exact (positive) zeros."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    w = np.asarray(w, dtype=float)
    out = np.where(np.abs(w) > t, w - t * np.sign(w), 0.0)
    return float(out) if out.ndim == 0 else out


def _project(params: NetworkParams, arch: Architecture, x) -> tuple[NetworkParams, np.ndarray]:
    # clip layer by layer: later intervals depend on the clipped earlier biases
    sigma = arch.activation.eval
    u = x
    biases = list(params.biases)
    for k in range(arch.n_layers - 1):
        w = params.weights[k]
        d = w if k == 0 else normalize_rows(w)[0]
        s = u @ d.T
        b = np.clip(biases[k], s.min(axis=0), s.max(axis=0))
        biases[k] = b
        u = sigma(s + b)
    d = normalize_rows(params.weights[-1])[0]
    out = u @ d[0] + biases[-1]
    return params.replace(biases=biases), out


def project_biases(params: NetworkParams, arch: Architecture, dataset: Dataset) -> NetworkParams:
    """Clip every hidden bias into its interval on the training inputs."""
    params.check(arch)
    return _project(params, arch, dataset.x)[0]


def _centered_biases(weights, arch: Architecture, dataset: Dataset) -> NetworkParams:
    sigma = arch.activation.eval
    u = dataset.x
    biases = []
    for k in range(arch.n_layers - 1):
        d = weights[k] if k == 0 else normalize_rows(weights[k])[0]
        s = u @ d.T
        b = 0.5 * (s.min(axis=0) + s.max(axis=0))
        biases.append(b)
        u = sigma(s + b)
    biases.append(np.array(dataset.y.mean()))
    return NetworkParams(tuple(weights), tuple(biases))


def random_params(arch: Architecture, dataset: Dataset, seed: int, scale: float = 0.1,
                  w1=None) -> NetworkParams:
    """Gaussian weights with std ``scale``, biases centered in their intervals, ``b_l = mean(y)``.

    A given ``w1`` replaces the random first layer (the other draws are unchanged).
    """
    rng = np.random.default_rng(seed)
    weights = [scale * rng.standard_normal(s) for s in arch.weight_shapes()]
    if w1 is not None:
        weights[0] = np.asarray(w1, dtype=float).reshape(arch.weight_shapes()[0])
    return _centered_biases(weights, arch, dataset)


def null_params(arch: Architecture, dataset: Dataset, seed: int = 0, w_out=None) -> NetworkParams:
    """The constant-fit point: ``W1 = 0``, ``b1 = 0``, ``b_l = mean(y)``, random later layers."""
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal(s) for s in arch.weight_shapes()]
    weights[0] = np.zeros(arch.weight_shapes()[0])
    if w_out is not None:
        weights[-1] = np.asarray(w_out, dtype=float).reshape(arch.weight_shapes()[-1])
    return _centered_biases(weights, arch, dataset)


class _Problem:
    """Flat-vector view of the penalized objective."""

    def __init__(self, dataset: Dataset, arch: Architecture, lam: float):
        self.dataset, self.arch, self.lam = dataset, arch, lam
        self.m = arch.weight_shapes()[0][0] * arch.weight_shapes()[0][1]

    def unpack(self, v):
        return NetworkParams.from_vector(self.arch, v)

    def project(self, v):
        p, out = _project(self.unpack(v), self.arch, self.dataset.x)
        loss = float(np.linalg.norm(self.dataset.y - out))
        vec = p.ravel()
        return vec, loss, loss + self.lam * float(np.abs(vec[: self.m]).sum())

    def grad(self, v):
        loss, g, _ = loss_and_gradient(self.unpack(v), self.arch, self.dataset)
        return loss, g.ravel()

    def prox(self, v, step):
        v = v.copy()
        v[: self.m] = soft_threshold(v[: self.m], step * self.lam)
        return v


def _initial_params(arch, dataset, init: Init) -> NetworkParams:
    if isinstance(init, OracleInit):
        init.params.check(arch)
        return init.params
    return random_params(arch, dataset, init.seed, init.scale)


class _Stopper:
    def __init__(self, tol, patience):
        self.tol, self.patience, self.count = tol, patience, 0

    def update(self, old, new) -> bool:
        rel = abs(old - new) / max(abs(old), 1e-300)
        self.count = self.count + 1 if rel < self.tol else 0
        return self.count >= self.patience


def fit(dataset: Dataset, arch: Architecture, lam: float, config: FitConfig = FitConfig(),
        callback: Callable | None = None) -> FitResult:
    """Minimize ``||y - mu(x)||_2 + lam * ||W1||_1`` from ``config.init``.

    ``callback(phase, iteration, params)`` is called after every accepted
    iterate, with ``phase`` in ``{"smooth", "prox"}``.

    Raises
    ------
    NonFiniteObjective
        When the objective stops being finite; the trace is attached.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _fit(dataset, arch, lam, config, callback)


def _fit(dataset, arch, lam, config, callback):
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if dataset.p != arch.n_features:
        raise ValueError(f"dataset has {dataset.p} features, architecture expects {arch.n_features}")
    prob = _Problem(dataset, arch, float(lam))
    m = prob.m
    theta, loss, obj = prob.project(_initial_params(arch, dataset, config.init).ravel())
    obj_trace, loss_trace = [obj], [loss]
    converged = False

    def record(new_obj, new_loss):
        if not np.isfinite(new_obj):
            raise NonFiniteObjective(f"objective became {new_obj}", obj_trace + [new_obj])
        obj_trace.append(new_obj)
        loss_trace.append(new_loss)

    try:
        # phase 1: steepest descent, minimum-norm subgradient of the l1 term
        stop = _Stopper(config.tol, config.patience)
        min_norm = config.smooth_subgradient == "min-norm"
        for it in range(config.smooth_iters):
            _, g = prob.grad(theta)
            w, gw = theta[:m], g[:m]
            at_zero = soft_threshold(gw, lam) if min_norm else gw
            g[:m] = np.where(w != 0, gw + lam * np.sign(w), at_zero)
            theta, loss, new_obj = prob.project(theta - config.lr_smooth * g)
            record(new_obj, loss)
            if callback is not None:
                callback("smooth", it, prob.unpack(theta))
            if stop.update(obj, new_obj):
                obj = new_obj
                break
            obj = new_obj
        boundary = len(obj_trace) - 1

        # phase 2: proximal gradient with backtracking and restarted momentum
        stop = _Stopper(config.tol, config.patience)
        theta_prev = theta
        t_k = 1.0
        step = config.lr_prox
        for it in range(config.prox_iters):
            accepted = None
            bases = []
            if config.fista and t_k > 1.0:
                beta = (t_k - 1.0) / (0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k)))
                bases.append(theta + beta * (theta - theta_prev))
            bases.append(theta)
            for b_idx, base in enumerate(bases):
                last = b_idx == len(bases) - 1
                base, _, _ = prob.project(base)
                f_base, g = prob.grad(base)
                s = step
                for _ in range(MAX_BACKTRACKS if config.backtracking else 1):
                    cand, c_loss, c_obj = prob.project(prob.prox(base - s * g, s))
                    if not config.backtracking:
                        accepted = (cand, c_loss, c_obj)
                        break
                    diff = cand - base
                    model = f_base + g @ diff + (diff @ diff) / (2.0 * s)
                    if c_loss <= model + 1e-12 * max(1.0, abs(f_base)) and c_obj <= obj:
                        accepted = (cand, c_loss, c_obj)
                        break
                    s *= 0.5
                if accepted is not None and (accepted[2] <= obj or last):
                    step = min(config.lr_prox, 2.0 * s) if config.backtracking else s
                    break
                accepted = None
                t_k = 1.0  # momentum restart
            if accepted is None:
                converged = True
                break
            cand, c_loss, c_obj = accepted
            theta_prev, theta = theta, cand
            t_k = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k)) if config.fista else 1.0
            record(c_obj, c_loss)
            if callback is not None:
                callback("prox", it, prob.unpack(theta))
            done = stop.update(obj, c_obj)
            obj = c_obj
            if done:
                converged = True
                break
    except DegenerateResidual:
        logger.info("residual vanished; returning current iterate")
        converged = True
        if "boundary" not in locals():
            boundary = len(obj_trace) - 1

    params = prob.unpack(theta)
    return FitResult(
        params=params,
        objective_trace=np.asarray(obj_trace),
        loss_trace=np.asarray(loss_trace),
        phase_boundary=boundary,
        converged=converged,
        support=SupportMask.from_w1(params.w1),
        lam=float(lam),
        seed=config.init.seed if isinstance(config.init, RandomInit) else None,
    )


def _fit_seed(args):
    dataset, arch, lam, config, seed = args
    init = RandomInit(seed, config.init.scale if isinstance(config.init, RandomInit) else 0.1)
    cfg = FitConfig(**{**config.__dict__, "init": init})
    return fit(dataset, arch, lam, cfg)


def multi_start_fit(dataset: Dataset, arch: Architecture, lam: float, config: FitConfig = FitConfig(),
                    restarts: int = 1, seed: int | None = None, n_jobs: int | None = None) -> FitResult:
    """Best of ``restarts`` random-start fits by final penalized objective.

    Restart ``r`` uses init seed ``seed + r``; ``seed`` defaults to the seed of
    ``config.init`` when that is a :class:`RandomInit`. Ties go to the lowest
    seed.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if seed is None:
        seed = config.init.seed if isinstance(config.init, RandomInit) else 0
    seeds = [(int(seed) + r) % 2**64 for r in range(restarts)]
    jobs = [(dataset, arch, lam, config, s) for s in seeds]
    n_jobs = n_jobs or int(os.environ.get("QUTNET_NUM_WORKERS", "1"))
    if n_jobs > 1 and restarts > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_fit_seed, jobs))
    else:
        results = [_fit_seed(j) for j in jobs]
    return min(results, key=lambda r: (r.objective, r.seed))
