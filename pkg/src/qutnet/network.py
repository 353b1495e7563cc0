"""Constrained feed-forward regression network.

The first layer is a plain affine map followed by the activation. Every
later layer divides each weight row by its Euclidean norm before taking the
inner product, and the output layer is linear with a free intercept. Hidden
biases are restricted to the range of their unit's pre-activations over the
training inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ActivationSpec",
    "Architecture",
    "NetworkParams",
    "Dataset",
    "ShapeError",
    "shifted_softplus",
    "normalize_rows",
    "forward",
    "forward_cache",
    "bias_bounds",
    "validate_params",
]

LOG2 = np.log(2.0)


class ShapeError(ValueError):
    """Raised when parameters or inputs do not match an architecture."""


def _softplus_shifted(u):
    u = np.asarray(u, dtype=float)
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u))) - LOG2


def _sigmoid(u):
    u = np.asarray(u, dtype=float)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class ActivationSpec:
    """Activation with ``eval(0) == 0`` and a positive slope at zero."""

    eval: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    deriv_at_zero: float
    name: str = "custom"

    def __post_init__(self):
        if not self.deriv_at_zero > 0:
            raise ValueError("activation must have a positive derivative at zero")
        if float(self.eval(np.zeros(1))[0]) != 0.0:
            raise ValueError("activation must vanish at zero")


shifted_softplus = ActivationSpec(
    eval=_softplus_shifted,
    deriv=_sigmoid,
    deriv_at_zero=0.5,
    name="shifted_softplus",
)


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(p1, ..., pl)``; a scalar output follows layer ``l``.

    ``layer_widths[0]`` is the input dimension. The network has
    ``len(layer_widths)`` weight matrices: ``W_k`` of shape
    ``(p_{k+1}, p_k)`` for ``k < l`` and the output row of shape ``(1, p_l)``.
    """

    layer_widths: tuple[int, ...]
    activation: ActivationSpec = shifted_softplus

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValueError("an architecture needs at least 2 layers")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    @property
    def n_features(self) -> int:
        return self.layer_widths[0]

    @property
    def n_hidden(self) -> int:
        """Width of the first hidden layer (rows of ``W1``)."""
        return self.layer_widths[1]

    def weight_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[k + 1], w[k]) for k in range(len(w) - 1)] + [(1, w[-1])]

    def bias_shapes(self) -> list[tuple[int, ...]]:
        w = self.layer_widths
        return [(w[k + 1],) for k in range(len(w) - 1)] + [()]

    @property
    def n_params(self) -> int:
        return sum(a * b for a, b in self.weight_shapes()) + sum(
            int(np.prod(s)) for s in self.bias_shapes()
        )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NetworkParams:
    """Weights ``(W1, ..., Wl)`` and biases ``(b1, ..., bl)``, stored unnormalized.

    Arrays are copied and made read-only on construction. The same type is
    used for gradients.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))

    @property
    def w1(self) -> np.ndarray:
        return self.weights[0]

    @property
    def b_out(self) -> float:
        return float(self.biases[-1])

    def ravel(self) -> np.ndarray:
        """Flatten to one vector; ``W1`` occupies the leading block in row-major order."""
        return np.concatenate(
            [w.ravel() for w in self.weights] + [np.ravel(b) for b in self.biases]
        )

    @classmethod
    def from_vector(cls, arch: Architecture, vec: np.ndarray) -> "NetworkParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != arch.n_params:
            raise ShapeError(f"expected {arch.n_params} parameters, got {vec.size}")
        weights, biases, pos = [], [], 0
        for shape in arch.weight_shapes():
            size = shape[0] * shape[1]
            weights.append(vec[pos : pos + size].reshape(shape))
            pos += size
        for shape in arch.bias_shapes():
            size = int(np.prod(shape))
            biases.append(vec[pos : pos + size].reshape(shape))
            pos += size
        return cls(tuple(weights), tuple(biases))

    def replace(self, weights=None, biases=None) -> "NetworkParams":
        return NetworkParams(
            self.weights if weights is None else tuple(weights),
            self.biases if biases is None else tuple(biases),
        )

    @classmethod
    def zeros(cls, arch: Architecture) -> "NetworkParams":
        return cls.from_vector(arch, np.zeros(arch.n_params))

    def check(self, arch: Architecture) -> None:
        """Raise :class:`ShapeError` naming the first inconsistent layer."""
        if len(self.weights) != arch.n_layers or len(self.biases) != arch.n_layers:
            raise ShapeError(
                f"expected {arch.n_layers} weight/bias pairs, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        for k, (w, shape) in enumerate(zip(self.weights, arch.weight_shapes()), 1):
            if w.shape != shape:
                raise ShapeError(f"layer {k}: weight shape {w.shape}, expected {shape}")
        for k, (b, shape) in enumerate(zip(self.biases, arch.bias_shapes()), 1):
            if b.shape != shape:
                raise ShapeError(f"layer {k}: bias shape {b.shape}, expected {shape}")


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``x`` (n, p1) and response ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        x = _frozen(np.atleast_2d(self.x))
        y = _frozen(np.ravel(self.y))
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if x.shape[0] < 2:
            raise ValueError("a dataset needs at least 2 observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def normalize_rows(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(w / ||w_j||, ||w_j||)`` row-wise, mapping zero rows to zero."""
    norms = np.sqrt(np.einsum("ij,ij->i", w, w))
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, w / safe[:, None], 0.0), norms


def _check_input(arch: Architecture, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.n_features:
        raise ShapeError(
            f"layer 1: input has shape {x.shape}, expected (n, {arch.n_features})"
        )
    return x


def forward_cache(params: NetworkParams, arch: Architecture, x) -> dict:
    """Forward pass keeping every intermediate quantity needed for backprop.

    Returns a dict with ``inputs`` (the input to each layer), ``pre`` (the
    pre-activations of layers ``1..l-1``), ``dirs`` (row-normalized weights;
    ``W1`` itself for the first layer), ``norms`` and ``out``.
    """
    params.check(arch)
    x = _check_input(arch, x)
    sigma = arch.activation.eval
    inputs, pre, dirs, norms = [x], [], [], []
    u = x
    for k in range(arch.n_layers - 1):
        w = params.weights[k]
        if k == 0:
            d, nrm = w, None
        else:
            d, nrm = normalize_rows(w)
        z = u @ d.T + params.biases[k]
        u = sigma(z)
        dirs.append(d)
        norms.append(nrm)
        pre.append(z)
        inputs.append(u)
    d, nrm = normalize_rows(params.weights[-1])
    dirs.append(d)
    norms.append(nrm)
    out = u @ d[0] + params.biases[-1]
    return {"inputs": inputs, "pre": pre, "dirs": dirs, "norms": norms, "out": out}


def forward(params: NetworkParams, arch: Architecture, x) -> np.ndarray:
    """Predictions of the network at the rows of ``x``."""
    return forward_cache(params, arch, x)["out"]


def bias_bounds(weight_row, latent_batch, layer_index: int, n_layers: int | None = None):
    """Feasible interval for the bias of one unit.

    Parameters
    ----------
    weight_row : array_like
        Row of ``W_k`` for the unit.
    latent_batch : array_like, shape (n, p_k)
        Inputs to layer ``k`` over the training set.
    layer_index : int
        One-based layer index ``k``.
    n_layers : int, optional
        Total depth ``l``. When ``layer_index == n_layers`` the bias is the
        unconstrained output intercept.

    Returns
    -------
    (lo, hi) : tuple of float
        ``[min, max]`` of the unit's inner products, normalized by the row
        norm for ``k > 1``. Zero rows give ``(0, 0)``.
    """
    if n_layers is not None and layer_index == n_layers:
        return (-np.inf, np.inf)
    w = np.ravel(np.asarray(weight_row, dtype=float))
    u = np.atleast_2d(np.asarray(latent_batch, dtype=float))
    if layer_index > 1:
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return (0.0, 0.0)
        w = w / nrm
    s = u @ w
    return (float(s.min()), float(s.max()))


def _interval_arrays(d: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = u @ d.T
    return s.min(axis=0), s.max(axis=0)


def layer_bias_intervals(params: NetworkParams, arch: Architecture, x) -> list:
    """Bias intervals of layers ``1..l-1`` computed on the given inputs."""
    cache = forward_cache(params, arch, x)
    return [
        _interval_arrays(cache["dirs"][k], cache["inputs"][k])
        for k in range(arch.n_layers - 1)
    ]


def validate_params(params: NetworkParams, arch: Architecture, dataset: Dataset) -> list[str]:
    """List every violated shape, finiteness or bias constraint; empty when valid."""
    try:
        params.check(arch)
    except ShapeError as exc:
        return [f"shape: {exc}"]
    if dataset.p != arch.n_features:
        return [f"shape: dataset has {dataset.p} features, architecture expects {arch.n_features}"]
    violations = []
    for k, (w, b) in enumerate(zip(params.weights, params.biases), 1):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            violations.append(f"layer {k}: non-finite parameters")
    if violations:
        return violations
    cache = forward_cache(params, arch, dataset.x)
    for k in range(arch.n_layers - 1):
        lo, hi = _interval_arrays(cache["dirs"][k], cache["inputs"][k])
        b = params.biases[k]
        for j in np.flatnonzero((b < lo) | (b > hi)):
            violations.append(
                f"layer {k + 1}, unit {j}: bias {b[j]!r} outside [{lo[j]!r}, {hi[j]!r}]"
            )
    return violations
