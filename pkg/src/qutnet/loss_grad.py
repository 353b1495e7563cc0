"""Square-root l2 loss, the penalized objective and exact gradients."""

from __future__ import annotations

import numpy as np

from .network import Architecture, Dataset, NetworkParams, forward_cache

__all__ = [
    "EPS_RES",
    "DegenerateResidual",
    "ConstantResponse",
    "sqrt_l2_loss",
    "objective",
    "gradient",
    "loss_and_gradient",
    "null_statistic",
    "null_gradient_sup",
    "null_gradient_sup_batch",
]

EPS_RES = 1e-12


class DegenerateResidual(ArithmeticError):
    """The residual norm is (numerically) zero, where the loss is not differentiable."""


class ConstantResponse(ValueError):
    """The response vector is constant, so the null statistic is undefined."""


def sqrt_l2_loss(y, preds) -> float:
    """Euclidean norm of ``y - preds``."""
    y = np.asarray(y, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if y.shape != preds.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {preds.shape}")
    return float(np.linalg.norm(y - preds))


def objective(y, preds, w1, lam: float) -> float:
    """``||y - preds||_2 + lam * sum(|w1|)``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return sqrt_l2_loss(y, preds) + lam * float(np.abs(np.asarray(w1)).sum())


def _unnormalize_grad(g_dir: np.ndarray, dirs: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(w/||w||) = (I - v v^T) / ||w||; zero rows are held at zero.
    proj = g_dir - dirs * np.einsum("ij,ij->i", g_dir, dirs)[:, None]
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, proj / safe[:, None], 0.0)


def loss_and_gradient(params: NetworkParams, arch: Architecture, dataset: Dataset):
    """Return ``(loss, grads, preds)`` for the square-root loss.

    Raises
    ------
    DegenerateResidual
        If ``||y - preds||_2 <= EPS_RES``.
    """
    cache = forward_cache(params, arch, dataset.x)
    resid = dataset.y - cache["out"]
    loss = float(np.linalg.norm(resid))
    if loss <= EPS_RES:
        raise DegenerateResidual(f"residual norm {loss:.3e} at or below {EPS_RES:g}")
    deriv = arch.activation.deriv
    n_layers = arch.n_layers
    dout = -resid / loss

    gw = [None] * n_layers
    gb = [None] * n_layers
    gb[-1] = np.array(dout.sum())
    u_last = cache["inputs"][-1]
    g_dir = (dout @ u_last)[None, :]
    gw[-1] = _unnormalize_grad(g_dir, cache["dirs"][-1], cache["norms"][-1])
    du = np.outer(dout, cache["dirs"][-1][0])

    for k in range(n_layers - 2, -1, -1):
        dz = du * deriv(cache["pre"][k])
        gb[k] = dz.sum(axis=0)
        g_dir = dz.T @ cache["inputs"][k]
        if k == 0:
            gw[k] = g_dir
        else:
            gw[k] = _unnormalize_grad(g_dir, cache["dirs"][k], cache["norms"][k])
            du = dz @ cache["dirs"][k]
    return loss, NetworkParams(tuple(gw), tuple(gb)), cache["out"]


def gradient(params: NetworkParams, arch: Architecture, dataset: Dataset) -> NetworkParams:
    """Gradient of ``||y - mu_theta(x)||_2`` with respect to every parameter."""
    return loss_and_gradient(params, arch, dataset)[1]


def null_statistic(y, x, deriv_at_zero: float) -> float:
    """Largest first-layer gradient entry at the constant fit, over unit output rows.

    For a two-layer network evaluated at ``W1 = 0``, ``b1 = 0`` and
    ``b2 = mean(y)`` this is::

        deriv_at_zero * max_j |sum_k (y_k - ybar) x_kj| / ||y - ybar||_2
    """
    y = np.ravel(np.asarray(y, dtype=float))
    x = np.asarray(x, dtype=float).reshape(y.size, -1)
    yc = y - y.mean()
    denom = float(np.linalg.norm(yc))
    if denom <= EPS_RES:
        raise ConstantResponse("response is constant; null statistic undefined")
    if x.shape[1] == 0:
        return 0.0
    return float(deriv_at_zero * np.max(np.abs(yc @ x)) / denom)


def null_gradient_sup(dataset: Dataset, deriv_at_zero: float) -> float:
    """:func:`null_statistic` evaluated on a dataset's own response."""
    return null_statistic(dataset.y, dataset.x, deriv_at_zero)


def null_gradient_sup_batch(ys: np.ndarray, x: np.ndarray, deriv_at_zero: float) -> np.ndarray:
    """Row-wise :func:`null_gradient_sup` for a stack of responses ``ys`` (m, n)."""
    ys = np.atleast_2d(ys)
    yc = ys - ys.mean(axis=1, keepdims=True)
    denom = np.sqrt(np.einsum("ij,ij->i", yc, yc))
    if np.any(denom <= EPS_RES):
        raise ConstantResponse("constant response in batch")
    if x.shape[1] == 0:
        return np.zeros(ys.shape[0])
    return deriv_at_zero * np.abs(yc @ x).max(axis=1) / denom
