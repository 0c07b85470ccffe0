"""Dense float64 layers with explicit backward passes, loss kernels, SGD and a
central-difference gradient checker.

Matrices are plain 2-D ``numpy.float64`` arrays (batch along axis 0). Forward
functions that need state for the backward pass return ``(out, cache)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np

from .errors import DegenerateVectorError, DimensionError, DistributionError, NumericError

EPS_PROB = 1e-12
EPS_NORM = 1e-12
FD_STEP = 1e-5
_DIST_ATOL = 1e-6


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {what}")
    return a


# ----------------------------------------------------------------------------
# linear

class LinearCache(NamedTuple):
    inputs: np.ndarray
    weights: np.ndarray


def linear_forward(x, weights, bias) -> tuple[np.ndarray, LinearCache]:
    """``out = x @ weights + bias`` with ``x`` of shape (B, d_in)."""
    x = _as_matrix(x, "input")
    w = _as_matrix(weights, "weights")
    b = np.asarray(bias, dtype=np.float64)
    if x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(
            f"linear shapes do not chain: input {x.shape}, weights {w.shape}, bias {b.shape}"
        )
    out = x @ w + b
    return _check_finite(out, "linear output"), LinearCache(x, w)


def linear_backward(cache: LinearCache, dout) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    dout = _as_matrix(dout, "upstream gradient")
    if dout.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(
            f"upstream gradient shape {dout.shape} does not match layer output {(x.shape[0], w.shape[1])}"
        )
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# ----------------------------------------------------------------------------
# relu

def relu_forward(x) -> tuple[np.ndarray, np.ndarray]:
    x = _check_finite(np.asarray(x, dtype=np.float64), "relu input")
    return np.maximum(x, 0.0), x


def relu_backward(cache: np.ndarray, dout) -> np.ndarray:
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != cache.shape:
        raise DimensionError(f"relu upstream {dout.shape} vs input {cache.shape}")
    return np.where(cache > 0, dout, 0.0)


# ----------------------------------------------------------------------------
# softmax

def softmax_rows(logits) -> np.ndarray:
    z = _check_finite(_as_matrix(logits, "logits"), "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(probs: np.ndarray, dout) -> np.ndarray:
    """Gradient w.r.t. logits given the softmax output and dL/dprobs."""
    dout = np.asarray(dout, dtype=np.float64)
    return probs * (dout - (probs * dout).sum(axis=1, keepdims=True))


# ----------------------------------------------------------------------------
# row normalisation

def l2_normalize_rows(m, eps: float = EPS_NORM) -> np.ndarray:
    m = _check_finite(_as_matrix(m, "matrix"), "normalize input")
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    if (norms < eps).any():
        bad = np.flatnonzero(norms[:, 0] < eps).tolist()
        raise DegenerateVectorError(f"rows {bad[:8]} have norm below {eps:g}")
    return m / norms


def l2_normalize_rows_backward(m: np.ndarray, dout) -> np.ndarray:
    """Gradient of ``m / ||m||`` (row-wise) given dL/d(normalized)."""
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    y = m / norms
    dout = np.asarray(dout, dtype=np.float64)
    return (dout - y * (y * dout).sum(axis=1, keepdims=True)) / norms


# ----------------------------------------------------------------------------
# losses

def check_distribution(x, name: str = "distribution", atol: float = _DIST_ATOL) -> np.ndarray:
    """Validate that the last axis holds probability vectors; return as float64."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim not in (1, 2) or a.shape[-1] == 0:
        raise DistributionError(f"{name} must be a non-empty vector or matrix, got shape {a.shape}")
    if not np.isfinite(a).all() or (a < -atol).any():
        raise DistributionError(f"{name} has negative or non-finite entries")
    sums = a.sum(axis=-1)
    if np.abs(sums - 1.0).max() > atol:
        raise DistributionError(f"{name} does not sum to 1 (max deviation {np.abs(sums - 1.0).max():.3g})")
    return a


def _xlogy(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # 0 * log(anything) := 0
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(q[nz])
    return out


def kl_divergence_rows(p, s) -> np.ndarray:
    """Row-wise KL(p || s); ``s`` is clamped at EPS_PROB before the log."""
    p = check_distribution(p, "p")
    s = check_distribution(s, "s")
    if p.shape != s.shape:
        raise DimensionError(f"KL operands differ in shape: {p.shape} vs {s.shape}")
    s_c = np.maximum(s, EPS_PROB)
    return (_xlogy(p, p) - _xlogy(p, s_c)).sum(axis=-1)


def kl_divergence(p, s) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionError("kl_divergence takes single vectors; use kl_divergence_rows")
    return float(kl_divergence_rows(p, s))


def cross_entropy_rows(target, pred) -> np.ndarray:
    target = check_distribution(target, "target")
    pred = check_distribution(pred, "prediction")
    if target.shape != pred.shape:
        raise DimensionError(f"cross-entropy operands differ in shape: {target.shape} vs {pred.shape}")
    return -_xlogy(target, np.maximum(pred, EPS_PROB)).sum(axis=-1)


def cross_entropy(target, pred) -> float:
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1:
        raise DimensionError("cross_entropy takes single vectors; use cross_entropy_rows")
    return float(cross_entropy_rows(target, pred))


def neg_log_grad(target: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """d/dpred of ``-sum(target * log(max(pred, EPS_PROB)))``.

    Shared by cross-entropy and the ``-p log s`` half of KL (the ``p log p``
    half is constant in ``s``).
    """
    grad = np.zeros_like(pred)
    live = pred >= EPS_PROB
    grad[live] = -target[live] / pred[live]
    return grad


# ----------------------------------------------------------------------------
# optimiser

def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    learning_rate: float,
    weight_decay: float = 0.0,
) -> dict[str, np.ndarray]:
    """Return new parameters ``w - lr * (g + wd * w)``; inputs are not modified."""
    if set(params) != set(grads):
        raise DimensionError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    out = {}
    for name, w in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(w):
            raise DimensionError(f"gradient for '{name}' has shape {np.shape(g)}, parameter {np.shape(w)}")
        out[name] = w - learning_rate * (g + weight_decay * w)
    return out


# ----------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter_errors: list[tuple[str, float]] = field(default_factory=list)
    passed: bool = False
    tolerance: float = 1e-4


LossFn = Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    loss_fn: LossFn,
    params: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = FD_STEP,
) -> GradCheckReport:
    """Compare ``loss_fn``'s analytic gradients with central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be deterministic.
    Every scalar entry of every parameter is perturbed.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss0, analytic = loss_fn(base)
    if not np.isfinite(loss0):
        raise NumericError("loss is not finite at the check point")

    errors: list[tuple[str, float]] = []
    for name, w in base.items():
        numeric = np.zeros_like(w)
        flat = w.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + h
            lp, _ = loss_fn(base)
            flat[idx] = old - h
            lm, _ = loss_fn(base)
            flat[idx] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"loss became non-finite perturbing {name}[{idx}]")
            num_flat[idx] = (lp - lm) / (2.0 * h)
        err = relative_error(np.asarray(analytic[name], dtype=np.float64), numeric)
        errors.append((name, float(err.max()) if err.size else 0.0))

    worst = max((e for _, e in errors), default=0.0)
    return GradCheckReport(worst, errors, worst < tolerance, tolerance)
