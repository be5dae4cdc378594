"""Stable softmax machinery and a finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable

import numpy as np


def _check_finite(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("input must be nonempty")
    if not np.all(np.isfinite(v)):
        raise ValueError("input contains non-finite entries")
    return v


def softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` using max-subtraction."""
    v = _check_finite(v)
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = _check_finite(v)
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits (row-wise)."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def grad_check(
    fn: Callable[[np.ndarray], float],
    params,
    analytic_grad,
    step: float = 1e-5,
) -> float:
    """Max relative error between central differences and ``analytic_grad``.

    The error per coordinate is ``|numeric - analytic| / max(1, |analytic|)``.
    ``params`` may have any shape; ``fn`` receives an array of that shape.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(params, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match params {x.shape}")
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn(x))
        flat[i] = orig - step
        lo = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        numeric = (hi - lo) / (2 * step)
        a = g.reshape(-1)[i]
        worst = max(worst, abs(numeric - a) / max(1.0, abs(a)))
    return worst
