"""Finite-difference checks of every loss term composed with the model."""

from __future__ import annotations

import numpy as np

from . import adjust, losses
from .adjust import AdjustConfig
from .model import backward, forward, init_model
from .numerics import grad_check, softmax, softmax_backward
from .trainer import batch_loss


def _problem(seed: int):
    rng = np.random.default_rng(seed)
    c_k, c_t = 3, 5
    state = init_model(4, 6, 5, c_t, seed=seed)
    # push biases off zero so no ReLU unit sits on its kink
    state.params["b1"] = rng.normal(0, 0.3, 6)
    x = rng.normal(size=(6, 4))
    y = np.array([0, 1, 2, 0, 1, 2])
    omega = rng.uniform(1, 50, size=c_k)
    w = rng.uniform(0.8, 1.2, size=c_t)
    return state, x, y, omega, w, c_k


def composed_losses(seed: int = 0):
    """Yield ``(name, state, loss_of_flat_params, analytic_flat_grad)``."""
    state, x, y, omega, w, c_k = _problem(seed)
    _, f0 = forward(state, x)
    q = np.argmax(f0, axis=1)
    mask = np.array([1, 0, 1, 1, 0, 1])
    pairs = np.array([[0, 1], [0, 3], [1, 4], [2, 5], [3, 4], [2, 3]])
    s = np.array([0, 1, 1, 1, 0, 0])

    def terms(f):
        p = softmax(f)
        pair = losses.pairwise_loss(p, pairs, s)
        reg = losses.entropy_reg(p)
        b = losses.balanced_ce_labeled(f[:, :c_k], y, omega, 2.0)
        m = losses.masked_pseudo_ce(adjust.scale_logits(w, f), q, mask)
        gb = np.zeros_like(f)
        gb[:, :c_k] = b.grad
        return {
            "ce": (losses.ce_loss(f, y).value, losses.ce_loss(f, y).grad),
            "balanced_ce_labeled": (b.value, gb),
            "masked_pseudo_ce": (m.value, m.grad * w),
            "pairwise": (pair.value, softmax_backward(p, pair.grad)),
            "entropy_reg": (reg.value, softmax_backward(p, reg.grad)),
        }

    for name in terms(f0):
        def fn(flat, name=name):
            return terms(forward(state.with_flat_params(flat), x)[1])[name][0]

        g_logits = terms(f0)[name][1]
        grads = backward(state, x, g_logits)
        analytic = np.concatenate([grads[k].ravel() for k in ("W1", "b1", "W2", "b2", "W3", "b3")])
        yield name, state, fn, analytic

    # the full per-batch objective, first 3 rows labeled
    cfg = AdjustConfig(rho=0.3)
    xl, yl, xu = x[:3], y[:3], x[3:]

    def total(flat):
        return batch_loss(state.with_flat_params(flat), xl, yl, xu, omega, w, cfg, pair_threshold=0.5).total.value

    res = batch_loss(state, xl, yl, xu, omega, w, cfg, pair_threshold=0.5)
    grads = backward(state, x, res.total.grad)
    yield "total", state, total, np.concatenate([grads[k].ravel() for k in ("W1", "b1", "W2", "b2", "W3", "b3")])


def run_suite(seed: int = 0, step: float = 1e-5) -> dict[str, float]:
    """Max relative error per loss term."""
    return {
        name: float(grad_check(fn, state.flat_params(), analytic, step))
        for name, state, fn, analytic in composed_losses(seed)
    }
