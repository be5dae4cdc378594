"""Loss terms with analytic gradients.

Cross-entropy style terms return gradients w.r.t. their logits; the pairwise
and entropy terms return gradients w.r.t. probabilities (chain through
:func:`dpla.numerics.softmax_backward`). Batch values are means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import log_softmax, softmax

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray | None = None

    def __float__(self):
        return self.value


def _batch(logits, targets):
    f = np.asarray(logits, dtype=np.float64)
    single = f.ndim == 1
    f2 = f[None, :] if single else f
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape != (f2.shape[0],):
        raise ValueError(f"{t.size} targets for {f2.shape[0]} rows")
    if t.size and (t.min() < 0 or t.max() >= f2.shape[1]):
        raise ValueError(f"targets must lie in [0, {f2.shape[1]})")
    return f2, t, single


def _per_sample_ce(f2, t):
    rows = np.arange(t.size)
    losses = -log_softmax(f2)[rows, t]
    grad = softmax(f2)
    grad[rows, t] -= 1.0
    return losses, grad


def ce_loss(logits, targets) -> LossValue:
    """Mean softmax cross-entropy; gradient ``(softmax - onehot) / n``."""
    f2, t, single = _batch(logits, targets)
    losses, grad = _per_sample_ce(f2, t)
    grad /= t.size
    return LossValue(float(losses.mean()), grad[0] if single else grad)


def balanced_ce_labeled(logits_known, labels, omega, tau_1: float) -> LossValue:
    """Cross-entropy on known-class logits shifted by ``+tau_1 ln omega``."""
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0):
        raise ValueError("omega must be strictly positive")
    f = np.asarray(logits_known, dtype=np.float64)
    if f.shape[-1] != omega.size:
        raise ValueError(f"logit width {f.shape[-1]} != omega length {omega.size}")
    return ce_loss(f + tau_1 * np.log(omega), labels)


def masked_pseudo_ce(scaled_logits, pseudo_labels, mask) -> LossValue:
    """Cross-entropy averaged over the rows whose mask bit is set (0 if none)."""
    f2, t, single = _batch(scaled_logits, pseudo_labels)
    m = np.atleast_1d(np.asarray(mask)).astype(np.float64)
    if m.shape != t.shape:
        raise ValueError("mask length does not match the batch")
    n_on = m.sum()
    if n_on == 0:
        return LossValue(0.0, np.zeros_like(f2[0] if single else f2))
    losses, grad = _per_sample_ce(f2, t)
    grad *= (m / n_on)[:, None]
    return LossValue(float((losses * m).sum() / n_on), grad[0] if single else grad)


def pairwise_loss(probs, pairs, targets) -> LossValue:
    """Binary cross-entropy on probability inner products ``<p_i, p_j>``.

    ``pairs`` is an ``(m, 2)`` index array and ``targets`` holds ``s_ij`` in
    {0, 1}. Inner products are clamped to ``[1e-7, 1 - 1e-7]``; the clamp
    passes no gradient. Returns a zero loss for an empty pair set.
    """
    p = np.asarray(probs, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    s = np.asarray(targets, dtype=np.float64).reshape(-1)
    if s.size != pairs.shape[0]:
        raise ValueError("one target per pair is required")
    if pairs.shape[0] == 0:
        return LossValue(0.0, np.zeros_like(p))
    if pairs.min() < 0 or pairs.max() >= p.shape[0]:
        raise ValueError("pair index out of range")
    i, j = pairs[:, 0], pairs[:, 1]
    raw = np.sum(p[i] * p[j], axis=1)
    g = np.clip(raw, PROB_CLAMP, 1 - PROB_CLAMP)
    losses = -(s * np.log(g) + (1 - s) * np.log1p(-g))
    m = pairs.shape[0]
    dg = (-s / g + (1 - s) / (1 - g)) / m
    dg[(raw < PROB_CLAMP) | (raw > 1 - PROB_CLAMP)] = 0.0
    grad = np.zeros_like(p)
    np.add.at(grad, i, dg[:, None] * p[j])
    np.add.at(grad, j, dg[:, None] * p[i])
    return LossValue(float(losses.mean()), grad)


def entropy_reg(probs) -> LossValue:
    """``ln c - H(mean_i p_i)``: KL of the batch marginal from uniform."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if p.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    n, c = p.shape
    mean = p.mean(axis=0)
    safe = np.maximum(mean, PROB_CLAMP)
    value = float(np.log(c) + np.sum(mean * np.log(safe)))
    dmean = np.log(safe) + (mean >= PROB_CLAMP)
    return LossValue(max(value, 0.0), np.broadcast_to(dmean / n, p.shape).copy())


def total_loss(l_pair, l_ce, l_b_ce, l_reg, lambda_1: float = 0.5, lambda_2: float = 0.5) -> LossValue:
    """``pair + lambda_1 * ce + lambda_2 * b_ce + reg``.

    Accepts :class:`LossValue` or plain numbers; gradients are combined when
    every term carries one of the same shape.
    """
    terms = [l_pair, l_ce, l_b_ce, l_reg]
    coefs = [1.0, lambda_1, lambda_2, 1.0]
    values = [float(t.value) if isinstance(t, LossValue) else float(t) for t in terms]
    if not all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite loss component in {values}")
    value = sum(k * v for k, v in zip(coefs, values))
    grads = [t.grad if isinstance(t, LossValue) else None for t in terms]
    grad = None
    if all(g is not None for g in grads):
        grad = sum(k * g for k, g in zip(coefs, grads))
    return LossValue(value, grad)
