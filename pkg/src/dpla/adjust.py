"""Two-stage logit adjustment: frequency-aware margins on known classes and
prediction-frequency scaling of unlabeled logits, plus pseudo-label
refinement and confidence masking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import sigmoid, softmax


@dataclass(frozen=True)
class AdjustConfig:
    tau_1: float = 2.0
    tau_2: float = 2.0
    alpha: float = 1.2
    beta: float = 0.8
    rho: float = 0.5
    C_base: int = 10
    S_base: int = 1024
    lambda_1: float = 0.5
    lambda_2: float = 0.5

    def __post_init__(self):
        if not self.tau_1 > 0:
            raise ValueError(f"tau_1 must be > 0, got {self.tau_1}")
        if not self.tau_2 > 0:
            raise ValueError(f"tau_2 must be > 0, got {self.tau_2}")
        if self.alpha < self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be >= beta ({self.beta})")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.C_base < 1 or self.S_base < 1:
            raise ValueError("C_base and S_base must be >= 1")


@dataclass(frozen=True)
class FrequencyTable:
    labeled_counts: np.ndarray
    ratios: np.ndarray

    @property
    def pi_max(self) -> float:
        return float(self.ratios.max())


def scale_factor(num_classes: int, input_size: int, C_base: int = 10, S_base: int = 1024) -> float:
    """Class-independent multiplier ``10 * ceil(C / C_base) * sqrt(S / S_base)``."""
    if num_classes < 1 or input_size < 1:
        raise ValueError("num_classes and input_size must be >= 1")
    return 10 * math.ceil(num_classes / C_base) * math.sqrt(input_size / S_base)


def compute_omega(labeled_counts, num_classes: int, input_size: int, cfg: AdjustConfig | None = None) -> np.ndarray:
    """Per-known-class margin magnitude: the scale factor times the labeled count."""
    cfg = cfg or AdjustConfig()
    F = np.asarray(labeled_counts, dtype=np.float64)
    if F.size == 0 or np.any(F < 1):
        raise ValueError("every known class needs a labeled count >= 1")
    return scale_factor(num_classes, input_size, cfg.C_base, cfg.S_base) * F


def _finite(logits) -> np.ndarray:
    f = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("logits contain non-finite entries")
    return f


def _check_omega(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0):
        raise ValueError("omega must be strictly positive")
    return omega


def first_stage_predict(logits, omega, tau_1: float):
    """``argmax_c f_c - tau_1 ln omega_c`` over known classes; ties go to the lower index."""
    f = _finite(logits)
    omega = _check_omega(omega)
    if f.shape[-1] != omega.size:
        raise ValueError(f"logit width {f.shape[-1]} != omega length {omega.size}")
    return np.argmax(f - tau_1 * np.log(omega), axis=-1)


def temperature_scaled_probs(logits, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    return softmax(np.asarray(logits, dtype=np.float64) / tau)


def estimate_frequencies(predictions, c_t: int, smoothing: float = 1.0) -> np.ndarray:
    """Add-``smoothing`` class ratios of predicted labels; sums to one."""
    preds = np.asarray(predictions, dtype=np.int64)
    if preds.size == 0:
        raise ValueError("no predictions to estimate frequencies from")
    if preds.min() < 0 or preds.max() >= c_t:
        raise ValueError(f"predictions must lie in [0, {c_t})")
    counts = np.bincount(preds, minlength=c_t).astype(np.float64)
    return (counts + smoothing) / (preds.size + c_t * smoothing)


def second_stage_weights(ratios, alpha: float, beta: float) -> np.ndarray:
    """Per-class logit scale; classes predicted less often get larger weights."""
    if alpha < beta:
        raise ValueError(f"alpha ({alpha}) must be >= beta ({beta})")
    pi = np.asarray(ratios, dtype=np.float64)
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be a probability vector")
    return sigmoid(np.exp(-pi) / np.exp(-pi.max())) * (alpha - beta) + beta


def scale_logits(w, logits) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    f = np.asarray(logits, dtype=np.float64)
    if f.shape[-1] != w.size:
        raise ValueError(f"weight length {w.size} != logit width {f.shape[-1]}")
    return f * w


def refine_pseudo_label(logits, omega, tau_2: float):
    """Shift the first ``len(omega)`` (known) logits by ``-tau_2 ln omega``, then
    take the argmax over all slots."""
    if not tau_2 > 0:
        raise ValueError(f"tau_2 must be > 0, got {tau_2}")
    f = _finite(logits).copy()
    omega = _check_omega(omega)
    c_k = omega.size
    if f.shape[-1] < c_k:
        raise ValueError("fewer logits than known classes")
    f[..., :c_k] -= tau_2 * np.log(omega)
    return np.argmax(f, axis=-1)


def confidence_mask(scaled_logits, rho: float):
    """1 where the top softmax probability reaches ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    return (softmax(scaled_logits).max(axis=-1) >= rho).astype(np.int64)
