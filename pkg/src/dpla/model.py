"""One-hidden-layer encoder plus linear classifier, with hand-written backprop.

Layout: ``h = relu(x W1 + b1)``, ``z = h W2 + b2`` (embedding), ``f = z W3 + b3``
(logits over all ``c_t`` classes, known classes first).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class SGD:
    lr: float
    momentum: float = 0.0


@dataclass(frozen=True)
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ModelState:
    input_dim: int
    hidden_dim: int
    embed_dim: int
    c_t: int
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def copy(self) -> "ModelState":
        return replace(
            self,
            params={k: v.copy() for k, v in self.params.items()},
            moments={k: v.copy() for k, v in self.moments.items()},
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def with_flat_params(self, flat) -> "ModelState":
        flat = np.asarray(flat, dtype=np.float64)
        params, off = {}, 0
        for k in PARAM_NAMES:
            shape = self.params[k].shape
            n = int(np.prod(shape))
            params[k] = flat[off:off + n].reshape(shape).copy()
            off += n
        return replace(self, params=params, moments=dict(self.moments))


def init_model(input_dim: int, hidden_dim: int, embed_dim: int, c_t: int, seed: int = 0) -> ModelState:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    dims = (input_dim, hidden_dim, embed_dim, c_t)
    if min(dims) < 1:
        raise ValueError(f"all dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        params[f"W{i}"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        params[f"b{i}"] = np.zeros(fan_out)
    return ModelState(input_dim, hidden_dim, embed_dim, c_t, params)


def _as_batch(state: ModelState, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != state.input_dim:
        raise ValueError(f"batch shape {x.shape} incompatible with input_dim {state.input_dim}")
    return x


def forward(state: ModelState, batch):
    """Return ``(embeddings, logits)`` for a batch of rows."""
    p = state.params
    x = _as_batch(state, batch)
    h = np.maximum(x @ p["W1"] + p["b1"], 0.0)
    z = h @ p["W2"] + p["b2"]
    return z, z @ p["W3"] + p["b3"]


def backward(state: ModelState, batch, grad_logits) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_logits * logits)`` w.r.t. every parameter."""
    p = state.params
    x = _as_batch(state, batch)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (x.shape[0], state.c_t):
        raise ValueError(f"grad_logits shape {g.shape}, expected {(x.shape[0], state.c_t)}")
    pre = x @ p["W1"] + p["b1"]
    h = np.maximum(pre, 0.0)
    z = h @ p["W2"] + p["b2"]
    dz = g @ p["W3"].T
    dh = (dz @ p["W2"].T) * (pre > 0)
    return {
        "W3": z.T @ g,
        "b3": g.sum(axis=0),
        "W2": h.T @ dz,
        "b2": dz.sum(axis=0),
        "W1": x.T @ dh,
        "b1": dh.sum(axis=0),
    }


def step(state: ModelState, grads: dict[str, np.ndarray], optimizer) -> ModelState:
    """Apply one optimizer update and return the new state; ``state`` is untouched."""
    for k in PARAM_NAMES:
        if grads[k].shape != state.params[k].shape:
            raise ValueError(f"gradient for {k} has shape {grads[k].shape}")
        if not np.all(np.isfinite(grads[k])):
            raise FloatingPointError(f"non-finite gradient for {k}; update rejected")
    new = state.copy()
    new.t += 1
    if isinstance(optimizer, SGD):
        for k in PARAM_NAMES:
            v = new.moments.get(f"v_{k}", np.zeros_like(grads[k]))
            v = optimizer.momentum * v + grads[k]
            new.moments[f"v_{k}"] = v
            new.params[k] = new.params[k] - optimizer.lr * v
    elif isinstance(optimizer, Adam):
        b1, b2 = optimizer.beta1, optimizer.beta2
        for k in PARAM_NAMES:
            m = b1 * new.moments.get(f"m_{k}", np.zeros_like(grads[k])) + (1 - b1) * grads[k]
            v = b2 * new.moments.get(f"v_{k}", np.zeros_like(grads[k])) + (1 - b2) * grads[k] ** 2
            new.moments[f"m_{k}"], new.moments[f"v_{k}"] = m, v
            m_hat = m / (1 - b1 ** new.t)
            v_hat = v / (1 - b2 ** new.t)
            new.params[k] = new.params[k] - optimizer.lr * m_hat / (np.sqrt(v_hat) + optimizer.eps)
    else:
        raise TypeError(f"unsupported optimizer {optimizer!r}")
    return new


# Checkpoint: b"DPLM", u32 input_dim, hidden_dim, embed_dim, c_t, then every
# parameter in PARAM_NAMES order as little-endian f64, row-major.
_CKPT_HEADER = "<4s4I"


def save_checkpoint(path, state: ModelState) -> None:
    header = struct.pack(_CKPT_HEADER, b"DPLM", state.input_dim, state.hidden_dim, state.embed_dim, state.c_t)
    Path(path).write_bytes(header + state.flat_params().astype("<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    raw = Path(path).read_bytes()
    hsize = struct.calcsize(_CKPT_HEADER)
    if len(raw) < hsize:
        raise ValueError(f"{path}: not a model checkpoint")
    magic, d_in, d_h, d_e, c_t = struct.unpack_from(_CKPT_HEADER, raw)
    if magic != b"DPLM":
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    template = init_model(d_in, d_h, d_e, c_t)
    n = template.flat_params().size
    if len(raw) != hsize + 8 * n:
        raise ValueError(f"{path}: expected {hsize + 8 * n} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=hsize).astype(np.float64)
    return template.with_flat_params(flat)
