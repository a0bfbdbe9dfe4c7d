"""Small dense-math toolkit used by the recurrent models and their trainer.

Everything here works on plain numpy arrays and dicts of arrays
(``name -> ndarray``). A "gradient set" is just such a dict whose keys and
shapes mirror a model's parameter dict.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ParamDict = Dict[str, np.ndarray]

PROB_FLOOR = 1e-12


@dataclass
class DenseLayer:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("dense layer needs a 2-d weight matrix and a 1-d bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b``; ``x`` may be a single vector or a batch of rows."""
    x = np.asarray(x)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, layer expects {layer.in_dim}")
    return x @ layer.weights.T + layer.bias


def softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float) if not isinstance(v, np.ndarray) else v
    if v.size == 0 or v.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else out[()]


def cross_entropy(probs: np.ndarray, label: int, floor: float = PROB_FLOOR) -> float:
    """Negative log-likelihood of ``label`` under ``probs``, floored at ``floor``."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    p = float(probs[label])
    if p >= 1.0:
        return 0.0
    return -math.log(max(p, floor))


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> ParamDict:
    """Rescale all tensors jointly so their global L2 norm is at most ``max_norm``.

    Raises NumericError on any non-finite entry; the caller decides whether to
    skip the batch or abort.
    """
    if max_norm <= 0:
        raise ConfigError("max_norm must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return {k: g.copy() for k, g in grads.items()}
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamState:
    m: ParamDict
    v: ParamDict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


def adam_step(params: ParamDict, grads: Mapping[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if set(params) != set(grads):
        raise ShapeError("gradient set does not mirror the parameter set")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


@dataclass
class LrSchedule:
    base_rate: float = 0.001
    gamma: float = 0.9
    epoch: int = 0


def lr_at(schedule: LrSchedule) -> float:
    return schedule.base_rate * schedule.gamma ** schedule.epoch


def finite_difference_check(
    params: ParamDict,
    loss_and_grads: Callable[[ParamDict], tuple],
    epsilon: float = 1e-5,
    num_samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_and_grads(params)`` must return ``(loss, grads)`` and be a
    deterministic function of ``params``. Entries are perturbed in place and
    restored. With ``num_samples`` set, that many entries per tensor are drawn
    from ``rng``; otherwise every entry is checked.

    Returns the maximum of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    _, analytic = loss_and_grads(params)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        if num_samples is None or num_samples >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=num_samples, replace=False)
        ga = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = loss_and_grads(params)
            flat[i] = orig - epsilon
            down, _ = loss_and_grads(params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(ga[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
