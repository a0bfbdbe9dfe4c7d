"""Streaming training for the detector and the recognizer.

Every segment starts from a zero hidden state and a zero gradient
accumulator. Frames are processed one at a time, each contributing a
cross-entropy term weighted by ``w(t)``; the per-segment loss is

    sum_t w(t) * CE_t / sum_t w(t)          (normalize_by_length=True)
    sum_t w(t) * CE_t                       (normalize_by_length=False)

and its exact gradient (full backpropagation through the recurrence unless
``truncation`` is set) is computed by hand. A batch update averages the
per-segment gradients uniformly, clips the global norm and takes one Adam
step at the epoch's decayed learning rate.

Segments of a batch are evaluated in fixed-size micro-batches, padded to a
common length with zero-weight frames; the micro-batch layout depends only on
the data and config, so results are bit-identical for any worker count.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, Segment, extract_segments
from .errors import ConfigError, NumericError
from .model import (
    DETECTOR,
    RECOGNIZER,
    DetectorModel,
    ModelConfig,
    RecognizerModel,
    RnnLiteModel,
)
from .nnmath import PROB_FLOOR, AdamState, LrSchedule, adam_step, clip_gradients, lr_at, sigmoid

WEIGHTINGS = ("uniform", "linear_up", "linear_down", "exp_decay")


def frame_weight(strategy: str, t: int, T: int, decay: float = 0.0) -> float:
    """Loss weight of frame ``t`` (1-based) in a segment of ``T`` frames."""
    if not 1 <= t <= T:
        raise IndexError(f"frame {t} outside 1..{T}")
    if strategy == "uniform":
        return 1.0
    if strategy == "linear_up":
        return t / T
    if strategy == "linear_down":
        return (T - t + 1) / T
    if strategy == "exp_decay":
        return math.exp(-decay * (t - 1))
    raise ConfigError(f"unknown weighting {strategy!r}; choose from {WEIGHTINGS}")


def frame_weights(strategy: str, T: int, decay: float = 0.0) -> np.ndarray:
    return np.array([frame_weight(strategy, t, T, decay) for t in range(1, T + 1)])


@dataclass
class TrainingConfig:
    learning_rate: float = 0.001
    gamma: float = 0.9
    clip_norm: float = 1.0
    batch_size: int = 256
    epochs: Optional[int] = None  # None: 300 for the recognizer, 100 for the detector
    weighting: str = "uniform"
    decay: float = 0.0  # lambda for exp_decay weighting
    normalize_by_length: bool = True
    truncation: Optional[int] = None  # BPTT window; None backpropagates the whole segment
    chunk_length: int = 128  # detector training chunk
    micro_batch: int = 32
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning_rate and clip_norm must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.batch_size < 1 or self.micro_batch < 1 or self.workers < 1 or self.chunk_length < 1:
            raise ConfigError("batch_size, micro_batch, workers and chunk_length must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.truncation is not None and self.truncation < 1:
            raise ConfigError("truncation must be >= 1")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}; choose from {WEIGHTINGS}")
        if self.decay < 0:
            raise ConfigError("decay must be >= 0")

    def epochs_for(self, kind: str) -> int:
        if self.epochs is not None:
            return self.epochs
        return 300 if kind == RECOGNIZER else 100


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    lr: float
    seconds: float

    def to_record(self) -> dict:
        return {"type": "epoch", **asdict(self)}


def _pad(segments: Sequence[Segment], weighting: str, decay: float, normalize: bool):
    """Time-major padded arrays: frames [T,B,D], labels [T,B], weights [T,B], valid [T,B]."""
    T = max(len(s) for s in segments)
    B = len(segments)
    D = segments[0].frames.shape[1]
    X = np.zeros((T, B, D))
    Y = np.zeros((T, B), dtype=np.int64)
    W = np.zeros((T, B))
    valid = np.zeros((T, B), dtype=bool)
    for b, seg in enumerate(segments):
        n = len(seg)
        X[:n, b] = seg.frames
        Y[:n, b] = seg.labels
        w = frame_weights(weighting, n, decay)
        W[:n, b] = w / w.sum() if normalize else w
        valid[:n, b] = True
    return X, Y, W, valid


def batch_loss_and_grads(
    model: RnnLiteModel,
    segments: Sequence[Segment],
    weighting: str = "uniform",
    decay: float = 0.0,
    normalize_by_length: bool = True,
    truncation: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    training: bool = True,
    hook: Optional[Callable] = None,
):
    """Sum over ``segments`` of per-segment losses and gradients.

    Returns ``(loss_sum, grads_sum, correct_frames, total_frames)``. Each
    segment starts from a zero hidden state. Dropout is active when
    ``training`` is set, the model has a nonzero rate and ``rng`` is given.
    """
    X, Y, W, valid = _pad(segments, weighting, decay, normalize_by_length)
    T, B, _ = X.shape
    params = model.parameters()
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    p_drop = model.config.dropout if (training and rng is not None) else 0.0
    L = len(model.cells)

    h0 = [np.zeros((B, c.width)) for c in model.cells]
    if hook is not None:
        hook("segment_start", hidden=h0, grads=grads)

    # forward, one whole layer at a time
    inputs, states, masks = [], [], []
    inp = X
    for k, cell in enumerate(model.cells):
        proj = inp @ cell.input_weights.T + cell.bias
        H = np.empty((T, B, cell.width))
        h = h0[k]
        Ut = cell.recurrent_weights.T
        for t in range(T):
            h = np.tanh(proj[t] + h @ Ut)
            H[t] = h
        inputs.append(inp)
        states.append(H)
        if p_drop > 0:
            m = (rng.random(H.shape) >= p_drop) / (1.0 - p_drop)
            masks.append(m)
            inp = H * m
        else:
            masks.append(None)
            inp = H
    logits = inp @ model.readout.weights.T + model.readout.bias

    if model.kind == RECOGNIZER:
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=-1, keepdims=True)
        p_true = np.take_along_axis(probs, Y[..., None], axis=-1)[..., 0]
        dlogits = probs - np.eye(probs.shape[-1])[Y]
        pred = probs.argmax(axis=-1)
    else:
        zz = logits[..., 0]
        p = sigmoid(zz)
        p_true = np.where(Y == 1, p, sigmoid(-zz))
        dlogits = (p - Y)[..., None]
        pred = (p > 0.5).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ce = -np.log(np.maximum(p_true, PROB_FLOOR))
    bad = valid & ~np.isfinite(ce)
    if bad.any():
        t_bad = int(np.argwhere(bad)[0, 0])
        raise NumericError(f"non-finite loss at frame {t_bad}")
    loss = float(np.sum(W * ce))
    correct = int(np.sum((pred == Y) & valid))
    total = int(valid.sum())

    # backward
    dlogits = dlogits * W[..., None]
    grads["readout.weights"] += np.einsum("tbc,tbh->ch", dlogits, inp)
    grads["readout.bias"] += dlogits.sum(axis=(0, 1))
    d_out = dlogits @ model.readout.weights  # gradient w.r.t. the top layer's output
    for k in range(L - 1, -1, -1):
        cell = model.cells[k]
        H = states[k]
        dH = d_out * masks[k] if masks[k] is not None else d_out
        dA = np.empty_like(H)
        dh_next = np.zeros((B, cell.width))
        U = cell.recurrent_weights
        for t in range(T - 1, -1, -1):
            da = (dH[t] + dh_next) * (1.0 - H[t] * H[t])
            dA[t] = da
            if truncation is not None and t % truncation == 0:
                dh_next = np.zeros_like(dh_next)
            else:
                dh_next = da @ U
        H_prev = np.concatenate([h0[k][None], H[:-1]], axis=0)
        grads[f"cell{k}.input_weights"] += np.einsum("tbh,tbi->hi", dA, inputs[k])
        grads[f"cell{k}.recurrent_weights"] += np.einsum("tbh,tbj->hj", dA, H_prev)
        grads[f"cell{k}.bias"] += dA.sum(axis=(0, 1))
        if k > 0:
            d_out = dA @ cell.input_weights
    return loss, grads, correct, total


def segment_loss_and_grads(
    model: RnnLiteModel,
    segment: Segment,
    weighting: str = "uniform",
    decay: float = 0.0,
    normalize_by_length: bool = True,
    truncation: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    training: bool = True,
    hook: Optional[Callable] = None,
) -> Tuple[float, dict]:
    loss, grads, _, _ = batch_loss_and_grads(
        model, [segment], weighting, decay, normalize_by_length, truncation, rng, training, hook
    )
    return loss, grads


def _micro_rng(config: TrainingConfig, epoch: int, batch: int, micro: int):
    return np.random.default_rng([config.seed, epoch, batch, micro])


def batch_gradient(model, segments, config: TrainingConfig, epoch=0, batch_index=0, hook=None, pool=None):
    """Mean loss and mean gradient over ``segments`` with a fixed micro-batch
    reduction order."""
    chunks = [segments[i : i + config.micro_batch] for i in range(0, len(segments), config.micro_batch)]

    def work(item):
        j, chunk = item
        return batch_loss_and_grads(
            model, chunk, config.weighting, config.decay, config.normalize_by_length,
            config.truncation, _micro_rng(config, epoch, batch_index, j), True, hook,
        )

    results = list(pool.map(work, enumerate(chunks))) if pool is not None else [work(c) for c in enumerate(chunks)]
    loss, grads, correct, total = results[0]
    for l2, g2, c2, n2 in results[1:]:
        loss += l2
        correct += c2
        total += n2
        for k in grads:
            grads[k] += g2[k]
    n = len(segments)
    return loss / n, {k: g / n for k, g in grads.items()}, correct, total


def train_epoch(
    model: RnnLiteModel,
    segments: Sequence[Segment],
    config: TrainingConfig,
    adam_state: AdamState,
    epoch: int,
    hook: Optional[Callable] = None,
) -> EpochMetrics:
    started = time.perf_counter()
    order = np.random.default_rng([config.seed, epoch, 7]).permutation(len(segments))
    lr = lr_at(LrSchedule(config.learning_rate, config.gamma, epoch))
    params = model.parameters()
    loss_sum = 0.0
    correct = total = 0
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [segments[i] for i in order[start : start + config.batch_size]]
            try:
                loss, grads, c, n = batch_gradient(model, batch, config, epoch, b, hook, pool)
                grads = clip_gradients(grads, config.clip_norm)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            adam_step(params, grads, adam_state, lr)
            loss_sum += loss * len(batch)
            correct += c
            total += n
    finally:
        if pool is not None:
            pool.shutdown()
    return EpochMetrics(
        epoch=epoch,
        loss=loss_sum / len(segments),
        accuracy=correct / total if total else 0.0,
        lr=lr,
        seconds=time.perf_counter() - started,
    )


def train(
    kind: str,
    dataset: Dataset,
    config: TrainingConfig,
    model_config: Optional[ModelConfig] = None,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
):
    """Train a fresh detector or recognizer. Returns ``(model, epoch_log)``."""
    if kind not in (DETECTOR, RECOGNIZER):
        raise ConfigError(f"unknown model kind {kind!r}")
    segments = extract_segments(dataset, kind, config.chunk_length)
    if not segments:
        raise ConfigError(f"no {kind} training segments in the dataset")
    if model_config is None:
        from .model import detector_config, recognizer_config

        if kind == DETECTOR:
            model_config = detector_config(dataset.input_dim, seed=config.seed)
        else:
            model_config = recognizer_config(dataset.input_dim, num_classes=dataset.num_classes, seed=config.seed)
    if model_config.kind != kind:
        raise ConfigError(f"model config is for a {model_config.kind}, not a {kind}")
    if model_config.input_dim != dataset.input_dim:
        raise ConfigError(f"model expects {model_config.input_dim} inputs, data has {dataset.input_dim}")
    if kind == RECOGNIZER and model_config.num_classes < dataset.num_classes:
        raise ConfigError(f"model has {model_config.num_classes} classes, data has {dataset.num_classes}")
    cls = DetectorModel if kind == DETECTOR else RecognizerModel
    model = cls.init(model_config)
    state = AdamState.zeros_like(model.parameters())
    log: List[EpochMetrics] = []
    for epoch in range(config.epochs_for(kind)):
        m = train_epoch(model, segments, config, state, epoch)
        if not math.isfinite(m.loss):
            raise NumericError(f"epoch {epoch}: loss is not finite")
        log.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return model, log
