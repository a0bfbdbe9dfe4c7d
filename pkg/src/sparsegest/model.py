"""RNN-lite models whose recurrent state lives outside the model.

A model is an immutable bag of weights. Every step function takes the
previous :class:`ExternalHiddenState` and returns a fresh one; replacing the
state is the caller's job, which is what lets a streaming session zero it at
will (gating).

Two architectures are provided:

* :class:`DetectorModel`: one tanh recurrent layer and a sigmoid unit giving
  the probability that the current frame belongs to a gesture.
* :class:`RecognizerModel`: three stacked tanh recurrent layers with dropout
  after each, and a softmax readout over gesture classes.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ParseError, ShapeError, VersionError
from .nnmath import DenseLayer, ParamDict, dense_forward, sigmoid, softmax

DETECTOR = "detector"
RECOGNIZER = "recognizer"


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    input_dim: int
    hidden: Tuple[int, ...]
    num_classes: int = 1
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in (DETECTOR, RECOGNIZER):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("input_dim and all hidden widths must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.kind == DETECTOR:
            if len(self.hidden) != 1:
                raise ConfigError("the detector has exactly one recurrent layer")
            if self.num_classes != 1:
                raise ConfigError("the detector has a single sigmoid output")
        else:
            if len(self.hidden) != 3:
                raise ConfigError("the recognizer has exactly three recurrent layers")
            if self.num_classes < 2:
                raise ConfigError("the recognizer needs at least two classes")


def detector_config(input_dim=78, hidden=256, seed=0) -> ModelConfig:
    return ModelConfig(DETECTOR, input_dim, (hidden,), 1, 0.0, seed)


def recognizer_config(input_dim=78, hidden=(256, 256, 256), num_classes=17, dropout=0.2, seed=0):
    if isinstance(hidden, int):
        hidden = (hidden,) * 3
    return ModelConfig(RECOGNIZER, input_dim, tuple(hidden), num_classes, dropout, seed)


@dataclass
class RnnLiteCell:
    input_weights: np.ndarray  # [hidden, in]
    recurrent_weights: np.ndarray  # [hidden, hidden]
    bias: np.ndarray  # [hidden]

    def __post_init__(self):
        h = self.bias.shape[0]
        if self.recurrent_weights.shape != (h, h):
            raise ShapeError(f"recurrent matrix must be {h}x{h}, got {self.recurrent_weights.shape}")
        if self.input_weights.ndim != 2 or self.input_weights.shape[0] != h:
            raise ShapeError(f"input matrix must have {h} rows, got {self.input_weights.shape}")

    @property
    def in_dim(self) -> int:
        return self.input_weights.shape[1]

    @property
    def width(self) -> int:
        return self.bias.shape[0]


@dataclass
class ExternalHiddenState:
    layers: List[np.ndarray] = field(default_factory=list)

    def copy(self) -> "ExternalHiddenState":
        return ExternalHiddenState([h.copy() for h in self.layers])


def cell_step(cell: RnnLiteCell, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """``tanh(Wx·x + Wh·h_prev + b)``. Never touches ``h_prev``."""
    if x.shape[-1] != cell.in_dim:
        raise ShapeError(f"frame has {x.shape[-1]} features, cell expects {cell.in_dim}")
    if h_prev.shape[-1] != cell.width:
        raise ShapeError(f"hidden has width {h_prev.shape[-1]}, cell expects {cell.width}")
    return np.tanh(cell.input_weights @ x + cell.recurrent_weights @ h_prev + cell.bias)


def reset_hidden(hidden: ExternalHiddenState) -> ExternalHiddenState:
    return ExternalHiddenState([np.zeros_like(h) for h in hidden.layers])


class RnnLiteModel:
    kind = ""

    def __init__(self, config: ModelConfig, cells: Sequence[RnnLiteCell], readout: DenseLayer):
        if config.kind != self.kind:
            raise ConfigError(f"{type(self).__name__} needs a {self.kind} config")
        widths = tuple(c.width for c in cells)
        if widths != config.hidden:
            raise ShapeError(f"cell widths {widths} disagree with config {config.hidden}")
        expected_in = (config.input_dim,) + config.hidden[:-1]
        if tuple(c.in_dim for c in cells) != expected_in:
            raise ShapeError("cell input widths do not chain")
        if readout.in_dim != config.hidden[-1] or readout.out_dim != config.num_classes:
            raise ShapeError("readout shape does not match config")
        self.config = config
        self.cells = list(cells)
        self.readout = readout

    @classmethod
    def init(cls, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, seeded from the config."""
        rng = rng if rng is not None else np.random.default_rng(config.seed)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        cells = []
        in_dim = config.input_dim
        for h in config.hidden:
            cells.append(
                RnnLiteCell(uniform((h, in_dim), in_dim), uniform((h, h), h), uniform((h,), in_dim + h))
            )
            in_dim = h
        readout = DenseLayer(
            uniform((config.num_classes, in_dim), in_dim), uniform((config.num_classes,), in_dim)
        )
        return cls(config, cells, readout)

    @classmethod
    def zeros(cls, config: ModelConfig):
        cells = []
        in_dim = config.input_dim
        for h in config.hidden:
            cells.append(RnnLiteCell(np.zeros((h, in_dim)), np.zeros((h, h)), np.zeros(h)))
            in_dim = h
        return cls(config, cells, DenseLayer(np.zeros((config.num_classes, in_dim)), np.zeros(config.num_classes)))

    def parameters(self) -> ParamDict:
        """Ordered ``name -> array`` view; the arrays are the model's own."""
        params = {}
        for k, c in enumerate(self.cells):
            params[f"cell{k}.input_weights"] = c.input_weights
            params[f"cell{k}.recurrent_weights"] = c.recurrent_weights
            params[f"cell{k}.bias"] = c.bias
        params["readout.weights"] = self.readout.weights
        params["readout.bias"] = self.readout.bias
        return params

    @classmethod
    def from_parameters(cls, config: ModelConfig, params: ParamDict):
        cells = [
            RnnLiteCell(
                params[f"cell{k}.input_weights"],
                params[f"cell{k}.recurrent_weights"],
                params[f"cell{k}.bias"],
            )
            for k in range(len(config.hidden))
        ]
        return cls(config, cells, DenseLayer(params["readout.weights"], params["readout.bias"]))

    def copy(self):
        return self.from_parameters(self.config, {k: v.copy() for k, v in self.parameters().items()})

    def astype(self, dtype):
        return self.from_parameters(
            self.config, {k: v.astype(dtype, copy=True) for k, v in self.parameters().items()}
        )

    @property
    def dtype(self):
        return self.readout.weights.dtype

    def zero_state(self) -> ExternalHiddenState:
        return ExternalHiddenState([np.zeros(h, dtype=self.dtype) for h in self.config.hidden])

    def _check_state(self, hidden: ExternalHiddenState):
        if len(hidden.layers) != len(self.cells):
            raise ShapeError(f"hidden state has {len(hidden.layers)} layers, model has {len(self.cells)}")


class DetectorModel(RnnLiteModel):
    kind = DETECTOR

    def step(self, hidden, x):
        return detector_step(self, hidden, x)


class RecognizerModel(RnnLiteModel):
    kind = RECOGNIZER

    def step(self, hidden, x, training=False, rng=None):
        return recognizer_step(self, hidden, x, training, rng)


def detector_step(model: DetectorModel, hidden: ExternalHiddenState, x: np.ndarray):
    """Returns ``(gesture confidence, new hidden)``."""
    model._check_state(hidden)
    h = cell_step(model.cells[0], x, hidden.layers[0])
    z = dense_forward(model.readout, h)[0]
    return float(sigmoid(z)), ExternalHiddenState([h])


def recognizer_step(
    model: RecognizerModel,
    hidden: ExternalHiddenState,
    x: np.ndarray,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
):
    """Returns ``(class probabilities, new hidden)``.

    Dropout (inverted) is applied to each layer's output on its way up, never
    to the recurrent state, and only when ``training`` is set.
    """
    model._check_state(hidden)
    p = model.config.dropout
    if training and p > 0 and rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    new = []
    inp = x
    for cell, h_prev in zip(model.cells, hidden.layers):
        h = cell_step(cell, inp, h_prev)
        new.append(h)
        inp = h
        if training and p > 0:
            inp = h * ((rng.random(h.shape[0]) >= p) / (1.0 - p))
    probs = softmax(dense_forward(model.readout, inp))
    return probs, ExternalHiddenState(new)


class ParamCounts(NamedTuple):
    detector: int
    recognizer: int
    idle: int
    busy: int


def _count(config: ModelConfig) -> int:
    total = 0
    in_dim = config.input_dim
    for h in config.hidden:
        total += h * (in_dim + h + 1)
        in_dim = h
    return total + config.num_classes * (in_dim + 1)


def count_parameters(detector: ModelConfig, recognizer: ModelConfig) -> ParamCounts:
    """Trainable parameter counts. The motion analyzer contributes none, so the
    idle count is the detector alone."""
    d = _count(detector)
    r = _count(recognizer)
    return ParamCounts(d, r, d, d + r)


# --- serialization -------------------------------------------------------
#
# Little-endian layout:
#   magic      4s   b"RNLT"
#   version    u16
#   dtype      u8   4 (float32) or 8 (float64)
#   kind       u8   0 detector, 1 recognizer
#   input_dim  u32
#   layers     u32  L
#   widths     u32 * L
#   classes    u32
#   dropout    f64
#   seed       u64
#   count      u64  number of scalars that follow
#   payload    count scalars, tensors in parameters() order, row-major
#   crc32      u32  over every preceding byte

MAGIC = b"RNLT"
FORMAT_VERSION = 1
_KINDS = {DETECTOR: 0, RECOGNIZER: 1}
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save_model(model: RnnLiteModel, path, dtype: str = "f4") -> None:
    code = {"f4": 4, "f8": 8}[dtype]
    cfg = model.config
    params = model.parameters()
    payload = b"".join(np.ascontiguousarray(p, dtype=_DTYPES[code]).tobytes() for p in params.values())
    count = sum(p.size for p in params.values())
    head = struct.pack("<4sHBBII", MAGIC, FORMAT_VERSION, code, _KINDS[cfg.kind], cfg.input_dim, len(cfg.hidden))
    head += struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden)
    head += struct.pack("<IdQQ", cfg.num_classes, cfg.dropout, cfg.seed, count)
    body = head + payload
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ParseError(f"truncated file, needed {size} bytes", self.path, offset=self.pos)
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out


def load_model(path) -> RnnLiteModel:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise VersionError(f"{path}: bad magic {magic!r}, not a model file")
    version, code, kind_code, input_dim, layers = r.take("<HBBII")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if code not in _DTYPES:
        raise ParseError(f"unknown dtype code {code}", path, offset=6)
    kinds = {v: k for k, v in _KINDS.items()}
    if kind_code not in kinds:
        raise ParseError(f"unknown model kind code {kind_code}", path, offset=7)
    if layers > 64:
        raise ParseError(f"implausible layer count {layers}", path, offset=12)
    widths = r.take(f"<{layers}I")
    num_classes, dropout, seed, count = r.take("<IdQQ")
    try:
        config = ModelConfig(kinds[kind_code], input_dim, widths, num_classes, dropout, seed)
    except ConfigError as exc:
        raise ParseError(f"invalid config block: {exc}", path, offset=r.pos) from None
    if count != _count(config):
        raise ParseError(f"payload holds {count} scalars, config implies {_count(config)}", path, offset=r.pos)
    dt = _DTYPES[code]
    start = r.pos
    end = start + count * dt.itemsize
    if end + 4 > len(data):
        raise ParseError("truncated payload", path, offset=len(data))
    if end + 4 != len(data):
        raise ParseError("trailing bytes after checksum", path, offset=end + 4)
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise ParseError("checksum mismatch", path, offset=end)
    flat = np.frombuffer(data, dtype=dt, count=count, offset=start).astype(np.float64)
    cls = DetectorModel if config.kind == DETECTOR else RecognizerModel
    template = cls.zeros(config).parameters()
    params = {}
    pos = 0
    for name, p in template.items():
        params[name] = flat[pos : pos + p.size].reshape(p.shape).copy()
        pos += p.size
    return cls.from_parameters(config, params)
