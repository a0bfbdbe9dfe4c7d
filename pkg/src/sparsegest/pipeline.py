"""Three-stage sparse recognition over a frame stream.

Per frame a :class:`StreamSession`

1. asks the motion analyzer whether the frame is a discontinuity and, if so,
   zeroes the detector's hidden state;
2. steps the detector to get a gesture confidence;
3. moves between ``idle`` and ``active`` with hysteresis: it wakes when the
   confidence rises above the activation threshold (zeroing the recognizer's
   hidden state) and goes back to sleep once the confidence falls below the
   deactivation threshold, provided the span has lasted ``min_wait_frames``;
4. while active, steps the recognizer and folds its class probabilities into
   a running mean.

Leaving ``active`` emits a :class:`GestureEvent` covering the activation frame
through the frame on which deactivation was decided. While idle the recognizer
is never called.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .analyzer import AnalyzerConfig, AnalyzerState
from .errors import ConfigError, NumericError, ProtocolError, ShapeError

IDLE = "idle"
ACTIVE = "active"

PRESETS = {
    "default": (0.45, 0.2),
    "strict": (0.8, 0.5),
}

ABLATIONS = {
    "no-hidden-state": "disable_hidden_state",
    "no-gating": "disable_gating",
    "no-detector": "disable_detector",
}


@dataclass(frozen=True)
class PipelineConfig:
    activation_threshold: float = 0.45
    deactivation_threshold: float = 0.2
    min_wait_frames: int = 10
    analyzer: AnalyzerConfig = field(default_factory=AnalyzerConfig)
    reset_on_activation: bool = True
    # only used with disable_detector: frames below this max-probability end a run
    recognizer_floor: float = 0.5
    disable_hidden_state: bool = False
    disable_gating: bool = False
    disable_detector: bool = False

    def __post_init__(self):
        for name in ("activation_threshold", "deactivation_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.deactivation_threshold < self.activation_threshold:
            raise ConfigError("deactivation threshold must be below the activation threshold")
        if self.min_wait_frames < 0:
            raise ConfigError("min_wait_frames must be >= 0")
        if not 0.0 <= self.recognizer_floor <= 1.0:
            raise ConfigError("recognizer_floor must lie in [0, 1]")


def with_preset(config: PipelineConfig, name: str) -> PipelineConfig:
    try:
        act, deact = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return dataclasses.replace(config, activation_threshold=act, deactivation_threshold=deact)


def apply_ablation(config: PipelineConfig, flags: Iterable[str]) -> PipelineConfig:
    """Switch on ablation flags, given as ``no-detector`` or ``disable_detector`` style names."""
    changes = {}
    for flag in flags:
        name = ABLATIONS.get(flag, flag.replace("-", "_"))
        if name not in ABLATIONS.values():
            raise ConfigError(f"unknown ablation {flag!r}; choose from {sorted(ABLATIONS)}")
        changes[name] = True
    return dataclasses.replace(config, **changes)


@dataclass(frozen=True)
class GestureEvent:
    label: int
    confidence: float
    start: int
    end: int  # inclusive

    def to_record(self) -> dict:
        return {"type": "event", "class": self.label, "confidence": self.confidence,
                "start": self.start, "end": self.end}


@dataclass
class FrameTrace:
    frame: int
    det_conf: Optional[float]
    reset: bool
    phase: str
    probs: Optional[np.ndarray] = None
    provisional: Optional[Tuple[int, float]] = None

    def to_record(self) -> dict:
        return {
            "type": "trace",
            "frame": self.frame,
            "det_conf": self.det_conf,
            "phase": self.phase,
            "reset": self.reset,
            "provisional": None if self.provisional is None else list(self.provisional),
        }


class StreamSession:
    """One stream, one thread. Models are shared read-only; states are owned here.

    ``detector`` and ``recognizer`` need ``zero_state()`` and ``step(hidden, x)``;
    the detector's step returns ``(confidence, hidden)``, the recognizer's
    ``(probabilities, hidden)``.
    """

    def __init__(self, detector, recognizer, config: PipelineConfig = PipelineConfig()):
        self.detector = detector
        self.recognizer = recognizer
        self.config = config
        self.analyzer: Optional[AnalyzerState] = None
        self.det_hidden = detector.zero_state() if detector is not None else None
        self.rec_hidden = recognizer.zero_state()
        self.phase = IDLE
        self.frame_index = -1
        self.activation_frame: Optional[int] = None
        self.prob_sum: Optional[np.ndarray] = None
        self.active_frames = 0
        self.finished = False
        # instrumentation
        self.detector_steps = 0
        self.recognizer_steps = 0
        self.analyzer_steps = 0
        self.analyzer_resets = 0

    # -- helpers ----------------------------------------------------------
    def _mean(self) -> np.ndarray:
        return self.prob_sum / self.active_frames

    def provisional_prediction(self) -> Optional[Tuple[int, float]]:
        """Argmax and max of the running mean class distribution, or None when idle."""
        if self.phase != ACTIVE or self.active_frames == 0:
            return None
        mean = self._mean()
        c = int(np.argmax(mean))
        return c, float(mean[c])

    def _open_span(self, t: int):
        self.phase = ACTIVE
        self.activation_frame = t
        self.prob_sum = None
        self.active_frames = 0

    def _close_span(self, end: int) -> Optional[GestureEvent]:
        event = None
        if self.active_frames > 0:
            c, conf = self.provisional_prediction()
            event = GestureEvent(c, conf, self.activation_frame, end)
        self.phase = IDLE
        self.activation_frame = None
        self.prob_sum = None
        self.active_frames = 0
        return event

    def _recognize(self, x) -> np.ndarray:
        if self.config.disable_hidden_state:
            self.rec_hidden = self.recognizer.zero_state()
        probs, self.rec_hidden = self.recognizer.step(self.rec_hidden, x)
        self.recognizer_steps += 1
        if not np.all(np.isfinite(probs)):
            raise NumericError(f"non-finite recognizer output at frame {self.frame_index}")
        self.prob_sum = probs.astype(np.float64) if self.prob_sum is None else self.prob_sum + probs
        self.active_frames += 1
        return probs

    # -- main entry points -------------------------------------------------
    def process_frame(self, frame) -> Tuple[Optional[GestureEvent], FrameTrace]:
        if self.finished:
            raise ProtocolError("session already finalized")
        cfg = self.config
        x = np.asarray(frame)
        if x.ndim != 1:
            raise ShapeError(f"frame must be a flat vector, got shape {x.shape}")
        if self.analyzer is None:
            if x.size % 3:
                raise ShapeError(f"frame length {x.size} is not a multiple of 3")
            self.analyzer = AnalyzerState(cfg.analyzer, x.size // 3)
        self.frame_index += 1
        t = self.frame_index

        reset = self.analyzer.step(x)
        self.analyzer_steps += 1
        if reset:
            self.analyzer_resets += 1
        gated = reset and not cfg.disable_gating

        if cfg.disable_detector:
            return self._process_without_detector(t, x, gated)

        # stage 1: analyzer gates the detector
        if gated or cfg.disable_hidden_state:
            self.det_hidden = self.detector.zero_state()
        # stage 2: detector
        conf, self.det_hidden = self.detector.step(self.det_hidden, x)
        self.detector_steps += 1
        if not np.isfinite(conf):
            raise NumericError(f"non-finite detector output at frame {t}")

        # stage 3: hysteresis
        event = None
        if self.phase == IDLE:
            if conf > cfg.activation_threshold:
                self._open_span(t)
                if cfg.reset_on_activation and not cfg.disable_gating:
                    self.rec_hidden = self.recognizer.zero_state()
        elif conf < cfg.deactivation_threshold and t - self.activation_frame + 1 >= cfg.min_wait_frames:
            event = self._close_span(t)

        # stage 4: recognizer only while active
        probs = self._recognize(x) if self.phase == ACTIVE else None
        trace = FrameTrace(t, conf, reset, self.phase, probs, self.provisional_prediction())
        return event, trace

    def _process_without_detector(self, t, x, gated):
        # Recognizer on every frame; spans are runs of one argmax above the floor.
        cfg = self.config
        if gated:
            self.rec_hidden = self.recognizer.zero_state()
        if cfg.disable_hidden_state:
            self.rec_hidden = self.recognizer.zero_state()
        probs, self.rec_hidden = self.recognizer.step(self.rec_hidden, x)
        self.recognizer_steps += 1
        if not np.all(np.isfinite(probs)):
            raise NumericError(f"non-finite recognizer output at frame {t}")
        c = int(np.argmax(probs))
        above = probs[c] >= cfg.recognizer_floor

        event = None
        if self.phase == ACTIVE:
            run_label = int(np.argmax(self.prob_sum))
            if not above or c != run_label:
                event = self._emit_run(t - 1)
        if above and self.phase == IDLE:
            self._open_span(t)
        if self.phase == ACTIVE:
            self.prob_sum = probs.astype(np.float64) if self.prob_sum is None else self.prob_sum + probs
            self.active_frames += 1
        trace = FrameTrace(t, None, gated, self.phase, probs, self.provisional_prediction())
        return event, trace

    def _emit_run(self, end: int) -> Optional[GestureEvent]:
        length = end - self.activation_frame + 1
        event = self._close_span(end)
        if length < max(self.config.min_wait_frames, 1):
            return None
        return event

    def finalize(self) -> Optional[GestureEvent]:
        """Close the stream. A still-open span becomes an event ending at the last frame."""
        if self.finished:
            raise ProtocolError("session already finalized")
        self.finished = True
        if self.phase != ACTIVE:
            return None
        return self._emit_run(self.frame_index)

    def run(self, frames) -> Tuple[List[GestureEvent], List[FrameTrace]]:
        """Process a whole sequence and finalize."""
        events, traces = [], []
        for frame in frames:
            ev, tr = self.process_frame(frame)
            if ev is not None:
                events.append(ev)
            traces.append(tr)
        ev = self.finalize()
        if ev is not None:
            events.append(ev)
        return events, traces
