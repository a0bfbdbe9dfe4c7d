"""Sequential CPU evaluation of a detector/recognizer pair on a test split.

The protocol processes every sequence in order on one thread, frame by frame,
and times only the pipeline itself (data is already in memory and cast to
the inference precision before the clock starts).
"""
from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Dataset, Span
from .errors import NumericError, ProtocolError
from .metrics import (
    detection_rate,
    early_detection_latency,
    false_positive_rate,
    jaccard_index,
    match_predictions,
    real_time_factor,
    sequence_jaccard,
)
from .pipeline import GestureEvent, PipelineConfig, StreamSession

METRIC_NAMES = (
    "detection_rate",
    "false_positive_rate",
    "jaccard_index",
    "real_time_factor",
    "early_detection_latency_frames",
)


@dataclass
class SequenceResult:
    id: str
    frames: int
    seconds: float
    events: List[GestureEvent]
    ground_truth: List[Span]
    matched: int
    spurious: int
    jaccard: Optional[float]
    recognizer_steps: int = 0
    traces: Optional[list] = field(default=None, repr=False)

    def to_record(self) -> dict:
        return {
            "type": "sequence",
            "id": self.id,
            "frames": self.frames,
            "seconds": self.seconds,
            "events": [e.to_record() for e in self.events],
            "ground_truth": [list(s) for s in self.ground_truth],
            "matched": self.matched,
            "spurious": self.spurious,
            "jaccard": self.jaccard,
            "recognizer_steps": self.recognizer_steps,
        }


@dataclass
class EvalReport:
    detection_rate: Optional[float]
    false_positive_rate: Optional[float]
    jaccard_index: Optional[float]
    real_time_factor: float
    early_detection_latency_frames: Optional[float]
    sequences: List[SequenceResult] = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def accuracy_metrics(self) -> dict:
        m = self.metrics()
        m.pop("real_time_factor")
        return m

    def save(self, path) -> None:
        """Line-delimited records: one summary line, then one line per sequence."""
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "summary", **self.metrics(), "environment": self.environment}) + "\n")
            for s in self.sequences:
                fh.write(json.dumps(s.to_record()) + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        summary = None
        sequences = []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["type"] == "summary":
                    summary = rec
                elif rec["type"] == "sequence":
                    sequences.append(
                        SequenceResult(
                            id=rec["id"],
                            frames=rec["frames"],
                            seconds=rec["seconds"],
                            events=[GestureEvent(e["class"], e["confidence"], e["start"], e["end"]) for e in rec["events"]],
                            ground_truth=[Span(*g) for g in rec["ground_truth"]],
                            matched=rec["matched"],
                            spurious=rec["spurious"],
                            jaccard=rec["jaccard"],
                            recognizer_steps=rec.get("recognizer_steps", 0),
                        )
                    )
        if summary is None:
            raise ProtocolError(f"{path}: no summary record")
        return cls(
            **{name: summary[name] for name in METRIC_NAMES},
            sequences=sequences,
            environment=summary.get("environment", {}),
        )

    def format_table(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"

        rows = [
            ("Detection rate", fmt(self.detection_rate)),
            ("False positive rate", fmt(self.false_positive_rate)),
            ("Jaccard index", fmt(self.jaccard_index)),
            ("Real-time factor", fmt(self.real_time_factor)),
            ("Early detection latency (frames)", fmt(self.early_detection_latency_frames)),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {value}" for name, value in rows]
        env = self.environment
        if env:
            lines.append(
                f"({env.get('sequences')} sequences, {env.get('total_frames')} frames, "
                f"{env.get('threads')} thread, {env.get('precision')})"
            )
        return "\n".join(lines)


def evaluate_online(
    detector,
    recognizer,
    dataset: Dataset,
    config: PipelineConfig = PipelineConfig(),
    precision: str = "float32",
    keep_traces: bool = False,
    fpr_denominator: str = "ground_truth",
    jaccard_aggregation: str = "per_sequence",
) -> EvalReport:
    if not dataset.sequences:
        raise ProtocolError("evaluation needs at least one test sequence")
    dtype = {"float32": np.float32, "float64": np.float64}[precision]
    if detector is not None and hasattr(detector, "astype"):
        detector = detector.astype(dtype)
    if recognizer is not None and hasattr(recognizer, "astype"):
        recognizer = recognizer.astype(dtype)

    results = []
    all_traces = []
    matches = []
    elapsed = 0.0
    with threadpool_limits(limits=1):
        for seq in dataset.sequences:
            frames = np.ascontiguousarray(seq.frames, dtype=dtype)
            session = StreamSession(detector, recognizer, config)
            start = time.perf_counter()
            try:
                events, traces = session.run(frames)
            except NumericError as exc:
                raise NumericError(f"sequence {seq.id}: {exc}") from exc
            seconds = time.perf_counter() - start
            elapsed += seconds
            m = match_predictions(events, seq.spans)
            matches.append(m)
            all_traces.append(traces)
            results.append(
                SequenceResult(
                    id=seq.id,
                    frames=len(seq),
                    seconds=seconds,
                    events=events,
                    ground_truth=list(seq.spans),
                    matched=len(m.pairs),
                    spurious=len(m.unmatched_predictions),
                    jaccard=sequence_jaccard(events, seq.spans),
                    recognizer_steps=session.recognizer_steps,
                    traces=traces if keep_traces else None,
                )
            )

    total_frames = dataset.total_frames
    preds = [r.events for r in results]
    gts = [r.ground_truth for r in results]
    return EvalReport(
        detection_rate=detection_rate(matches),
        false_positive_rate=false_positive_rate(matches, fpr_denominator),
        jaccard_index=jaccard_index(preds, gts, jaccard_aggregation),
        real_time_factor=real_time_factor(elapsed, total_frames),
        early_detection_latency_frames=early_detection_latency(all_traces, matches, gts),
        sequences=results,
        environment={
            "threads": 1,
            "precision": precision,
            "fpr_denominator": fpr_denominator,
            "jaccard_aggregation": jaccard_aggregation,
            "sequences": len(results),
            "total_frames": total_frames,
            "elapsed_seconds": elapsed,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "machine": platform.machine(),
        },
    )
