"""Online gesture recognition metrics.

Spans are anything with ``label``, ``start`` and ``end`` attributes, ``end``
inclusive (:class:`~sparsegest.data.Span` for ground truth,
:class:`~sparsegest.pipeline.GestureEvent` for predictions). Set-level
functions take one list per sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .errors import ProtocolError, SpanError

IOU_THRESHOLD = 0.5
FRAME_RATE = 50.0


def _check(span):
    if span.start > span.end or span.start < 0:
        raise SpanError(f"malformed span [{span.start}, {span.end}]")


def temporal_iou(a, b) -> float:
    """Frame-count IoU of two inclusive spans."""
    _check(a)
    _check(b)
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = (a.end - a.start + 1) + (b.end - b.start + 1) - inter
    return inter / union


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)
    unmatched_predictions: List[int] = field(default_factory=list)
    unmatched_ground_truths: List[int] = field(default_factory=list)


def match_predictions(preds: Sequence, gts: Sequence, threshold: float = IOU_THRESHOLD) -> MatchResult:
    """Greedy one-to-one matching.

    Ground truths are visited by ascending start; each takes the unmatched
    prediction of the same class with the highest IoU, provided it reaches
    ``threshold``. IoU ties go to the prediction that starts first.
    """
    taken = set()
    result = MatchResult()
    for gi in sorted(range(len(gts)), key=lambda i: (gts[i].start, i)):
        g = gts[gi]
        best = None
        for pi, p in enumerate(preds):
            if pi in taken or p.label != g.label:
                continue
            iou = temporal_iou(p, g)
            if iou < threshold:
                continue
            key = (-iou, p.start, pi)
            if best is None or key < best[0]:
                best = (key, pi, iou)
        if best is None:
            result.unmatched_ground_truths.append(gi)
        else:
            taken.add(best[1])
            result.pairs.append((best[1], gi, best[2]))
    result.unmatched_predictions = [i for i in range(len(preds)) if i not in taken]
    return result


def detection_rate(matches: Sequence[MatchResult]) -> Optional[float]:
    """Matched ground truths over all ground truths; None when there are none."""
    paired = sum(len(m.pairs) for m in matches)
    total = paired + sum(len(m.unmatched_ground_truths) for m in matches)
    return paired / total if total else None


def false_positive_rate(matches: Sequence[MatchResult], denominator: str = "ground_truth") -> Optional[float]:
    """Unmatched predictions over all ground truths (can exceed 1); None without ground truths.

    ``denominator="predictions"`` divides by the prediction count instead,
    giving the share of predictions that are spurious.
    """
    spurious = sum(len(m.unmatched_predictions) for m in matches)
    if denominator == "ground_truth":
        total = sum(len(m.pairs) + len(m.unmatched_ground_truths) for m in matches)
    elif denominator == "predictions":
        total = spurious + sum(len(m.pairs) for m in matches)
    else:
        raise ValueError(f"unknown FPR denominator {denominator!r}")
    return spurious / total if total else None


def _merge(spans) -> List[Tuple[int, int]]:
    out: List[List[int]] = []
    for s, e in sorted((sp.start, sp.end) for sp in spans):
        if out and s <= out[-1][1] + 1:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [tuple(iv) for iv in out]


def _length(intervals) -> int:
    return sum(e - s + 1 for s, e in intervals)


def _intersection_length(a, b) -> int:
    i = j = total = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi >= lo:
            total += hi - lo + 1
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def sequence_jaccard(preds: Sequence, gts: Sequence) -> Optional[float]:
    """Mean over classes present in either list of the frame IoU between the
    union of predicted and the union of true spans of that class."""
    for sp in list(preds) + list(gts):
        _check(sp)
    classes = sorted({sp.label for sp in preds} | {sp.label for sp in gts})
    if not classes:
        return None
    scores = []
    for c in classes:
        p = _merge([sp for sp in preds if sp.label == c])
        g = _merge([sp for sp in gts if sp.label == c])
        inter = _intersection_length(p, g)
        union = _length(p) + _length(g) - inter
        scores.append(inter / union)
    return sum(scores) / len(scores)


def jaccard_index(preds: Sequence[Sequence], gts: Sequence[Sequence], aggregation: str = "per_sequence") -> Optional[float]:
    """Per-sequence Jaccard averaged over sequences that have any span at all.

    ``aggregation="pooled"`` instead sums intersection and union frame counts
    per class over every sequence and averages the resulting class scores.
    """
    if aggregation == "per_sequence":
        values = [v for v in (sequence_jaccard(p, g) for p, g in zip(preds, gts)) if v is not None]
        return sum(values) / len(values) if values else None
    if aggregation != "pooled":
        raise ValueError(f"unknown Jaccard aggregation {aggregation!r}")
    inter: dict = {}
    union: dict = {}
    for ps, gs in zip(preds, gts):
        for sp in list(ps) + list(gs):
            _check(sp)
        for c in {sp.label for sp in ps} | {sp.label for sp in gs}:
            p = _merge([sp for sp in ps if sp.label == c])
            g = _merge([sp for sp in gs if sp.label == c])
            i = _intersection_length(p, g)
            inter[c] = inter.get(c, 0) + i
            union[c] = union.get(c, 0) + _length(p) + _length(g) - i
    if not union:
        return None
    return sum(inter[c] / union[c] for c in sorted(union)) / len(union)


def real_time_factor(elapsed_seconds: float, total_frames: int, frame_rate: float = FRAME_RATE) -> float:
    if total_frames <= 0:
        raise ValueError("total_frames must be positive")
    return elapsed_seconds / (total_frames / frame_rate)


def early_detection_latency(traces: Sequence, matches: Sequence[MatchResult], gts: Sequence[Sequence]) -> Optional[float]:
    """Mean frames from gesture start to the first correct provisional class.

    ``traces[i]`` is the per-frame trace list of sequence ``i`` (indexed by
    frame, each with a ``provisional`` ``(class, confidence)`` or None). A
    matched gesture never provisionally correct within its span counts as
    ``end - start``.
    """
    if traces is None or len(traces) != len(matches):
        raise ProtocolError("per-frame traces are required for every sequence")
    latencies = []
    for seq_traces, m, seq_gts in zip(traces, matches, gts):
        if seq_traces is None:
            raise ProtocolError("per-frame traces are required for every sequence")
        for _, gi, _ in m.pairs:
            g = seq_gts[gi]
            latency = g.end - g.start
            for f in range(g.start, min(g.end, len(seq_traces) - 1) + 1):
                prov = seq_traces[f].provisional
                if prov is not None and prov[0] == g.label:
                    latency = f - g.start
                    break
            latencies.append(latency)
    return sum(latencies) / len(latencies) if latencies else None
