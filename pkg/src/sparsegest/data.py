"""Skeleton streams, annotations, loaders and a synthetic stream generator.

Canonical on-disk layout of one split::

    <dir>/annotations.txt     header comments + one "sequence_id class start end" line per span
    <dir>/frames/<id>.txt     one frame per line, whitespace separated reals

Frame values are written with ``repr`` so a save/load cycle is bit exact.
Loaders never rescale, centre or smooth coordinates.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence as Seq, Tuple

import numpy as np

from .errors import AnnotationError, ParseError, SchemaError

ANNOTATION_FILE = "annotations.txt"
FRAMES_DIR = "frames"


class Span(NamedTuple):
    label: int
    start: int
    end: int  # inclusive


@dataclass
class Sequence:
    id: str
    frames: np.ndarray  # [T, num_joints * 3]
    spans: List[Span] = field(default_factory=list)

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class Dataset:
    sequences: List[Sequence] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)
    split: str = "train"
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_dim(self) -> Optional[int]:
        return self.sequences[0].frames.shape[1] if self.sequences else None

    @property
    def total_frames(self) -> int:
        return sum(len(s) for s in self.sequences)

    def validate(self) -> "Dataset":
        dims = {s.frames.shape[1] for s in self.sequences}
        if len(dims) > 1:
            raise SchemaError(f"inconsistent frame widths across sequences: {sorted(dims)}")
        for s in self.sequences:
            if s.frames.ndim != 2 or s.frames.shape[1] % 3:
                raise SchemaError(f"{s.id}: frames must be [T, joints*3], got {s.frames.shape}")
            if not np.all(np.isfinite(s.frames)):
                raise SchemaError(f"{s.id}: non-finite coordinates")
            check_spans(s.spans, len(s), s.id)
            for sp in s.spans:
                if not 0 <= sp.label < self.num_classes:
                    raise SchemaError(f"{s.id}: class {sp.label} outside 0..{self.num_classes - 1}")
        return self


def check_spans(spans: Seq[Span], length: int, where: str = "") -> None:
    prev_end = -1
    for sp in spans:
        if sp.start > sp.end:
            raise AnnotationError(f"{where}: span {tuple(sp)} has start after end")
        if sp.start < 0 or sp.end >= length:
            raise AnnotationError(f"{where}: span {tuple(sp)} outside 0..{length - 1}")
        if sp.start <= prev_end:
            raise AnnotationError(f"{where}: span {tuple(sp)} overlaps or is out of order")
        prev_end = sp.end


def _natural_key(s: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", s)]


# --- canonical format ------------------------------------------------------

def save_canonical(dataset: Dataset, directory) -> None:
    root = Path(directory)
    (root / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
    lines = [
        f"# split: {dataset.split}",
        f"# classes: {json.dumps(list(dataset.class_names))}",
        f"# meta: {json.dumps(dataset.meta, sort_keys=True)}",
    ]
    for seq in dataset.sequences:
        with open(root / FRAMES_DIR / f"{seq.id}.txt", "w") as fh:
            for row in seq.frames.tolist():
                fh.write(" ".join(map(repr, row)))
                fh.write("\n")
        for sp in seq.spans:
            lines.append(f"{seq.id} {sp.label} {sp.start} {sp.end}")
    (root / ANNOTATION_FILE).write_text("\n".join(lines) + "\n")


def read_frames(path) -> np.ndarray:
    """Parse one canonical frame file."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            try:
                row = [float(v) for v in fields]
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise SchemaError(f"{path}: line {lineno} has {len(row)} values, expected {width}")
            rows.append(row)
    if not rows:
        raise SchemaError(f"{path}: no frames")
    if width % 3:
        raise SchemaError(f"{path}: {width} values per frame is not joints x 3")
    return np.array(rows, dtype=np.float64)


def load_canonical(directory) -> Dataset:
    root = Path(directory)
    if not root.is_dir():
        raise SchemaError(f"{root}: not a directory")
    ann_path = root / ANNOTATION_FILE
    split, classes, meta = "train", [], {}
    spans: Dict[str, List[Span]] = {}
    if ann_path.exists():
        with open(ann_path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].partition(":")
                    key, value = key.strip(), value.strip()
                    try:
                        if key == "split":
                            split = value
                        elif key == "classes":
                            classes = [str(c) for c in json.loads(value)]
                        elif key == "meta":
                            meta = json.loads(value)
                    except json.JSONDecodeError as exc:
                        raise ParseError(str(exc), ann_path, lineno) from None
                    continue
                fields = line.split()
                if len(fields) != 4:
                    raise ParseError(f"expected 'sequence_id class start end', got {line!r}", ann_path, lineno)
                try:
                    sp = Span(int(fields[1]), int(fields[2]), int(fields[3]))
                except ValueError as exc:
                    raise ParseError(str(exc), ann_path, lineno) from None
                spans.setdefault(fields[0], []).append(sp)
    frame_dir = root / FRAMES_DIR
    files = sorted(frame_dir.glob("*.txt"), key=lambda p: _natural_key(p.stem)) if frame_dir.is_dir() else []
    sequences = [
        Sequence(p.stem, read_frames(p), sorted(spans.pop(p.stem, []), key=lambda sp: sp.start)) for p in files
    ]
    if spans:
        raise SchemaError(f"annotations reference unknown sequences: {sorted(spans)}")
    if not classes and sequences:
        top = max((sp.label for s in sequences for sp in s.spans), default=-1)
        classes = [str(i) for i in range(top + 1)]
    return Dataset(sequences, classes, split, meta).validate()


def resolve_split(directory, split: str) -> Path:
    """``dir/<split>`` if it exists, otherwise ``dir`` itself."""
    root = Path(directory)
    sub = root / split
    return sub if sub.is_dir() else root


# --- SHREC2021 adapter -------------------------------------------------------

_SPLIT_WORDS = {"train": ("train",), "test": ("test",)}


def _tokens(line: str) -> List[str]:
    return [t for t in re.split(r"[;,\s]+", line.strip()) if t]


def _find_split_dir(root: Path, split: str) -> Path:
    hits = [p for p in sorted(root.iterdir()) if p.is_dir() and any(w in p.name.lower() for w in _SPLIT_WORDS[split])]
    if not hits:
        raise SchemaError(f"{root}: no directory for the {split} split")
    return hits[0]


def _parse_shrec_frames(path: Path, channels: Optional[int], index_column: Optional[bool]):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            toks = _tokens(line)
            if not toks:
                continue
            try:
                rows.append([float(t) for t in toks])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    if not rows:
        raise SchemaError(f"{path}: no frames")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise SchemaError(f"{path}: frame {i} has {len(r)} values, expected {width}")
    arr = np.array(rows, dtype=np.float64)
    if index_column is None:
        # a leading frame counter: integral, strictly increasing, and dropping
        # it leaves a whole number of joints
        first = arr[:, 0]
        integral = bool(np.all(first == np.round(first)))
        increasing = len(arr) > 1 and bool(np.all(np.diff(first) > 0))
        fits = (width - 1) % 3 == 0 or (width - 1) % 7 == 0
        index_column = integral and fits and (increasing or (width % 3 and width % 7))
    if index_column:
        arr = arr[:, 1:]
    n = arr.shape[1]
    if channels is None:
        if n % 7 == 0 and n % 3 != 0:
            channels = 7
        elif n % 3 == 0:
            channels = 3
        else:
            raise SchemaError(f"{path}: cannot split {n} values per frame into joints")
    if n % channels:
        raise SchemaError(f"{path}: {n} values per frame is not a multiple of {channels}")
    joints = n // channels
    # keep the x, y, z position of every joint, untouched
    pos = arr.reshape(len(arr), joints, channels)[:, :, :3].reshape(len(arr), joints * 3)
    return np.ascontiguousarray(pos), joints, channels, bool(index_column)


def _parse_shrec_annotations(path: Path, one_based: bool):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            toks = _tokens(line)
            if not toks:
                continue
            seq_id, rest = toks[0], toks[1:]
            if len(rest) % 3:
                raise ParseError("expected id followed by (label, start, end) triples", path, lineno)
            triples = []
            for i in range(0, len(rest), 3):
                try:
                    s, e = int(rest[i + 1]), int(rest[i + 2])
                except ValueError as exc:
                    raise ParseError(str(exc), path, lineno) from None
                if one_based:
                    s, e = s - 1, e - 1
                triples.append((rest[i], s, e))
            out[seq_id] = triples
    return out


def load_shrec2021(
    root,
    split: str = "train",
    channels_per_joint: Optional[int] = None,
    index_column: Optional[bool] = None,
    one_based: bool = False,
) -> Dataset:
    """Load one split of the SHREC2021 skeleton release.

    The split directory is the first child of ``root`` whose name contains
    ``train``/``test``; it must hold one annotation file (name containing
    ``annotation``) with lines ``id;label;start;end;label;start;end;...`` and
    one text file per sequence. Delimiters, an optional leading frame-counter
    column and the per-joint channel count (3 for positions, 7 for position +
    quaternion) are detected from the files unless given explicitly; only the
    x, y, z position channels are kept.
    """
    root = Path(root)
    split_dir = _find_split_dir(root, split)
    files = [p for p in split_dir.rglob("*") if p.is_file() and p.suffix in (".txt", ".csv")]
    ann_files = [p for p in files if "annotation" in p.name.lower()]
    if not ann_files:
        raise SchemaError(f"{split_dir}: no annotation file")
    annotations = _parse_shrec_annotations(ann_files[0], one_based)
    seq_files = sorted((p for p in files if p not in ann_files), key=lambda p: _natural_key(p.stem))

    # class vocabulary spans both splits so indices agree between them
    vocab = set()
    for s in ("train", "test"):
        try:
            d = _find_split_dir(root, s)
        except SchemaError:
            continue
        for p in d.rglob("*"):
            if p.is_file() and "annotation" in p.name.lower():
                for triples in _parse_shrec_annotations(p, one_based).values():
                    vocab.update(t[0] for t in triples)
    if all(v.isdigit() for v in vocab):
        class_names = sorted(vocab, key=int)
    else:
        class_names = sorted(vocab)
    index = {c: i for i, c in enumerate(class_names)}

    sequences = []
    joints_seen = set()
    layout = None
    missing = []
    for p in seq_files:
        if p.stem not in annotations:
            missing.append(p.stem)
            continue
        frames, joints, channels, has_index = _parse_shrec_frames(p, channels_per_joint, index_column)
        joints_seen.add(joints)
        layout = (channels, has_index)
        spans = sorted((Span(index[label], s, e) for label, s, e in annotations[p.stem]), key=lambda sp: sp.start)
        sequences.append(Sequence(p.stem, frames, spans))
    if missing:
        raise SchemaError(f"{split_dir}: sequences without annotation: {missing}")
    if len(joints_seen) > 1:
        raise SchemaError(f"{split_dir}: inconsistent joint counts {sorted(joints_seen)}")
    meta = {"source": "shrec2021"}
    if sequences:
        meta.update(num_joints=joints_seen.pop(), channels_per_joint=layout[0], index_column=layout[1])
    return Dataset(sequences, class_names, split, meta).validate()


# --- segments ----------------------------------------------------------------

@dataclass
class Segment:
    frames: np.ndarray  # [T, D]
    labels: np.ndarray  # [T] int

    def __post_init__(self):
        if len(self.frames) != len(self.labels) or len(self.frames) < 1:
            raise SchemaError("segment needs >= 1 frame and one label per frame")

    def __len__(self):
        return len(self.labels)


def derive_detector_labels(num_frames: int, spans: Seq[Span]) -> np.ndarray:
    """1 for frames inside an annotated gesture, 0 elsewhere."""
    check_spans(spans, num_frames, "detector labels")
    labels = np.zeros(num_frames, dtype=np.int64)
    for sp in spans:
        labels[sp.start : sp.end + 1] = 1
    return labels


def extract_segments(dataset: Dataset, kind: str, chunk_length: int = 128) -> List[Segment]:
    """Training units: one segment per annotated span (recognizer) or
    fixed-length chunks with binary gesture labels (detector)."""
    out = []
    for seq in dataset.sequences:
        if kind == "recognizer":
            for sp in seq.spans:
                frames = seq.frames[sp.start : sp.end + 1]
                out.append(Segment(frames, np.full(len(frames), sp.label, dtype=np.int64)))
        elif kind == "detector":
            labels = derive_detector_labels(len(seq), seq.spans)
            for start in range(0, len(seq), chunk_length):
                out.append(Segment(seq.frames[start : start + chunk_length], labels[start : start + chunk_length]))
        else:
            raise ValueError(f"unknown segment kind {kind!r}")
    return out


# --- synthetic streams ---------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 3
    num_joints: int = 4
    train_sequences: int = 60
    test_sequences: int = 20
    gestures_per_sequence: Tuple[int, int] = (2, 4)
    gesture_length: Tuple[int, int] = (24, 40)
    idle_gap: Tuple[int, int] = (30, 60)
    noise: float = 5e-4
    idle_sway: float = 0.02
    seed: int = 7

    def __post_init__(self):
        for name in ("gestures_per_sequence", "gesture_length", "idle_gap"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < (0 if name == "gestures_per_sequence" else 1):
                raise ValueError(f"{name} range {lo}..{hi} is empty or invalid")
        if self.noise < 0 or self.idle_sway < 0:
            raise ValueError("noise amplitudes must be >= 0")
        if not 2 <= self.num_classes <= len(TEMPLATES):
            raise ValueError(f"num_classes must be in 2..{len(TEMPLATES)}")
        if self.num_joints < 1:
            raise ValueError("num_joints must be >= 1")


_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
_RADIUS = 0.5
_GESTURE_CENTER = np.array([0.0, 0.8, 0.0])


def _circle(plane, direction):
    a, b = _PLANES[plane]

    def f(s, phase, turns):
        ang = phase + direction * 2 * np.pi * turns * s
        out = np.zeros((len(s), 3))
        out[:, a] = _RADIUS * np.cos(ang)
        out[:, b] = _RADIUS * np.sin(ang)
        return out

    return f


def _sweep(axis):
    def f(s, phase, turns):
        out = np.zeros((len(s), 3))
        out[:, axis] = _RADIUS * np.sin(2 * np.pi * s)
        return out

    return f


def _zigzag(plane):
    a, b = _PLANES[plane]

    def f(s, phase, turns):
        out = np.zeros((len(s), 3))
        tri = 2 * np.abs(((3 * s) % 1.0) - 0.5) - 0.5
        out[:, a] = _RADIUS * 2 * tri
        out[:, b] = _RADIUS * (2 * s - 1)
        return out

    return f


def _figure_eight(plane):
    a, b = _PLANES[plane]

    def f(s, phase, turns):
        ang = 2 * np.pi * s
        out = np.zeros((len(s), 3))
        out[:, a] = _RADIUS * np.sin(ang)
        out[:, b] = _RADIUS * np.sin(2 * ang) / 2
        return out

    return f


# Class 0 and 2 share their points and differ only in direction of travel, so
# telling them apart needs temporal context. Class 1 stays >= one radius away
# from class 0 in every frame.
TEMPLATES = [
    ("circle_cw_xy", _circle("xy", -1)),
    ("sweep_z", _sweep(2)),
    ("circle_ccw_xy", _circle("xy", +1)),
    ("zigzag_xz", _zigzag("xz")),
    ("figure8_yz", _figure_eight("yz")),
    ("circle_cw_xz", _circle("xz", -1)),
    ("circle_ccw_xz", _circle("xz", +1)),
    ("sweep_x", _sweep(0)),
    ("zigzag_xy", _zigzag("xy")),
    ("circle_cw_yz", _circle("yz", -1)),
    ("circle_ccw_yz", _circle("yz", +1)),
    ("figure8_xy", _figure_eight("xy")),
    ("sweep_y", _sweep(1)),
    ("zigzag_yz", _zigzag("yz")),
    ("figure8_xz", _figure_eight("xz")),
    ("sweep_xz", lambda s, p, t: _sweep(0)(s, p, t) + _sweep(2)(s, p, t)),
    ("sweep_xy", lambda s, p, t: _sweep(0)(s, p, t) + _sweep(1)(s, p, t)),
]


def gesture_trajectory(label: int, length: int, phase: float = 0.0, turns: float = 1.0) -> np.ndarray:
    """Noise-free hand offset from the gesture centre, ``[length, 3]``."""
    s = np.arange(length) / max(length - 1, 1)
    return TEMPLATES[label][1](s, phase, turns)


def generate_synthetic(config: SynthConfig = SynthConfig(), split: str = "train") -> Dataset:
    """Alternating idle gaps and gestures; deterministic in ``(config, split)``.

    Idle frames are a slow sway of the rest pose. A gesture jumps to a
    class-specific trajectory around a raised centre and jumps back at its end.
    Every joint follows the hand rigidly from its own skeleton offset, and
    white noise of amplitude ``noise`` is added to every coordinate.
    """
    split_id = {"train": 0, "test": 1}.get(split, 2)
    skeleton = np.random.default_rng([config.seed, 99]).uniform(-0.1, 0.1, size=(config.num_joints, 3))
    count = config.train_sequences if split == "train" else config.test_sequences
    rng = np.random.default_rng([config.seed, split_id])
    sequences = []
    for i in range(count):
        n_gest = int(rng.integers(config.gestures_per_sequence[0], config.gestures_per_sequence[1] + 1))
        gaps = rng.integers(config.idle_gap[0], config.idle_gap[1] + 1, size=n_gest + 1)
        lengths = rng.integers(config.gesture_length[0], config.gesture_length[1] + 1, size=n_gest)
        labels = rng.integers(0, config.num_classes, size=n_gest)
        total = int(gaps.sum() + lengths.sum())
        t = np.arange(total)[:, None]

        rest = rng.uniform(-0.05, 0.05, size=3)
        periods = rng.uniform(80, 200, size=(2, 3))
        phases = rng.uniform(0, 2 * np.pi, size=(2, 3))
        sway = config.idle_sway * 0.5 * np.sin(2 * np.pi * t / periods[0] + phases[0])
        sway = sway + config.idle_sway * 0.5 * np.sin(2 * np.pi * t / periods[1] + phases[1])
        hand = rest + sway

        spans = []
        pos = int(gaps[0])
        for k in range(n_gest):
            L = int(lengths[k])
            centre = _GESTURE_CENTER + rng.uniform(-0.1, 0.1, size=3)
            traj = gesture_trajectory(int(labels[k]), L, rng.uniform(0, 2 * np.pi), rng.uniform(1.0, 1.5))
            hand[pos : pos + L] = rest + centre + traj
            spans.append(Span(int(labels[k]), pos, pos + L - 1))
            pos += L + int(gaps[k + 1])

        frames = hand[:, None, :] + skeleton[None, :, :]
        if config.noise > 0:
            frames = frames + rng.normal(0.0, config.noise, size=frames.shape)
        sequences.append(Sequence(f"{split}{i:04d}", frames.reshape(total, -1), spans))
    names = [TEMPLATES[c][0] for c in range(config.num_classes)]
    meta = {"source": "synthetic", "num_joints": config.num_joints, "seed": config.seed}
    return Dataset(sequences, names, split, meta).validate()
