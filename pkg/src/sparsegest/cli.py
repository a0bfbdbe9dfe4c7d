"""``sparsegest`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from contextlib import ExitStack
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .analyzer import AnalyzerState
from .config import AppConfig, load_config, override, with_seed
from .data import (
    Dataset,
    generate_synthetic,
    load_canonical,
    load_shrec2021,
    resolve_split,
    save_canonical,
)
from .errors import ConfigError, DataError, NumericError, ParseError, ProtocolError, ShapeError
from .evaluation import EvalReport, evaluate_online
from .model import DETECTOR, RECOGNIZER, count_parameters, load_model, save_model
from .pipeline import ABLATIONS, PRESETS, StreamSession, apply_ablation, with_preset
from .training import train

log = logging.getLogger("sparsegest")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
TRACE_COLUMNS = ("frame", "det_conf", "phase", "reset", "provisional_class", "provisional_conf")


# --- helpers -------------------------------------------------------------------

def _config(args) -> AppConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _load_dataset(path, split: str, fmt: str) -> Dataset:
    root = Path(path)
    if not root.exists():
        raise DataError(f"data directory {root} does not exist")
    if fmt == "shrec2021":
        return load_shrec2021(root, split)
    return load_canonical(resolve_split(root, split))


def _load_typed(path, kind: str):
    if path is None:
        raise ConfigError(f"--{kind} model file is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"model file {p} does not exist")
    model = load_model(p)
    if model.config.kind != kind:
        raise ConfigError(f"{p} holds a {model.config.kind}, expected a {kind}")
    return model


def _pipeline(cfg: AppConfig, args):
    pc = cfg.pipeline_config()
    if getattr(args, "preset", None):
        pc = with_preset(pc, args.preset)
    pc = override_pipeline(pc, args)
    if getattr(args, "ablate", None):
        pc = apply_ablation(pc, args.ablate)
    return pc


def override_pipeline(pc, args):
    values = {}
    if getattr(args, "activation", None) is not None:
        values["activation_threshold"] = args.activation
    if getattr(args, "deactivation", None) is not None:
        values["deactivation_threshold"] = args.deactivation
    if getattr(args, "min_wait", None) is not None:
        values["min_wait_frames"] = args.min_wait
    if not values:
        return pc
    try:
        return dataclasses.replace(pc, **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _models_for(args, pc):
    detector = None if pc.disable_detector and args.detector is None else _load_typed(args.detector, DETECTOR)
    recognizer = _load_typed(args.recognizer, RECOGNIZER)
    if pc.disable_detector:
        detector = None
    if detector is not None and detector.config.input_dim != recognizer.config.input_dim:
        raise ConfigError("detector and recognizer expect different input sizes")
    return detector, recognizer


# --- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "training", epochs=args.epochs, workers=args.workers)
    dataset = _load_dataset(args.data, "train", args.data_format)
    if not dataset.sequences:
        raise DataError(f"{args.data}: no training sequences")
    seed = cfg.training.seed
    if args.kind == DETECTOR:
        model_cfg = cfg.model.detector(dataset.input_dim, seed)
    else:
        model_cfg = cfg.model.recognizer(dataset.input_dim, cfg.model.num_classes or dataset.num_classes, seed)
    if model_cfg.input_dim != dataset.input_dim:
        raise ConfigError(f"[model] input_dim {model_cfg.input_dim} does not match the data ({dataset.input_dim})")

    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    with open(log_path, "w") as log_fh:
        def on_epoch(m):
            log_fh.write(json.dumps(m.to_record()) + "\n")
            log_fh.flush()
            log.info("epoch %d  loss %.5f  acc %.4f  lr %.2e", m.epoch, m.loss, m.accuracy, m.lr)

        model, _ = train(args.kind, dataset, cfg.training, model_cfg, on_epoch)
    save_model(model, args.out, dtype=args.dtype)
    print(f"wrote {args.kind} to {args.out} (log: {log_path})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    pc = _pipeline(cfg, args)
    detector, recognizer = _models_for(args, pc)
    dataset = _load_dataset(args.data, "test", args.data_format)
    report = evaluate_online(
        detector, recognizer, dataset, pc,
        precision=args.precision,
        keep_traces=args.traces is not None,
        fpr_denominator=args.fpr_denominator,
        jaccard_aggregation=args.jaccard,
    )
    if args.report:
        report.save(args.report)
    if args.traces:
        _write_eval_traces(report, args.traces)
    if args.format == "json":
        print(json.dumps({**report.metrics(), "environment": report.environment}))
    else:
        print(report.format_table())
    return EXIT_OK


def _write_eval_traces(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("sequence",) + TRACE_COLUMNS)
        for seq in report.sequences:
            for tr in seq.traces or []:
                writer.writerow([seq.id] + list(_trace_row(tr).values()))


def _trace_row(tr) -> dict:
    return {
        "frame": tr.frame,
        "det_conf": "" if tr.det_conf is None else tr.det_conf,
        "phase": tr.phase,
        "reset": int(tr.reset),
        "provisional_class": "" if tr.provisional is None else tr.provisional[0],
        "provisional_conf": "" if tr.provisional is None else tr.provisional[1],
    }


def _parse_frame_line(line: str, lineno: int, width: Optional[int], source: str) -> np.ndarray:
    try:
        values = np.array([float(v) for v in line.split()], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(str(exc), source, lineno) from None
    if width is not None and values.size != width:
        raise ParseError(f"{values.size} values, expected {width}", source, lineno)
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite value", source, lineno)
    return values


def cmd_run(args) -> int:
    cfg = _config(args)
    pc = _pipeline(cfg, args)
    detector, recognizer = _models_for(args, pc)
    width = recognizer.config.input_dim
    dtype = np.float32 if args.precision == "float32" else np.float64
    detector = detector.astype(dtype) if detector is not None else None
    recognizer = recognizer.astype(dtype)
    session = StreamSession(detector, recognizer, pc)
    out = sys.stdout
    emit_traces = not args.events_only

    with ExitStack() as stack:
        if args.input == "-":
            source, fh = "<stdin>", sys.stdin
        else:
            path = Path(args.input)
            if not path.exists():
                raise DataError(f"input {path} does not exist")
            source, fh = str(path), stack.enter_context(open(path))
        plot = None
        if args.plot_data:
            plot = csv.writer(stack.enter_context(open(args.plot_data, "w", newline="")))
            header = list(TRACE_COLUMNS) + [f"p{c}" for c in range(recognizer.config.num_classes)]
            plot.writerow(header)

        def emit(record):
            out.write(json.dumps(record) + "\n")
            out.flush()

        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            frame = _parse_frame_line(line, lineno, width, source).astype(dtype)
            try:
                event, trace = session.process_frame(frame)
            except NumericError as exc:
                raise NumericError(f"{source}, line {lineno}: {exc}") from exc
            if emit_traces:
                emit(trace.to_record())
            if event is not None:
                emit(event.to_record())
            if plot is not None:
                probs = [""] * recognizer.config.num_classes if trace.probs is None else [float(p) for p in trace.probs]
                plot.writerow(list(_trace_row(trace).values()) + probs)
        event = session.finalize()
        if event is not None:
            emit(event.to_record())
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    for split in ("train", "test"):
        save_canonical(generate_synthetic(cfg.synth, split), out / split)
    print(f"wrote synthetic dataset to {out} (seed {cfg.synth.seed})")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _config(args)
    counts = count_parameters(cfg.model.detector(), cfg.model.recognizer())
    for name in ("detector", "recognizer", "idle", "busy"):
        print(f"{name:<11}{getattr(counts, name):>14,}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    base = _pipeline(cfg, argparse.Namespace(preset=args.preset, ablate=None))
    dataset = _load_dataset(args.data, "test", args.data_format)
    detector = _load_typed(args.detector, DETECTOR)
    recognizer = _load_typed(args.recognizer, RECOGNIZER)
    rows = []
    for name in ["full"] + list(ABLATIONS):
        pc = base if name == "full" else apply_ablation(base, [name])
        report = evaluate_online(detector, recognizer, dataset, pc, precision=args.precision)
        rows.append((name, report))
    if args.report:
        with open(args.report, "w") as fh:
            for name, report in rows:
                fh.write(json.dumps({"ablation": name, **report.metrics()}) + "\n")
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"
    print(f"{'removed':<17}{'DR':>8}{'FPR':>8}{'JI':>8}{'latency':>9}")
    for name, r in rows:
        print(f"{name:<17}{fmt(r.detection_rate):>8}{fmt(r.false_positive_rate):>8}"
              f"{fmt(r.jaccard_index):>8}{fmt(r.early_detection_latency_frames):>9}")
    return EXIT_OK


def calibrate_alpha(dataset: Dataset, analyzer_config, alphas: Sequence[float], tolerance: int = 3):
    """Sweep the analyzer sensitivity over ``dataset``.

    A reset is a hit when it lands within ``tolerance`` frames of an annotated
    gesture onset or end. Returns one row per alpha and the recommended alpha
    (best F1 of resets against boundaries), or ``None`` when no alpha ever
    fires a reset.
    """
    rows = []
    for alpha in alphas:
        acfg = dataclasses.replace(analyzer_config, alpha=alpha)
        resets = hits = boundaries = found = 0
        for seq in dataset.sequences:
            state = AnalyzerState(acfg, seq.frames.shape[1] // 3)
            fired = np.array([state.step(f) for f in seq.frames], dtype=bool)
            frames = np.flatnonzero(fired)
            marks = np.array(sorted({b for sp in seq.spans for b in (sp.start, sp.end + 1) if b < len(seq)}), dtype=int)
            resets += frames.size
            boundaries += marks.size
            if frames.size and marks.size:
                gap = np.abs(frames[:, None] - marks[None, :])
                hits += int((gap.min(axis=1) <= tolerance).sum())
                found += int((gap.min(axis=0) <= tolerance).sum())
        precision = hits / resets if resets else None
        recall = found / boundaries if boundaries else None
        f1 = (2 * precision * recall / (precision + recall)) if precision and recall else 0.0
        rows.append({"alpha": alpha, "resets": resets, "boundary_hit_rate": precision,
                     "boundary_recall": recall, "f1": f1})
    if all(r["resets"] == 0 for r in rows):
        return rows, None
    best = max(rows, key=lambda r: (r["f1"], -r["resets"]))
    return rows, best["alpha"]


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    dataset = _load_dataset(args.data, "train", args.data_format)
    if not dataset.sequences:
        raise DataError(f"{args.data}: no sequences to calibrate on")
    seqs = dataset.sequences
    if args.sample and args.sample < len(seqs):
        idx = np.sort(np.random.default_rng(cfg.training.seed).choice(len(seqs), args.sample, replace=False))
        seqs = [seqs[i] for i in idx]
    sample = Dataset(seqs, dataset.class_names, dataset.split, dataset.meta)
    try:
        alphas = [float(a) for a in args.alphas.split(",")]
    except ValueError:
        raise ConfigError(f"--alphas must be comma-separated numbers, got {args.alphas!r}") from None
    rows, best = calibrate_alpha(sample, cfg.analyzer, alphas, args.tolerance)
    fmt = lambda v: "n/a" if v is None else f"{v:.3f}"
    print(f"{'alpha':>7}{'resets':>8}{'hit rate':>10}{'recall':>8}{'F1':>7}")
    for r in rows:
        print(f"{r['alpha']:>7g}{r['resets']:>8}{fmt(r['boundary_hit_rate']):>10}{fmt(r['boundary_recall']):>8}{r['f1']:>7.3f}")
    if best is None:
        print("recommended alpha: unconstrained (no alpha fires a reset on this data)")
    else:
        print(f"recommended alpha: {best:g}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_common(p, data=True, seed=True):
    p.add_argument("--config", help="INI configuration file")
    if seed:
        p.add_argument("--seed", type=int, help="overrides the config and DUO_SEED")
    if data:
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--data-format", choices=("canonical", "shrec2021"), default="canonical")


def _add_pipeline(p):
    p.add_argument("--preset", choices=sorted(PRESETS), help="threshold preset")
    p.add_argument("--activation", type=float, help="activation threshold")
    p.add_argument("--deactivation", type=float, help="deactivation threshold")
    p.add_argument("--min-wait", type=int, help="minimum frames before deactivation")
    p.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), help="remove a component (repeatable)")
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsegest", description="Sparse streaming gesture recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a detector or recognizer")
    p.add_argument("kind", choices=(DETECTOR, RECOGNIZER))
    _add_common(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int, help="threads for batch gradients (result is identical)")
    p.add_argument("--log", help="training log (default: <out>.log.jsonl)")
    p.add_argument("--dtype", choices=("f4", "f8"), default="f4", help="stored weight precision")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="online evaluation on the test split")
    _add_common(p, seed=False)
    p.add_argument("--detector")
    p.add_argument("--recognizer", required=True)
    _add_pipeline(p)
    p.add_argument("--report", help="write the report as line-delimited JSON")
    p.add_argument("--traces", help="write per-frame traces as CSV")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--fpr-denominator", choices=("ground_truth", "predictions"), default="ground_truth")
    p.add_argument("--jaccard", choices=("per_sequence", "pooled"), default="per_sequence",
                   help="average per sequence, or pool frame counts over the whole set")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="stream frames through the pipeline")
    _add_common(p, data=False, seed=False)
    p.add_argument("--detector")
    p.add_argument("--recognizer", required=True)
    p.add_argument("--input", default="-", help="frame file, one frame per line ('-' for stdin)")
    _add_pipeline(p)
    p.add_argument("--events-only", action="store_true", help="suppress trace lines")
    p.add_argument("--plot-data", help="write per-frame confidences as CSV for plotting")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_common(p, data=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("params", help="print trainable parameter counts")
    _add_common(p, data=False, seed=False)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("ablate", help="evaluate the full pipeline and each ablation")
    _add_common(p, seed=False)
    p.add_argument("--detector", required=True)
    p.add_argument("--recognizer", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")
    p.add_argument("--report")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("calibrate", help="sweep the motion analyzer sensitivity")
    _add_common(p)
    p.add_argument("--alphas", default="0.5,0.8,0.95,1.5,2,3", help="comma-separated values to try")
    p.add_argument("--sample", type=int, default=20, help="training sequences to sample (0 = all)")
    p.add_argument("--tolerance", type=int, default=3, help="frames from a boundary that count as a hit")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, ProtocolError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
