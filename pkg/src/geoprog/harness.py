"""Benchmark loading, scoring, and end-to-end evaluation.

Dataset format: JSON lines, one record per line::

    {"scene": id, "task": "GRD|CNT|MES_H|MES_D|CMP|SPR", "query": text,
     "answer": number|text|null, "gt_mask": relpath?, "view": {origin,res,w,h}}

GT masks are PNG bitmaps on the record's declared view grid. Metrics:
grounding uses IoU with a localization hit at IoU >= 0.15; counting and
measuring use mean absolute error; comparison and yes/no use exact match
after case-fold/trim.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationFailed, GridMismatch, MalformedRecord
from .grids import Segment, TopDownView, load_mask_png
from .programs import execute_program, generate_program

TASKS = ("GRD", "CNT", "MES_H", "MES_D", "CMP", "SPR")
IOU_HIT_THRESHOLD = 0.15


@dataclass
class TaskRecord:
    scene: str
    task: str
    query: str
    answer: object            # float for CNT/MES, str for CMP/SPR, None for GRD
    view: TopDownView
    gt_mask: np.ndarray | None = None
    gt_mask_path: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise MalformedRecord(f"unknown task {self.task!r}")
        if self.task == "GRD":
            if self.gt_mask is None and self.gt_mask_path is None:
                raise MalformedRecord("GRD record needs a gt_mask")
        elif self.task in ("CNT", "MES_H", "MES_D"):
            if not isinstance(self.answer, (int, float)) or isinstance(self.answer, bool):
                raise MalformedRecord(
                    f"{self.task} answer must be a number, got {self.answer!r}")
        elif self.task == "SPR":
            if str(self.answer).strip().casefold() not in ("yes", "no"):
                raise MalformedRecord(f"SPR answer must be yes/no, got {self.answer!r}")
        elif self.task == "CMP":
            if not isinstance(self.answer, str):
                raise MalformedRecord(f"CMP answer must be text, got {self.answer!r}")

    def to_json_dict(self):
        d = {"scene": self.scene, "task": self.task, "query": self.query,
             "answer": self.answer, "view": self.view.to_json_dict()}
        if self.gt_mask_path is not None:
            d["gt_mask"] = self.gt_mask_path
        return d


def load_dataset(path) -> list:
    """Read and validate a JSON-lines benchmark file; masks load eagerly."""
    root = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"not valid JSON: {exc}", line_no) from exc
            try:
                view = TopDownView.from_json_dict(d["view"])
                rec = TaskRecord(scene=str(d["scene"]), task=d["task"],
                                 query=d["query"], answer=d.get("answer"),
                                 view=view, gt_mask_path=d.get("gt_mask"))
            except (KeyError, TypeError, ValueError, MalformedRecord) as exc:
                raise MalformedRecord(str(exc), line_no) from exc
            if rec.gt_mask_path is not None:
                mask_file = os.path.join(root, rec.gt_mask_path)
                try:
                    rec.gt_mask = load_mask_png(mask_file, view)
                except (OSError, GridMismatch) as exc:
                    raise MalformedRecord(f"gt mask: {exc}", line_no) from exc
            records.append(rec)
    return records


def save_dataset(records, path, masks_subdir="masks"):
    """Write records as JSON lines, dumping in-memory GT masks as PNGs."""
    from .grids import save_mask_png
    root = os.path.dirname(os.path.abspath(path))
    os.makedirs(os.path.join(root, masks_subdir), exist_ok=True)
    with open(path, "w") as f:
        for i, rec in enumerate(records):
            if rec.gt_mask is not None and rec.gt_mask_path is None:
                rel = os.path.join(masks_subdir, f"gt_{i:04d}.png")
                seg = Segment(rec.view, rec.gt_mask, provenance="gt")
                save_mask_png(seg, os.path.join(root, rel))
                rec.gt_mask_path = rel
            f.write(json.dumps(rec.to_json_dict(), sort_keys=True) + "\n")


def compute_iou(pred, gt_mask) -> float:
    """IoU between a predicted segment (or None) and a GT mask."""
    if pred is None:
        return 0.0
    if isinstance(pred, Segment):
        if pred.mask.shape != gt_mask.shape:
            raise GridMismatch("prediction and GT mask shapes differ")
        pred_mask = pred.mask
    else:
        pred_mask = np.asarray(pred, dtype=bool)
        if pred_mask.shape != gt_mask.shape:
            raise GridMismatch("prediction and GT mask shapes differ")
    union = int(np.sum(pred_mask | gt_mask))
    if union == 0:
        return 1.0  # both empty
    return float(np.sum(pred_mask & gt_mask)) / union


@dataclass
class ScoredRow:
    index: int
    task: str
    query: str
    answered: bool
    generated: bool
    correct: bool | None = None   # GRD hit / exact match; None for pure-MAE rows
    iou: float | None = None
    abs_error: float | None = None
    predicted: object = None


def score_task(record: TaskRecord, predicted, index=0, generated=True,
               none_policy="skip", penalty=None) -> ScoredRow:
    """Score one record. ``none_policy``: unanswered queries are excluded
    from MAE ("skip", tallied separately) or charged ``penalty`` ("penalty")."""
    row = ScoredRow(index=index, task=record.task, query=record.query,
                    answered=predicted is not None, generated=generated,
                    predicted=_summarize(predicted))
    if record.task == "GRD":
        pred = predicted if isinstance(predicted, Segment) else None
        row.iou = compute_iou(pred, record.gt_mask)
        row.correct = row.iou >= IOU_HIT_THRESHOLD
    elif record.task in ("CNT", "MES_H", "MES_D"):
        if isinstance(predicted, (int, float)) and not isinstance(predicted, bool):
            row.abs_error = abs(float(predicted) - float(record.answer))
        elif none_policy == "penalty":
            row.abs_error = float(penalty if penalty is not None
                                  else abs(float(record.answer)))
    else:  # SPR, CMP: exact match after normalization
        want = str(record.answer).strip().casefold()
        got = str(predicted).strip().casefold() if isinstance(predicted, str) else None
        row.correct = got == want
    return row


def _summarize(value):
    if isinstance(value, Segment):
        return f"Segment({value.pixel_count} px)"
    if value is None or isinstance(value, (int, float, str, bool)):
        return value
    return type(value).__name__


@dataclass
class MetricsReport:
    per_task: dict            # task -> {metric: value, counts}
    rows: list                # ScoredRow, in record order
    none_policy: str

    def to_json_dict(self):
        return {"none_policy": self.none_policy, "per_task": self.per_task}

    def save(self, json_path, csv_path=None):
        with open(json_path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
        if csv_path:
            with open(csv_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["index", "task", "query", "generated",
                                 "answered", "correct", "iou", "abs_error",
                                 "predicted"])
                for r in self.rows:
                    writer.writerow([r.index, r.task, r.query, r.generated,
                                     r.answered, r.correct, r.iou, r.abs_error,
                                     r.predicted])


def aggregate(rows, none_policy="skip") -> MetricsReport:
    per_task = {}
    for task in TASKS:
        trows = [r for r in rows if r.task == task]
        if not trows:
            continue
        stats = {
            "count": len(trows),
            "none_count": sum(1 for r in trows if not r.answered),
            "generation_success_rate":
                100.0 * sum(r.generated for r in trows) / len(trows),
        }
        if task == "GRD":
            stats["localization_accuracy"] = \
                100.0 * sum(r.correct for r in trows) / len(trows)
            stats["mean_iou"] = float(np.mean([r.iou for r in trows]))
        elif task in ("CNT", "MES_H", "MES_D"):
            errs = [r.abs_error for r in trows if r.abs_error is not None]
            stats["mae"] = float(np.mean(errs)) if errs else None
            stats["scored_count"] = len(errs)
        else:
            stats["accuracy"] = 100.0 * sum(bool(r.correct) for r in trows) / len(trows)
        per_task[task] = stats
    return MetricsReport(per_task=per_task, rows=sorted(rows, key=lambda r: r.index),
                         none_policy=none_policy)


def run_benchmark(records, engine, generator, ices, n_ice=10,
                  timeout_s=60.0, jobs=1, none_policy="skip",
                  penalty=None, trace_root=None) -> MetricsReport:
    """Generate, execute, and score every record; order-independent reduction."""

    def run_one(item):
        index, record = item
        generated = True
        value = None
        try:
            ast = generate_program(record.query, generator, ices, n_ice)
        except GenerationFailed:
            generated = False
            ast = None
        if ast is not None:
            trace_dir = None
            if trace_root is not None:
                trace_dir = os.path.join(str(trace_root), f"q{index:04d}")
                os.makedirs(trace_dir, exist_ok=True)
            value, trace = execute_program(ast, engine, timeout_s=timeout_s,
                                           trace_dir=trace_dir)
            if trace_dir is not None:
                with open(os.path.join(trace_dir, "trace.json"), "w") as f:
                    json.dump(trace.to_json_dict(), f, indent=2)
        return score_task(record, value, index=index, generated=generated,
                          none_policy=none_policy, penalty=penalty)

    items = list(enumerate(records))
    if jobs <= 1:
        rows = [run_one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_one, items))
    return aggregate(rows, none_policy=none_policy)
