"""Diagnosis metrics and the full-vs-selected comparison report."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .datagen import TransientCase
from .errors import ShapeError, ValidationError
from .model import TrainedModel, predict

UNDEFINED = "undefined"


def _labels(x) -> np.ndarray:
    return np.asarray(x).ravel()


def accuracy(preds, truth) -> float:
    p, t = _labels(preds), _labels(truth)
    if p.shape != t.shape or p.size == 0:
        raise ShapeError("accuracy needs equal non-empty label vectors", p.shape, t.shape)
    return float(np.mean(p == t))


def micro_f1(preds, truth, classes: Sequence | None = None) -> float:
    """F1 over true/false positive and false negative counts pooled across classes."""
    p, t = _labels(preds), _labels(truth)
    if p.size == 0 or t.size == 0:
        raise ValidationError("micro_f1 of empty input")
    if p.shape != t.shape:
        raise ShapeError("micro_f1 needs equal-length label vectors", p.shape, t.shape)
    if classes is None:
        classes = sorted(set(p.tolist()) | set(t.tolist()))
    known = set(classes)
    stray = (set(p.tolist()) | set(t.tolist())) - known
    if stray:
        raise ValidationError(f"labels outside the declared classes: {sorted(stray)}")
    tp = fp = fn = 0
    for c in classes:
        tp += int(np.sum((p == c) & (t == c)))
        fp += int(np.sum((p == c) & (t != c)))
        fn += int(np.sum((p != c) & (t == c)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def sse_avg(sizes_pred, sizes_true) -> float:
    a = np.asarray(sizes_pred, dtype=float).ravel()
    b = np.asarray(sizes_true, dtype=float).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ShapeError("sse_avg needs equal non-empty vectors", a.shape, b.shape)
    return float(np.sum((a - b) ** 2) / a.size)


def argmax_label(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lower class index
    return np.argmax(np.asarray(probs), axis=-1)


@dataclass
class Metrics:
    accuracy: float
    micro_f1: float
    sse_avg: float
    n_cases: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model: TrainedModel, cases: Sequence[TransientCase]) -> Metrics:
    probs, sizes = predict(model, cases)
    pred = argmax_label(probs)
    truth = np.array([c.label.class_index for c in cases])
    diam = np.array([c.label.diameter for c in cases])
    return Metrics(accuracy(pred, truth), micro_f1(pred, truth, range(model.arch.num_classes)),
                   sse_avg(sizes, diam), len(cases))


def relative_change(full: float, selected: float):
    """Signed percentage change from ``full`` to ``selected`` (UNDEFINED when full is 0)."""
    if full == 0:
        return UNDEFINED
    return (selected - full) / full * 100.0


@dataclass
class ComparisonReport:
    metrics_full: Metrics
    metrics_selected: Metrics
    relative_errors: dict
    iterations_full: int
    iterations_selected: int
    iteration_ratio: float | str
    wall_time_full: float | None = None
    wall_time_selected: float | None = None
    selected_channels: list = field(default_factory=list)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "metrics_full": self.metrics_full.to_dict(),
            "metrics_selected": self.metrics_selected.to_dict(),
            "relative_errors_percent": dict(self.relative_errors),
            "iterations_full": self.iterations_full,
            "iterations_selected": self.iterations_selected,
            "iteration_ratio": self.iteration_ratio,
            "selected_channels": list(self.selected_channels),
        }
        if include_wall_time:
            d["wall_time_full"] = self.wall_time_full
            d["wall_time_selected"] = self.wall_time_selected
        return d


def compare_runs(full, selected, selected_channels: Sequence[str] = ()) -> ComparisonReport:
    """Relative change of each metric, with iteration counts taken from the two logs.

    ``full`` and ``selected`` are (Metrics, TrainLog) pairs; a log may be
    None, in which case its iteration count is reported as 0.
    """
    (mf, log_f), (ms, log_s) = full, selected
    if mf.n_cases != ms.n_cases:
        raise ValidationError(f"runs evaluated on different test splits ({mf.n_cases} vs {ms.n_cases} cases)")
    rel = {
        "sse_avg": relative_change(mf.sse_avg, ms.sse_avg),
        "micro_f1": relative_change(mf.micro_f1, ms.micro_f1),
        "accuracy": relative_change(mf.accuracy, ms.accuracy),
    }
    it_f = log_f.final_iteration if log_f is not None else 0
    it_s = log_s.final_iteration if log_s is not None else 0
    ratio = it_s / it_f if it_f else UNDEFINED

    def wall(lg):
        return lg.records[-1].wall_time if lg is not None and lg.records else None

    return ComparisonReport(mf, ms, rel, it_f, it_s, ratio, wall(log_f), wall(log_s),
                            list(selected_channels))


def _pct(v) -> str:
    return v if isinstance(v, str) else f"{v:+.2f}%"


def render_markdown(report: ComparisonReport, recovery: dict | None = None,
                    n_full: int | None = None) -> str:
    mf, ms = report.metrics_full, report.metrics_selected
    n_sel = len(report.selected_channels)
    full_label = f"Total {n_full} parameters" if n_full else "All parameters"
    lines = [
        "# Diagnosis model comparison",
        "",
        "## Test-split performance",
        "",
        "| Input data | SSE (average) | Micro-F1 | Accuracy |",
        "|---|---|---|---|",
        f"| {full_label} | {mf.sse_avg:.3f} | {mf.micro_f1:.3f} | {mf.accuracy:.3f} |",
        f"| Top {n_sel} significant parameters | {ms.sse_avg:.3f} | {ms.micro_f1:.3f} | {ms.accuracy:.3f} |",
        f"| Relative error | {_pct(report.relative_errors['sse_avg'])} | "
        f"{_pct(report.relative_errors['micro_f1'])} | {_pct(report.relative_errors['accuracy'])} |",
        "",
        "## Training",
        "",
        f"- iterations to termination: {report.iterations_full} (all) vs "
        f"{report.iterations_selected} (selected)",
    ]
    if isinstance(report.iteration_ratio, float):
        lines.append(f"- iteration ratio: {report.iteration_ratio:.3f}")
    if report.wall_time_full is not None and report.wall_time_selected is not None:
        lines.append(f"- training wall time: {report.wall_time_full:.1f} s vs "
                     f"{report.wall_time_selected:.1f} s")
    if recovery:
        lines += ["", "## Selected parameters", "",
                  f"- informative among selected: {recovery['n_informative']}/{recovery['k']} "
                  f"({recovery['fraction']:.3f})", ""]
        lines += [f"{i + 1}. {name}{'' if flag else ' (decoy)'}"
                  for i, (name, flag) in enumerate(zip(recovery["selected"], recovery["flags"]))]
    return "\n".join(lines) + "\n"


def finite_or_marker(v):
    return v if isinstance(v, str) or math.isfinite(v) else UNDEFINED
