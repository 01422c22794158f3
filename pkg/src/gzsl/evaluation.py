"""GZSL evaluation: per-class top-1, harmonic mean and the seen/unseen AUSUC sweep."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .pipeline import Pipeline, pipeline_scores

log = logging.getLogger(__name__)


def per_class_top1(preds, labels, class_set) -> float:
    """Mean over ``class_set`` of each class's fraction of correct predictions.

    Classes with no samples in ``labels`` are left out of the mean.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    accs = []
    empty = []
    for c in sorted(int(c) for c in class_set):
        mask = labels == c
        if not mask.any():
            empty.append(c)
            continue
        accs.append(float((preds[mask] == c).mean()))
    if empty:
        log.warning("classes without test samples excluded from per-class accuracy: %s", empty)
    if not accs:
        return 0.0
    return float(np.mean(accs))


def h_mean(acc_seen: float, acc_unseen: float) -> float:
    if acc_seen + acc_unseen == 0:
        return 0.0
    return 2.0 * acc_seen * acc_unseen / (acc_seen + acc_unseen)


def shifted_argmax(scores: np.ndarray, seen_mask: np.ndarray, lam: float) -> np.ndarray:
    """Argmax after subtracting ``lam`` from every seen-class score (``lam`` may be +-inf)."""
    if lam == math.inf:
        return np.where(seen_mask[None, :], -np.inf, scores).argmax(axis=1)
    if lam == -math.inf:
        return np.where(seen_mask[None, :], scores, -np.inf).argmax(axis=1)
    if lam == 0:
        return scores.argmax(axis=1)
    return (scores - lam * seen_mask[None, :]).argmax(axis=1)


def curve_area(points) -> float:
    """Trapezoid area under (acc_seen, acc_unseen) points, ordered along acc_seen.

    Ties in acc_seen are ordered by decreasing acc_unseen, which traces the
    staircase a monotone sweep produces.
    """
    pts = sorted(((float(s), float(u)) for s, u in points), key=lambda p: (p[0], -p[1]))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def default_grid(scores: np.ndarray, n: int = 201) -> np.ndarray:
    """Symmetric grid over [-max|score|, max|score|]; the middle point is exactly 0."""
    finite = np.abs(scores[np.isfinite(scores)])
    m = float(finite.max()) if finite.size else 1.0
    half = (n - 1) // 2
    return m * np.arange(-half, half + 1) / max(half, 1)


@dataclass
class CurvePoint:
    lam: float
    acc_seen: float
    acc_unseen: float


def sweep(scores_seen: np.ndarray, labels_seen: np.ndarray, scores_unseen: np.ndarray,
          labels_unseen: np.ndarray, seen_mask: np.ndarray, lam_grid) -> list[CurvePoint]:
    """Per-class seen/unseen accuracy for every shift in ``lam_grid`` plus the +-inf limits."""
    seen_classes = np.flatnonzero(seen_mask)
    unseen_classes = np.flatnonzero(~seen_mask)
    lams = sorted(set(float(l) for l in lam_grid) | {-math.inf, math.inf})
    out = []
    for lam in lams:
        a_s = per_class_top1(shifted_argmax(scores_seen, seen_mask, lam), labels_seen, seen_classes)
        a_u = per_class_top1(shifted_argmax(scores_unseen, seen_mask, lam), labels_unseen, unseen_classes)
        out.append(CurvePoint(lam, a_s, a_u))
    return out


def ausuc_from_scores(scores_seen, labels_seen, scores_unseen, labels_unseen, seen_mask,
                      lam_grid=None) -> tuple[float, list[CurvePoint]]:
    if lam_grid is None:
        lam_grid = default_grid(np.vstack([scores_seen, scores_unseen]))
    if len(lam_grid) == 0:
        raise ValueError("lambda grid is empty")
    curve = sweep(scores_seen, labels_seen, scores_unseen, labels_unseen, seen_mask, lam_grid)
    return curve_area((p.acc_seen, p.acc_unseen) for p in curve), curve


def ausuc(pipeline: Pipeline, x_seen, y_seen, x_unseen, y_unseen, lam_grid=None,
          mode: str | None = None) -> tuple[float, list[CurvePoint]]:
    mode = mode or pipeline.mode
    if mode == "zsl":
        mode = "gzsl_plain"
    return ausuc_from_scores(pipeline_scores(pipeline, x_seen, mode), np.asarray(y_seen),
                             pipeline_scores(pipeline, x_unseen, mode), np.asarray(y_unseen),
                             pipeline.seen_mask, lam_grid)


@dataclass
class EvalReport:
    acc_seen: float
    acc_unseen: float
    h_mean: float
    ausuc: float
    curve: list[CurvePoint] = field(default_factory=list)
    mode: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["curve"] = [[_num(p.lam), p.acc_seen, p.acc_unseen] for p in self.curve]
        return json.dumps(d, indent=2) + "\n"

    def write(self, json_path: str | os.PathLike, csv_path: str | os.PathLike) -> None:
        with open(json_path, "w") as fh:
            fh.write(self.to_json())
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "acc_seen", "acc_unseen"])
            for p in self.curve:
                w.writerow([_num(p.lam), repr(p.acc_seen), repr(p.acc_unseen)])


def _num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def full_report(pipeline: Pipeline, ds: Dataset, lam_grid=None, mode: str | None = None) -> EvalReport:
    """GZSL protocol: predictions over all classes, per-class accuracy per domain, H-mean, AUSUC."""
    if len(ds.test_seen_idx) == 0 or len(ds.test_unseen_idx) == 0:
        raise ValueError("full_report needs non-empty test_seen_idx and test_unseen_idx")
    mode = mode or pipeline.mode
    xs, ys = ds.visual[ds.test_seen_idx], ds.labels[ds.test_seen_idx]
    xu, yu = ds.visual[ds.test_unseen_idx], ds.labels[ds.test_unseen_idx]
    ps = pipeline_scores(pipeline, xs, mode).argmax(axis=1)
    pu = pipeline_scores(pipeline, xu, mode).argmax(axis=1)
    a_s = per_class_top1(ps, ys, ds.seen_classes)
    a_u = per_class_top1(pu, yu, ds.unseen_classes)
    area, curve = ausuc(pipeline, xs, ys, xu, yu, lam_grid, mode)
    return EvalReport(a_s, a_u, h_mean(a_s, a_u), area, curve, mode)
