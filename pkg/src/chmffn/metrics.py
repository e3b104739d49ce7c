"""Confusion counting, accuracy metrics, change-map rendering, and JSON
report emission for binary change detection. Changed pixels are the positive
class throughout.

Two kappa coefficients are reported. ``kappa_standard`` is Cohen's kappa with
chance agreement p_e = [(tp+fp)(tp+fn) + (tn+fn)(tn+fp)] / N^2; it is the
headline value. ``kappa_paper`` uses the alternative chance term
p_e = (tp*fn + tp*fp + tn*fn + tn*fp) / N^2, which factors as
(tp+tn)(fp+fn) / N^2; both are kept so numbers can be compared against either
convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from .errors import UndefinedMetricError

__all__ = [
    "ConfusionCounts",
    "MetricsReport",
    "ChangeMap",
    "confusion",
    "oa",
    "kappa_standard",
    "kappa_paper",
    "precision",
    "recall",
    "f1",
    "compute_report",
    "render_change_map",
    "save_change_map",
    "emit_report",
    "format_report",
    "CLASS_TP",
    "CLASS_TN",
    "CLASS_FP",
    "CLASS_FN",
    "CLASS_COLORS",
]

CLASS_TP = 0
CLASS_TN = 1
CLASS_FP = 2
CLASS_FN = 3

CLASS_COLORS = {
    CLASS_TP: (255, 255, 255),
    CLASS_TN: (0, 0, 0),
    CLASS_FP: (0, 255, 0),
    CLASS_FN: (255, 0, 0),
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    oa: float
    kc_standard: float
    kc_paper: float
    pr: float
    re: float
    f1: float

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.to_dict(),
            "metrics": {
                "oa": self.oa,
                "kc_standard": self.kc_standard,
                "kc_paper": self.kc_paper,
                "pr": self.pr,
                "re": self.re,
                "f1": self.f1,
            },
        }


def _validate_binary(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    bad = set(np.unique(arr)) - {0, 1}
    if bad:
        raise ValueError(f"{name} must contain only 0/1, found {sorted(bad)}")
    return arr.astype(np.int64)


def confusion(pred: np.ndarray, gt: np.ndarray, coords: Optional[np.ndarray] = None) -> ConfusionCounts:
    """Count tp/tn/fp/fn of 0/1 rasters, restricted to ``coords`` (an (n,2)
    row/col array) when given; changed (1) is the positive class."""
    pred = _validate_binary("pred", pred)
    gt = _validate_binary("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ")
    if coords is not None:
        coords = np.asarray(coords)
        pred = pred[coords[:, 0], coords[:, 1]]
        gt = gt[coords[:, 0], coords[:, 1]]
    tp = int(np.count_nonzero((pred == 1) & (gt == 1)))
    tn = int(np.count_nonzero((pred == 0) & (gt == 0)))
    fp = int(np.count_nonzero((pred == 1) & (gt == 0)))
    fn = int(np.count_nonzero((pred == 0) & (gt == 1)))
    return ConfusionCounts(tp, tn, fp, fn)


def oa(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetricError("overall accuracy undefined on zero pixels")
    return (c.tp + c.tn) / c.total


def kappa_standard(c: ConfusionCounts) -> float:
    """Cohen's kappa: (p_o - p_e) / (1 - p_e) with the product-of-marginals
    chance term. Undefined when p_e == 1 (both raters constant and equal)."""
    n = c.total
    if n == 0:
        raise UndefinedMetricError("kappa undefined on zero pixels")
    p_o = (c.tp + c.tn) / n
    p_e = ((c.tp + c.fp) * (c.tp + c.fn) + (c.tn + c.fn) * (c.tn + c.fp)) / (n * n)
    if p_e == 1.0:
        raise UndefinedMetricError("kappa undefined: chance agreement is exactly 1")
    return (p_o - p_e) / (1.0 - p_e)


def kappa_paper(c: ConfusionCounts) -> float:
    """Kappa with chance term (tp*fn + tp*fp + tn*fn + tn*fp) / N^2, i.e.
    (tp+tn)(fp+fn)/N^2. Undefined when that term equals 1."""
    n = c.total
    if n == 0:
        raise UndefinedMetricError("kappa undefined on zero pixels")
    p_o = (c.tp + c.tn) / n
    p_e = (c.tp * c.fn + c.tp * c.fp + c.tn * c.fn + c.tn * c.fp) / (n * n)
    if p_e == 1.0:
        raise UndefinedMetricError("kappa undefined: chance agreement is exactly 1")
    return (p_o - p_e) / (1.0 - p_e)


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        raise UndefinedMetricError("precision undefined: no positive predictions")
    return c.tp / (c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("recall undefined: no positive ground-truth pixels")
    return c.tp / (c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    p = precision(c)
    r = recall(c)
    if p + r == 0:
        raise UndefinedMetricError("f1 undefined: precision + recall is zero")
    return 2.0 * p * r / (p + r)


def compute_report(c: ConfusionCounts) -> MetricsReport:
    return MetricsReport(
        counts=c,
        oa=oa(c),
        kc_standard=kappa_standard(c),
        kc_paper=kappa_paper(c),
        pr=precision(c),
        re=recall(c),
        f1=f1(c),
    )


# ---------------------------------------------------------------------------
# change maps


@dataclass
class ChangeMap:
    """Per-pixel outcome classes (tp/tn/fp/fn codes) for a whole image."""

    classes: np.ndarray

    def counts(self) -> ConfusionCounts:
        return ConfusionCounts(
            tp=int(np.count_nonzero(self.classes == CLASS_TP)),
            tn=int(np.count_nonzero(self.classes == CLASS_TN)),
            fp=int(np.count_nonzero(self.classes == CLASS_FP)),
            fn=int(np.count_nonzero(self.classes == CLASS_FN)),
        )

    def to_rgb(self) -> np.ndarray:
        h, w = self.classes.shape
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        for code, color in CLASS_COLORS.items():
            rgb[self.classes == code] = color
        return rgb


def render_change_map(pred: np.ndarray, gt: np.ndarray) -> ChangeMap:
    """Classify every pixel: hits white, correct rejections black, false alarms
    green, misses red."""
    pred = _validate_binary("pred", pred)
    gt = _validate_binary("gt", gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ")
    classes = np.full(pred.shape, CLASS_TN, dtype=np.uint8)
    classes[(pred == 1) & (gt == 1)] = CLASS_TP
    classes[(pred == 1) & (gt == 0)] = CLASS_FP
    classes[(pred == 0) & (gt == 1)] = CLASS_FN
    return ChangeMap(classes)


def save_change_map(cmap: ChangeMap, path: str) -> None:
    """Write the color-coded map as a lossless PNG."""
    Image.fromarray(cmap.to_rgb(), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# reports


def emit_report(report: MetricsReport, path: str, extra: Optional[dict] = None) -> dict:
    """Write the counts+metrics JSON document; floats keep full precision so a
    read-back compares equal."""
    doc = report.to_dict()
    if extra:
        doc["notes"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return doc


def format_report(report: MetricsReport) -> str:
    """Human-oriented rendering: percentages to two decimals."""
    m = report.to_dict()["metrics"]
    parts = [f"{key}={100.0 * value:.2f}%" for key, value in m.items()]
    c = report.counts
    return f"tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn} | " + " ".join(parts)
