"""Confusion-matrix evaluation over labeled pixels.

Reference class ids are rows, predictions are columns; pixels whose
reference label is 0 (unlabeled) never enter the counts. From the counts:

    OA     = trace / total
    AA     = mean of per-class recalls
    UA_c   = cm[c, c] / column-sum c          (precision)
    kappa  = (p_o - p_e) / (1 - p_e),  p_e from row x column marginals
    F1     = macro mean of 2 prec rec / (prec + rec)
    MIoU   = mean of cm[c, c] / (rowsum + colsum - cm[c, c])

Classes absent from the reference are skipped in the macro averages
(with a warning); a degenerate p_e = 1 maps kappa to 1 when accuracy is
perfect and 0 otherwise, flagged rather than NaN.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import DimensionMismatchError, EmptyMatrixError


@dataclass(frozen=True)
class MetricsReport:
    per_class_ua: np.ndarray
    per_class_recall: np.ndarray
    oa: float
    aa: float
    kappa: float
    f1: float
    miou: float
    flags: List[str] = field(default_factory=list)


def confusion(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """(C, C) count matrix over pixels with truth != 0; rows are reference."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatchError(
            f"prediction {pred.shape} vs reference {truth.shape}"
        )
    mask = truth.ravel() > 0
    t = truth.ravel()[mask]
    p = pred.ravel()[mask]
    if p.size and p.min() < 1:
        raise ValueError("prediction holds unlabeled pixels at labeled positions")
    c = int(max(t.max(initial=0), p.max(initial=0)))
    cm = np.zeros((c, c), dtype=np.int64)
    if t.size:
        np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def report(cm: np.ndarray) -> MetricsReport:
    """Summary metrics from a confusion matrix (see module docstring)."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise EmptyMatrixError("confusion matrix holds no evaluated pixels")
    flags: List[str] = []
    diag = np.diag(cm).astype(np.float64)
    rows = cm.sum(axis=1).astype(np.float64)
    cols = cm.sum(axis=0).astype(np.float64)
    present = rows > 0
    if not present.all():
        warnings.warn("empty reference classes skipped in macro averages")
        flags.append("empty-classes-skipped")

    with np.errstate(divide="ignore", invalid="ignore"):
        ua = np.where(cols > 0, diag / cols, np.nan)
        recall = np.where(rows > 0, diag / rows, np.nan)
        prec_safe = np.where(cols > 0, diag / cols, 0.0)
        rec_safe = np.where(rows > 0, diag / rows, 0.0)
        denom = prec_safe + rec_safe
        f1_c = np.where(denom > 0, 2.0 * prec_safe * rec_safe / denom, 0.0)
        iou_denom = rows + cols - diag
        iou_c = np.where(iou_denom > 0, diag / iou_denom, 0.0)

    oa = float(diag.sum() / total)
    aa = float(recall[present].mean())
    f1 = float(f1_c[present].mean())
    miou = float(iou_c[present].mean())

    p_e = float((rows * cols).sum() / total**2)
    if p_e >= 1.0:
        kappa = 1.0 if oa >= 1.0 else 0.0
        flags.append("degenerate-chance-agreement")
    else:
        kappa = float((oa - p_e) / (1.0 - p_e))
    return MetricsReport(ua, recall, oa, aa, kappa, f1, miou, flags)


def report_text(rep: MetricsReport) -> str:
    """Flat key = value block."""
    lines = [
        f"oa = {rep.oa:.6f}",
        f"aa = {rep.aa:.6f}",
        f"kappa = {rep.kappa:.6f}",
        f"f1 = {rep.f1:.6f}",
        f"miou = {rep.miou:.6f}",
    ]
    for i, (ua, rc) in enumerate(zip(rep.per_class_ua, rep.per_class_recall), 1):
        lines.append(f"class_{i}_ua = {ua:.6f}")
        lines.append(f"class_{i}_recall = {rc:.6f}")
    if rep.flags:
        lines.append("flags = " + ",".join(rep.flags))
    return "\n".join(lines) + "\n"


def report_csv(rep: MetricsReport) -> str:
    """One row per class plus a summary row."""
    lines = ["row,class,ua,recall"]
    for i, (ua, rc) in enumerate(zip(rep.per_class_ua, rep.per_class_recall), 1):
        lines.append(f"class,{i},{ua:.6f},{rc:.6f}")
    lines.append("summary,oa,aa,kappa,f1,miou")
    lines.append(
        f"values,{rep.oa:.6f},{rep.aa:.6f},{rep.kappa:.6f},{rep.f1:.6f},{rep.miou:.6f}"
    )
    return "\n".join(lines) + "\n"
