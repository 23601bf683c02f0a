"""ROC and precision/recall sweeps over labeled verdict energies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

POSITIVE_LABELS = {"TP", "tp", True, 1, "1"}


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float
    flag: str = ""


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float
    flag: str = ""


def default_thresholds():
    return np.linspace(0.0, 2.0, 101)


def _prepare(energies, labels):
    e = np.asarray(energies, dtype=np.float64)
    pos = np.array([lab in POSITIVE_LABELS for lab in labels])
    if len(e) == 0 or len(e) != len(pos):
        raise PreconditionError("need equally many energies and labels, >= 1")
    return e, pos


def _confusion(e, pos, threshold):
    pred = e <= threshold  # plausible iff the energy stays under the cut
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return tp, fp, fn, tn


def sweep_roc(energies, labels, thresholds=None) -> list:
    """One RocPoint per threshold; undefined rates emit 0 with a flag."""
    e, pos = _prepare(energies, labels)
    if thresholds is None:
        thresholds = default_thresholds()
    out = []
    for k in thresholds:
        tp, fp, fn, tn = _confusion(e, pos, k)
        flags = []
        if tp + fn:
            tpr = tp / (tp + fn)
        else:
            tpr, flags = 0.0, flags + ["no-positives"]
        if fp + tn:
            fpr = fp / (fp + tn)
        else:
            fpr, flags = 0.0, flags + ["no-negatives"]
        out.append(RocPoint(float(k), tpr, fpr, "+".join(flags)))
    return out


def pr_curve(energies, labels, thresholds=None) -> list:
    """One PrPoint per threshold; precision at zero predictions is 1, flagged."""
    e, pos = _prepare(energies, labels)
    if thresholds is None:
        thresholds = default_thresholds()
    out = []
    for k in thresholds:
        tp, fp, fn, _ = _confusion(e, pos, k)
        flags = []
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision, flags = 1.0, flags + ["no-predictions"]
        if tp + fn:
            recall = tp / (tp + fn)
        else:
            recall, flags = 0.0, flags + ["no-positives"]
        out.append(PrPoint(float(k), precision, recall, "+".join(flags)))
    return out


def write_roc_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("threshold,tpr,fpr,flag\n")
        for p in points:
            fh.write(f"{p.threshold!r},{p.tpr!r},{p.fpr!r},{p.flag}\n")


def write_pr_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("threshold,precision,recall,flag\n")
        for p in points:
            fh.write(f"{p.threshold!r},{p.precision!r},{p.recall!r},{p.flag}\n")
