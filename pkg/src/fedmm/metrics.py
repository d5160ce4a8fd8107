"""Accuracy, ROC/AUC, and cross-seed summaries, plus the CSV writers.

AUC uses the Mann-Whitney formulation with half credit for ties, which
is exactly the trapezoidal area under the ROC curve. All CSV output is
RFC-4180-style with LF line endings and floats at 17 significant digits
so repeated runs are byte-identical.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    return FLOAT_FMT % float(x)


@dataclass
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass
class RunSummary:
    """Final metrics of one (method, hospital, seed) run."""

    method: str
    hospital_id: int
    seed: int
    accuracy: float
    auc: float
    rounds: list = field(default_factory=list)  # optional per-round series


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of samples where (score >= threshold) equals the label;
    a score exactly at the threshold predicts class 1."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise MetricError(
            f"need equal-length non-empty inputs, got {scores.shape} and {labels.shape}"
        )
    preds = (scores >= threshold).astype(np.int64)
    return float(np.mean(preds == labels))


def _ranks_with_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values get the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = _ranks_with_ties(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC points swept over the distinct scores (descending) plus the
    (0,0) sentinel; trapezoidal area over the points equals auc()."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_pos = pos[order].astype(np.int64)
    points = [RocPoint(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_pos[i : j + 1].sum())
        fp += (j - i + 1) - int(sorted_pos[i : j + 1].sum())
        points.append(RocPoint(fp / n_neg, tp / n_pos, float(sorted_scores[i])))
        i = j + 1
    return points


def trapezoid_area(points) -> float:
    area = 0.0
    for a, b in zip(points[:-1], points[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return area


def summarize(runs):
    """Group runs by (method, hospital): mean, sample std (n-1), count.

    A single run reports std 0 with its count of 1 left visible. Rows
    come back sorted by (method, hospital).
    """
    if not runs:
        raise MetricError("nothing to summarize")
    groups = {}
    for r in runs:
        groups.setdefault((r.method, r.hospital_id), []).append(r)
    rows = []
    for (method, hid) in sorted(groups):
        rs = groups[(method, hid)]
        accs = np.array([r.accuracy for r in rs])
        aucs = np.array([r.auc for r in rs])
        std = lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
        rows.append(
            {
                "method": method,
                "hospital_id": hid,
                "count": len(rs),
                "mean_accuracy": float(accs.mean()),
                "std_accuracy": std(accs),
                "mean_auc": float(aucs.mean()),
                "std_auc": std(aucs),
            }
        )
    return rows


def _open_writer(path):
    f = open(path, "w", newline="")
    return f, csv.writer(f, lineterminator="\n")


def write_runs_csv(path, runs):
    f, w = _open_writer(path)
    with f:
        w.writerow(["method", "hospital_id", "seed", "accuracy", "auc"])
        for r in runs:
            w.writerow([r.method, r.hospital_id, r.seed, fmt(r.accuracy), fmt(r.auc)])


def read_runs_csv(path):
    runs = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            runs.append(
                RunSummary(
                    method=row["method"],
                    hospital_id=int(row["hospital_id"]),
                    seed=int(row["seed"]),
                    accuracy=float(row["accuracy"]),
                    auc=float(row["auc"]),
                )
            )
    return runs


def write_rounds_csv(path, rows):
    """rows: (round, method, hospital, seed, lambda, loss_bce, loss_l2,
    test_accuracy, test_auc) tuples, already in canonical order."""
    f, w = _open_writer(path)
    with f:
        w.writerow(
            ["round", "method", "hospital", "seed", "lambda",
             "loss_bce", "loss_l2", "test_accuracy", "test_auc"]
        )
        for r in rows:
            w.writerow(
                [r[0], r[1], r[2], r[3], fmt(r[4]), fmt(r[5]), fmt(r[6]), fmt(r[7]), fmt(r[8])]
            )


def write_roc_csv(path, points):
    f, w = _open_writer(path)
    with f:
        w.writerow(["fpr", "tpr", "threshold"])
        for p in points:
            w.writerow([fmt(p.fpr), fmt(p.tpr), fmt(p.threshold)])


def write_summary_csv(path, rows):
    f, w = _open_writer(path)
    with f:
        w.writerow(
            ["method", "hospital_id", "count",
             "mean_accuracy", "std_accuracy", "mean_auc", "std_auc"]
        )
        for r in rows:
            w.writerow(
                [r["method"], r["hospital_id"], r["count"], fmt(r["mean_accuracy"]),
                 fmt(r["std_accuracy"]), fmt(r["mean_auc"]), fmt(r["std_auc"])]
            )


def write_sweep_csv(path, rows):
    f, w = _open_writer(path)
    with f:
        w.writerow(["sweep_value", "hospital", "mean_auc", "std_auc", "mean_acc", "std_acc"])
        for r in rows:
            w.writerow(
                [r["sweep_value"], r["hospital"], fmt(r["mean_auc"]), fmt(r["std_auc"]),
                 fmt(r["mean_acc"]), fmt(r["std_acc"])]
            )
