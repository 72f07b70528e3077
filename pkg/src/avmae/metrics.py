"""Evaluation metrics, computed from scratch on numpy arrays.

Classification reports macro recall (UAR), plain accuracy (WAR),
support-weighted and macro F1 (WF1/MF1), and a rank-based one-vs-rest AUC.
Classes that never occur in the targets are excluded from the macro
averages with a warning. Regression reports the Pearson correlation (PCC)
and the concordance correlation (CCC), which additionally penalizes scale
and location bias; both are averaged over output dimensions.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricReport:
    task: str
    uar: float = None
    war: float = None
    wf1: float = None
    mf1: float = None
    auc: float = None
    pcc: float = None
    ccc: float = None

    def as_dict(self):
        keep = {"task": self.task}
        for key in ("uar", "war", "wf1", "mf1", "auc", "pcc", "ccc"):
            val = getattr(self, key)
            if val is not None:
                keep[key] = float(val)
        return keep

    def lines(self):
        return [f"{k.upper()}: {v:.4f}" if k != "task" else f"task: {v}"
                for k, v in self.as_dict().items()]


def _one_vs_rest_auc(targets, scores, cls):
    positive = targets == cls
    n_pos = int(positive.sum())
    n_neg = int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores[:, cls])
    rank_sum = ranks[positive].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def classification_metrics(targets, predictions, scores=None, num_classes=None):
    targets = np.asarray(targets, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("no samples")
    if targets.shape != predictions.shape:
        raise ValueError("targets and predictions differ in length")
    if num_classes is None:
        num_classes = int(max(targets.max(), predictions.max())) + 1
    present = []
    recalls, f1s, supports = [], [], []
    for cls in range(num_classes):
        support = int((targets == cls).sum())
        if support == 0:
            warnings.warn(f"class {cls} absent from targets; excluded from macro averages")
            continue
        present.append(cls)
        tp = int(((targets == cls) & (predictions == cls)).sum())
        predicted = int((predictions == cls).sum())
        recall = tp / support
        precision = tp / predicted if predicted else 0.0
        f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0
        recalls.append(recall)
        f1s.append(f1)
        supports.append(support)
    supports = np.asarray(supports, dtype=np.float64)
    report = MetricReport(
        task="classify",
        uar=float(np.mean(recalls)),
        war=float((targets == predictions).mean()),
        wf1=float(np.sum(np.asarray(f1s) * supports / supports.sum())),
        mf1=float(np.mean(f1s)),
    )
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        aucs = [a for cls in present
                if (a := _one_vs_rest_auc(targets, scores, cls)) is not None]
        if aucs:
            report.auc = float(np.mean(aucs))
    return report


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm = x - x.mean()
    ym = y - y.mean()
    denom = np.sqrt((xm * xm).sum() * (ym * ym).sum())
    if denom == 0:
        return float("nan")
    return float((xm * ym).sum() / denom)


def concordance(x, y):
    """2*cov / (var_x + var_y + (mean_x - mean_y)^2), population moments."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return float("nan")
    return float(2.0 * cov / denom)


def regression_metrics(targets, predictions):
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("no samples")
    if targets.ndim == 1:
        targets = targets[:, None]
    if predictions.ndim == 1:
        predictions = predictions[:, None]
    if targets.shape != predictions.shape:
        raise ValueError(
            f"shape mismatch: targets {targets.shape}, predictions {predictions.shape}")
    pccs = [pearson(predictions[:, d], targets[:, d]) for d in range(targets.shape[1])]
    cccs = [concordance(predictions[:, d], targets[:, d]) for d in range(targets.shape[1])]
    return MetricReport(task="regress", pcc=float(np.mean(pccs)), ccc=float(np.mean(cccs)))


def compute_metrics(targets, predictions, task, scores=None, num_classes=None):
    if task == "classify":
        return classification_metrics(targets, predictions, scores, num_classes)
    if task == "regress":
        return regression_metrics(targets, predictions)
    raise ValueError(f"unknown task {task!r}")
