"""Clustering-based evaluation of selected features: Lloyd k-means with
plus-plus seeding, best-match accuracy, normalized mutual information,
and causal-recovery rates on synthetic data."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


def _plus_plus_seeds(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    taken = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = points[first]
    taken[first] = True
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # duplicates everywhere: take the first untaken point
            idx = int(np.nonzero(~taken)[0][0])
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        taken[idx] = True
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans(points, k, seed=0, max_iter=300):
    """Lloyd iterations from a plus-plus seeding. Returns labels.

    Empty clusters are reseeded from the point farthest from its
    current center, so exactly k clusters come back whenever the data
    has k distinct points.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    centers = _plus_plus_seeds(points, k, rng)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d2 = (np.sum(points ** 2, axis=1)[:, None]
              - 2.0 * points @ centers.T
              + np.sum(centers ** 2, axis=1)[None, :])
        new_labels = np.argmin(d2, axis=1)
        for j in range(k):
            sel = new_labels == j
            if not np.any(sel):
                far = int(np.argmax(d2[np.arange(n), new_labels]))
                centers[j] = points[far]
                new_labels[far] = j
                sel = new_labels == j
            centers[j] = points[sel].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def _contingency(pred, truth):
    pi = np.unique(pred, return_inverse=True)[1]
    ti = np.unique(truth, return_inverse=True)[1]
    C = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(C, (pi, ti), 1)
    return C


def accuracy(pred, truth):
    """Clustering accuracy under the best one-to-one label matching."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("label vectors must have equal length")
    C = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(-C)
    return float(C[rows, cols].sum()) / pred.size


def nmi(pred, truth):
    """Normalized mutual information, sqrt normalization, natural logs.

    Zero when either labeling is a single class.
    """
    C = _contingency(pred, truth).astype(float)
    n = C.sum()
    P = C / n
    pi = P.sum(axis=1)
    pj = P.sum(axis=0)
    nz = P > 0.0
    mi = float(np.sum(P[nz] * np.log(P[nz] / np.outer(pi, pj)[nz])))
    hi = -float(np.sum(pi[pi > 0.0] * np.log(pi[pi > 0.0])))
    hj = -float(np.sum(pj[pj > 0.0] * np.log(pj[pj > 0.0])))
    if hi <= 0.0 or hj <= 0.0:
        return 0.0
    return mi / np.sqrt(hi * hj)


@dataclass
class EvaluationReport:
    """Clustering quality of a feature selection, plus causal recovery
    when feature roles are known. Metric fields are None without labels."""

    selected: list
    acc_mean: float | None = None
    acc_std: float | None = None
    nmi_mean: float | None = None
    nmi_std: float | None = None
    precision: float | None = None
    recall: float | None = None
    per_view_precision: list | None = None
    per_view_recall: list | None = None

    def to_dict(self):
        return {
            "selected": [np.asarray(s).tolist() for s in self.selected],
            "acc_mean": self.acc_mean,
            "acc_std": self.acc_std,
            "nmi_mean": self.nmi_mean,
            "nmi_std": self.nmi_std,
            "precision": self.precision,
            "recall": self.recall,
            "per_view_precision": self.per_view_precision,
            "per_view_recall": self.per_view_recall,
        }


def recovery_rates(selection, roles):
    """Precision/recall of causal features inside a selection.

    roles[v] is a string array over view v's features; 'causal' marks
    the ground-truth set. Returns (precision, recall, per-view lists).
    """
    tp = 0
    n_sel = 0
    n_causal = 0
    pv_prec, pv_rec = [], []
    for sel, rv in zip(selection, roles):
        rv = np.asarray(rv)
        sel = np.asarray(sel, dtype=int)
        causal_idx = np.nonzero(rv == "causal")[0]
        hit = np.isin(sel, causal_idx).sum()
        tp += int(hit)
        n_sel += sel.size
        n_causal += causal_idx.size
        pv_prec.append(float(hit) / sel.size if sel.size else 0.0)
        pv_rec.append(float(hit) / causal_idx.size if causal_idx.size else 0.0)
    precision = tp / n_sel if n_sel else 0.0
    recall = tp / n_causal if n_causal else 0.0
    return precision, recall, pv_prec, pv_rec


def evaluate_selection(ds, selection, k=None, restarts=50, seed=0, roles=None):
    """Cluster the selected feature stack and score against labels.

    Runs k-means `restarts` times with distinct seeds and reports
    mean/std of accuracy and NMI. Labels absent: metrics stay None
    (recovery is still computed when roles are given).
    """
    selection = [np.asarray(s, dtype=int) for s in selection]
    if not any(s.size for s in selection):
        raise ValueError("empty selection")
    data = np.vstack([X[sel] for X, sel in zip(ds.views, selection)
                      if sel.size]).T
    report = EvaluationReport(selected=selection)
    if roles is not None:
        (report.precision, report.recall,
         report.per_view_precision, report.per_view_recall) = recovery_rates(
            selection, roles)
    if ds.labels is not None:
        if k is None:
            k = int(np.unique(ds.labels).size)
        accs, nmis = [], []
        for i in range(restarts):
            pred = kmeans(data, k, seed=seed + i)
            accs.append(accuracy(pred, ds.labels))
            nmis.append(nmi(pred, ds.labels))
        report.acc_mean = float(np.mean(accs))
        report.acc_std = float(np.std(accs))
        report.nmi_mean = float(np.mean(nmis))
        report.nmi_std = float(np.std(nmis))
    elif roles is None:
        raise ValueError("dataset has no labels and no roles were given")
    return report
