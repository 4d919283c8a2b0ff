"""Sample-similarity graphs: kNN heat-kernel affinities and normalized
Laplacians, per view and summed across views."""

import warnings
from dataclasses import dataclass

import numpy as np


class DegenerateDistancesWarning(UserWarning):
    """All pairwise distances are zero; a uniform affinity is used."""


class IsolatedVertexWarning(UserWarning):
    """A sample has no neighbors; its Laplacian row stays at identity."""


@dataclass
class LaplacianGraph:
    """Normalized Laplacians (symmetric PSD, eigenvalues in [0, 2])."""

    per_view: list
    cross_view: np.ndarray


def pairwise_sq_dists(X):
    """Squared euclidean distances between columns of X."""
    g = X.T @ X
    sq = np.diag(g).copy()
    d2 = sq[:, None] + sq[None, :] - 2.0 * g
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def knn_affinity(X, k):
    """Heat-kernel affinity over the symmetrized kNN graph of X's columns.

    Neighborhoods include every point tied at the k-th smallest distance,
    and the graph is the union of directed neighborhoods (max-symmetrization;
    the heat weight itself is symmetric). Bandwidth is the median distance
    among connected pairs; weights are exp(-d^2 / (2 bw^2)).
    """
    n = X.shape[1]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    d2 = pairwise_sq_dists(X)
    off = ~np.eye(n, dtype=bool)
    if not np.any(d2[off] > 0.0):
        warnings.warn("all pairwise distances are zero; using uniform weights",
                      DegenerateDistancesWarning)
        return off.astype(float)
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        row = d2[i].copy()
        row[i] = np.inf
        kth = np.partition(row, k - 1)[k - 1]
        mask[i] = row <= kth
    mask |= mask.T
    dists = np.sqrt(d2[mask & off])
    bw = float(np.median(dists))
    if bw == 0.0:
        pos = dists[dists > 0.0]
        bw = float(np.median(pos)) if pos.size else 1.0
    A = np.where(mask, np.exp(-d2 / (2.0 * bw * bw)), 0.0)
    np.fill_diagonal(A, 0.0)
    return A


def _normalized_laplacian(A):
    n = A.shape[0]
    deg = A.sum(axis=1)
    iso = np.nonzero(deg == 0.0)[0]
    if iso.size:
        warnings.warn(f"{iso.size} isolated vertex(es) in affinity graph",
                      IsolatedVertexWarning)
    dinv = np.where(deg > 0.0, 1.0 / np.sqrt(np.where(deg > 0.0, deg, 1.0)), 0.0)
    L = np.eye(n) - dinv[:, None] * A * dinv[None, :]
    return 0.5 * (L + L.T)


def build_laplacian(ds, k):
    """Per-view normalized Laplacians and their cross-view sum."""
    per_view = [_normalized_laplacian(knn_affinity(X, k)) for X in ds.views]
    cross = np.sum(per_view, axis=0)
    return LaplacianGraph(per_view=per_view, cross_view=cross)
