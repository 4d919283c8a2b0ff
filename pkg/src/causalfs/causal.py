"""Confounder-balancing machinery.

Every selected prototype feature is treated as a binary exposure; the
remaining features of its view are candidate confounders, gated by an
indicator vector e in [0,1]^(d-1). The gated confounders C = diag(e) Z
enter three coupled terms: a sample-weighted MMD between treatment
groups, an association penalty ||C^T C / n - F F^T||^2 tying the
per-sample-normalized confounder similarity to the consensus embedding,
and the alignment reward Tr(C^T P) toward the exposure itself. The 1/n
normalization matches the similarity gram to the embedding gram (whose
entries scale like 1/n under F^T F ~ I), so indicator equilibria sit at
O(1) values instead of collapsing toward zero.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .optim import prox_l1_box


class DegenerateSplitError(ValueError):
    """Median split put every sample on one side."""


class EmptyGroupError(ValueError):
    """A treatment group is empty."""


class LineSearchStallWarning(UserWarning):
    """Backtracking hit the minimum step; indicator column left as-is."""


@dataclass
class TreatmentAssignment:
    """Binary exposure over samples. omega[i] is True for treated."""

    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=bool)

    @property
    def treated(self):
        return np.nonzero(self.omega)[0]

    @property
    def control(self):
        return np.nonzero(~self.omega)[0]

    def signed_weights(self):
        """s_i = 1/|treated| for treated, -1/|control| for control.

        The weighted MMD between group means is ||C (tau . s)||^2.
        """
        nt = self.treated.size
        nc = self.control.size
        if nt == 0 or nc == 0:
            raise EmptyGroupError("both treatment groups must be nonempty")
        return np.where(self.omega, 1.0 / nt, -1.0 / nc)


def binarize_treatment(row):
    """Median-split a feature row into a treatment assignment.

    Rows taking only the values {0, 1} are used directly (value 1 is
    treated); a strict median split on such rows is degenerate.
    """
    row = np.asarray(row, dtype=float)
    vals = np.unique(row)
    if vals.size <= 2 and np.isin(vals, (0.0, 1.0)).all():
        omega = row == 1.0
    else:
        omega = row > np.median(row)
    if omega.all() or not omega.any():
        raise DegenerateSplitError("median split left a treatment group empty")
    return TreatmentAssignment(omega=omega)


@dataclass
class CausalContext:
    """One prototype exposure and its candidate confounders within a view.

    rest (Z) holds the other d-1 feature rows; indicator is the e gate.
    gram = Z Z^T and align = Z x_r are exposure-invariant and reused
    across solver iterations.
    """

    view: int
    feature: int
    rest: np.ndarray
    rest_features: np.ndarray
    indicator: np.ndarray
    treatment_row: np.ndarray
    treatment: TreatmentAssignment
    gram: np.ndarray
    align: np.ndarray
    _quad: np.ndarray = field(default=None, repr=False)

    @property
    def confounders(self):
        """C = diag(e) Z."""
        return self.indicator[:, None] * self.rest

    @property
    def alignment_target(self):
        """P: the exposure row broadcast to every confounder slot."""
        return np.tile(self.treatment_row, (self.rest.shape[0], 1))

    def kernel_matrix(self):
        """Group kernel K = s s^T; tau^T (K . C^T C) tau is the MMD."""
        s = self.treatment.signed_weights()
        return np.outer(s, s)

    def assoc_quad(self):
        """(Z Z^T) . (Z Z^T), the quartic coefficient of the association
        penalty in u = e^2. Cached; Z never changes for a context."""
        if self._quad is None:
            self._quad = self.gram ** 2
        return self._quad


def build_confounder_context(X, r, e=None, F=None, view=0, gram=None):
    """Assemble the CausalContext for prototype feature r of view X.

    gram may pass a precomputed X X^T to avoid recomputing Z Z^T per
    prototype. Raises DegenerateSplitError when the exposure cannot be
    binarized. F is only shape-checked; the context itself is free of
    embedding state.
    """
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    if not 0 <= r < d:
        raise ValueError(f"prototype index {r} outside view of {d} features")
    if F is not None and np.asarray(F).shape[0] != n:
        raise ValueError("F row count must match sample count")
    treatment = binarize_treatment(X[r])
    rest_features = np.delete(np.arange(d), r)
    # feature-count normalization keeps confounder similarities at
    # correlation scale regardless of how wide the view is
    scale = 1.0 / np.sqrt(d - 1.0)
    Z = X[rest_features] * scale
    if e is None:
        e = np.ones(d - 1)
    else:
        e = np.asarray(e, dtype=float).copy()
        if e.shape != (d - 1,):
            raise ValueError("indicator length must be d-1")
        if e.min() < 0.0 or e.max() > 1.0:
            raise ValueError("indicator entries must lie in [0, 1]")
    if gram is not None:
        sub = gram[np.ix_(rest_features, rest_features)] * (scale * scale)
        p = gram[rest_features, r] * scale
    else:
        sub = Z @ Z.T
        p = Z @ X[r]
    return CausalContext(view=view, feature=int(r), rest=Z,
                         rest_features=rest_features, indicator=e,
                         treatment_row=X[r], treatment=treatment,
                         gram=sub, align=p)


def _gaussian_gram(C, bandwidth=None):
    g = C.T @ C
    sq = np.diag(g).copy()
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * g, 0.0)
    if bandwidth is None:
        off = d2[~np.eye(d2.shape[0], dtype=bool)]
        pos = np.sqrt(off[off > 0.0])
        bandwidth = float(np.median(pos)) if pos.size else 1.0
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth)), bandwidth


def mmd_weighted(C, tau, treatment, kernel="linear", bandwidth=None):
    """Squared MMD between tau-weighted treated and control embeddings.

    Columns of C are per-sample confounder vectors; the statistic is
    || (1/|T|) sum_T tau_i phi(C_i) - (1/|Ctl|) sum_Ctl tau_i phi(C_i) ||^2
    in the kernel's RKHS. Linear kernel reduces to ||C (tau . s)||^2.
    """
    C = np.asarray(C, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if C.shape[1] != tau.size:
        raise ValueError("one weight per sample required")
    s = treatment.signed_weights()
    w = tau * s
    if kernel == "linear":
        v = C @ w
        return float(v @ v)
    if kernel == "gaussian":
        G, _ = _gaussian_gram(C, bandwidth)
        return float(w @ G @ w)
    raise ValueError(f"unknown kernel {kernel!r}")


class _SmoothParts:
    """Precomputed coefficients of the smooth indicator objective.

    In u = e^2 the smooth part is
        mmd_coeff * u^T q  +  u^T Q u  -  2 u^T zf  +  ||F^T F||^2  -  e^T p
    with q = (Z (tau . s))^2, Q = (Z Z^T)^2 / n^2 elementwise, zf the
    squared row norms of Z F over n, and p = Z x_r; Q and zf carry the
    association term ||C^T C / n - F F^T||^2. Gaussian kernels replace
    the first term with the exact RKHS statistic (bandwidth frozen at
    build time).
    """

    def __init__(self, ctx, tau, F, mmd_coeff, kernel="linear", bandwidth=None):
        n = float(tau.size)
        self.kernel = kernel
        self.coeff = mmd_coeff
        self.Z = ctx.rest
        self.Q = ctx.assoc_quad() / (n * n)
        self.zf = np.sum((ctx.rest @ F) ** 2, axis=1) / n
        self.p = ctx.align
        self.const = float(np.sum((F.T @ F) ** 2))
        w = tau * ctx.treatment.signed_weights()
        if kernel == "linear":
            self.q = (ctx.rest @ w) ** 2
        else:
            self.w = w
            if bandwidth is None:
                _, bandwidth = _gaussian_gram(
                    ctx.indicator[:, None] * ctx.rest, None)
            self.bw = bandwidth
            self.d2_base = None  # pairwise (z_ki - z_kj)^2 handled on the fly

    def _mmd_value_grad(self, e):
        if self.kernel == "linear":
            u = e * e
            return self.coeff * float(u @ self.q), 2.0 * self.coeff * e * self.q
        C = e[:, None] * self.Z
        G, _ = _gaussian_gram(C, self.bw)
        T = np.outer(self.w, self.w) * G
        val = self.coeff * float(T.sum())
        ones = T.sum(axis=1)
        zt = self.Z @ T
        g = (self.Z ** 2) @ ones - np.sum(zt * self.Z, axis=1)
        grad = -(2.0 * self.coeff / (self.bw * self.bw)) * e * g
        return val, grad

    def value_grad(self, e):
        u = e * e
        qu = self.Q @ u
        mval, mgrad = self._mmd_value_grad(e)
        val = mval + float(u @ qu) - 2.0 * float(u @ self.zf) \
            + self.const - float(e @ self.p)
        grad = mgrad + 4.0 * e * qu - 4.0 * e * self.zf - self.p
        return val, grad

    def value(self, e):
        u = e * e
        mval, _ = self._mmd_value_grad(e)
        return mval + float(u @ (self.Q @ u)) - 2.0 * float(u @ self.zf) \
            + self.const - float(e @ self.p)


def indicator_objective(ctx, tau, F, beta, kernel="linear", bandwidth=None,
                        e=None, mmd_coeff=None):
    """Smooth balance objective and gradient in the indicator column e.

    mmd_coeff overrides the default beta/n^2 weight on the MMD term;
    the l1 sparsity penalty is handled proximally, not here. Evaluates
    at ctx.indicator unless e is given.
    """
    tau = np.asarray(tau, dtype=float)
    n = tau.size
    coeff = beta / float(n * n) if mmd_coeff is None else mmd_coeff
    parts = _SmoothParts(ctx, tau, np.asarray(F, dtype=float), coeff,
                         kernel=kernel, bandwidth=bandwidth)
    at = ctx.indicator if e is None else np.asarray(e, dtype=float)
    return parts.value_grad(at)


def _prox_descend(e0, parts, varrho, max_steps=100, rel_tol=1e-6):
    """Proximal gradient on smooth(e) + varrho ||e||_1 over [0,1]^d.

    Backtracking halves the step until the sufficient-decrease test
    holds, so the subproblem objective never increases. Returns the new
    column and whether the line search stalled.
    """
    e = np.asarray(e0, dtype=float).copy()
    f, grad = parts.value_grad(e)
    total = f + varrho * float(np.abs(e).sum())
    t = 1.0
    for _ in range(max_steps):
        while True:
            cand = prox_l1_box(e - t * grad, t, varrho)
            delta = cand - e
            dsq = float(delta @ delta)
            cand_total = parts.value(cand) + varrho * float(np.abs(cand).sum())
            if cand_total <= total - 1e-4 / t * dsq:
                break
            t *= 0.5
            if t < 1e-14:
                warnings.warn("indicator line search stalled",
                              LineSearchStallWarning)
                return e, True
        moved = np.sqrt(dsq)
        e = cand
        total = cand_total
        if moved <= rel_tol * max(1.0, float(np.linalg.norm(e))):
            break
        f, grad = parts.value_grad(e)
        t = min(t * 2.0, 1e12)
    return e, False


def update_indicators(contexts, tau, F, params, mmd_coeff=None):
    """Refresh every context's indicator column by proximal descent.

    Returns (columns, stalled flags), one per context, in order; the
    caller decides whether to write them back. mmd_coeff defaults to
    beta/n^2 as in indicator_objective.
    """
    tau = np.asarray(tau, dtype=float)
    F = np.asarray(F, dtype=float)
    n = tau.size
    coeff = params.beta / float(n * n) if mmd_coeff is None else mmd_coeff
    cols, stalls = [], []
    for ctx in contexts:
        parts = _SmoothParts(ctx, tau, F, coeff, kernel=params.kernel)
        e_new, stalled = _prox_descend(ctx.indicator, parts, params.varrho)
        cols.append(e_new)
        stalls.append(stalled)
    return cols, stalls


def select_prototypes(W, m):
    """m representative feature indices from projection rows.

    Average-linkage clustering of the rows into m groups; each group is
    represented by its largest-norm row (ties to the smallest index).
    Duplicate rows can merge groups, in which case the shortfall is
    padded with the largest-norm unchosen features. Sorted ascending.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    if m >= d:
        return np.arange(d)
    labels = fcluster(linkage(pdist(W), method="average"), t=m,
                      criterion="maxclust")
    norms = np.linalg.norm(W, axis=1)
    order = np.lexsort((np.arange(d), -norms))  # norm desc, index asc
    chosen = []
    seen = set()
    for i in order:
        if labels[i] not in seen:
            seen.add(labels[i])
            chosen.append(i)
    if len(chosen) < m:
        pool = [i for i in order if i not in set(chosen)]
        chosen.extend(pool[: m - len(chosen)])
    return np.sort(np.array(chosen[:m], dtype=int))


def assemble_balance_system(contexts, views, Ws, F, tau, kernel="linear",
                            bandwidth=None):
    """Stack every context's balance quadratic and the residual profile.

    H = sum over contexts of (s s^T) . (C^T C) (the tau-quadratic whose
    form tau^T H tau equals the summed weighted MMD), and
    g_i = sum_v || X_.i^T W_v - n F_i. ||_2, the per-sample residual
    against the count-scaled embedding targets, across views.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    H = np.zeros((n, n))
    if contexts:
        if kernel == "linear":
            blocks = []
            for ctx in contexts:
                s = ctx.treatment.signed_weights()
                blocks.append(ctx.indicator[:, None] * ctx.rest * s[None, :])
            Y = np.vstack(blocks)
            H = Y.T @ Y
        else:
            for ctx in contexts:
                G, _ = _gaussian_gram(ctx.confounders, bandwidth)
                H += ctx.kernel_matrix() * G
        H = 0.5 * (H + H.T)
    g = np.zeros(n)
    T = n * F
    for X, W in zip(views, Ws):
        R = X.T @ W - T
        g += np.sqrt(np.sum(R * R, axis=1))
    return BalanceSystem(H=H, g=g)


@dataclass
class BalanceSystem:
    """Quadratic (H) and linear (g) pieces of the sample-weight problem."""

    H: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.H.shape != (self.g.size, self.g.size):
            raise ValueError("H must be n x n matching g")


def confounder_report(prototypes, indicators, dims, threshold=0.5):
    """Per-view, per-prototype confounder identities with weights >= threshold.

    prototypes[v] are feature indices, indicators[v] the (d_v-1) x m
    matrix of gate columns in the same order.
    """
    report = []
    for v, (protos, E) in enumerate(zip(prototypes, indicators)):
        d = dims[v]
        entries = []
        for j, r in enumerate(protos):
            rest = np.delete(np.arange(d), int(r))
            col = E[:, j]
            keep = np.nonzero(col >= threshold)[0]
            entries.append({
                "feature": int(r),
                "confounders": [
                    {"feature": int(rest[k]), "weight": float(col[k])}
                    for k in keep
                ],
            })
        report.append({"view": v, "prototypes": entries})
    return report
