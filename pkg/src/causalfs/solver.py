"""Block-coordinate solver for confounder-balanced multi-view feature
selection.

One outer iteration sweeps, in order: per-view projections W (orthogonal
trace problem), the shared nonnegative embedding F (multiplicative KKT
step), confounder indicators E (proximal descent), sample weights tau
(projected gradient over the simplex), and the prototype set (linkage
reselection). Each sweep is guarded so the traced objective never
increases through the W/F/E/tau blocks.

Scaling conventions: the embedding keeps F^T F ~ I and every coupling
restores data scale explicitly. The regression block compares
projections against count-scaled targets n*F; the balance quadratic is
beta * n * ||C((n tau) . s)||^2, count-scaled weights with one extra
count factor; the association penalty compares the per-sample-normalized
similarity C^T C / n to F F^T. These keep the data-dependent terms
commensurate with each other at default hyperparameters: without the
target scaling the W rows (the feature scores) are dominated by
near-null directions of the gram, without the weight scaling the
residual term runs the weight step unopposed, and without the
similarity normalization the indicators collapse toward zero.
"""

import json
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import causal
from .graph import build_laplacian
from .optim import (TraceProblem, box_simplex_project, estimate_lmax,
                    gpi_solve, l21_norm, l21_reweight, polar_factor)

log = logging.getLogger(__name__)

# multiplicative embedding sweeps per outer iteration; >1 counters the
# boundary crawl of multiplicative updates without touching fixed points
F_SWEEPS = 3


class EigenFailureError(RuntimeError):
    """Spectral initialization could not factor the Laplacian."""


@dataclass
class ModelState:
    """Everything the alternating solver mutates.

    projections: per-view d_v x c orthonormal W.
    consensus:   n x c nonnegative embedding F.
    weights:     simplex sample weights tau.
    indicators:  per-view (d_v - 1) x m_v indicator matrices, one column
                 per live prototype (skipped prototypes carry no column).
    prototypes:  per-view arrays of live prototype feature indices.
    """

    projections: list
    consensus: np.ndarray
    weights: np.ndarray
    indicators: list
    prototypes: list
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    stage_seconds: dict = field(default_factory=dict)


def _positive_part(M):
    return np.maximum(M, 0.0)


def _negative_part(M):
    return np.maximum(-M, 0.0)


def _mmd_coeff(params, n):
    # the balance terms weight count-scaled sample weights n*tau plus one
    # extra count factor: beta * n * ||C((n tau) . s)||^2 == beta * n^3 *
    # tau^T H tau, which trades at the same order as the count-scaled
    # squared residuals in the weight subproblem
    return params.beta * float(n) ** 3


def initialize(ds, graph, params, seed=0):
    """Spectral warm start.

    F comes from k-means on the bottom-c eigenvectors of the cross-view
    Laplacian, as a normalized cluster indicator plus a small positive
    shift (exact zeros would be frozen by the multiplicative F step).
    W starts at the polar factor of X F, the regression cross-term, so
    feature rows are born with norms proportional to their alignment
    with the embedding; a sign-blind start would let the reweighted
    l2,1 diagonal lock arbitrary rows at zero. tau is uniform,
    indicators all-ones, prototypes come from the initial W.
    """
    from .evaluate import kmeans

    n = ds.n
    c = params.c
    if c > n:
        raise ValueError(f"c={c} exceeds sample count {n}")
    L = graph.cross_view
    try:
        _, vecs = scipy.linalg.eigh(L, subset_by_index=(0, c - 1))
    except scipy.linalg.LinAlgError as exc:
        raise EigenFailureError(f"Laplacian eigensolve failed: {exc}") from exc
    labels = kmeans(vecs, c, seed=seed)
    F = np.zeros((n, c))
    counts = np.bincount(labels, minlength=c).astype(float)
    counts[counts == 0.0] = 1.0
    F[np.arange(n), labels] = 1.0 / np.sqrt(counts[labels])
    F += 0.2 / np.sqrt(n)

    projections = [polar_factor(X @ F) for X in ds.views]
    tau = np.full(n, 1.0 / n)
    prototypes = [causal.select_prototypes(W, params.m) for W in projections]
    indicators = [np.ones((X.shape[0] - 1, len(pr)))
                  for X, pr in zip(ds.views, prototypes)]
    return ModelState(projections=projections, consensus=F, weights=tau,
                      indicators=indicators, prototypes=prototypes)


def update_W(state, ds, params):
    """One orthogonal trace-problem solve per view.

    Majorization step: the l2,1 term enters through the reweighting
    diagonal at the current W, so the solve never increases
    alpha * sum_i tau_i ||x_i^T W - n F_i.||^2 + lam * smoothed-l2,1(W).
    """
    tau = state.weights
    F = ds.n * state.consensus
    out = []
    for X, W in zip(ds.views, state.projections):
        D = l21_reweight(W, params.epsilon)
        Xt = X * tau[None, :]
        A = params.alpha * (Xt @ X.T) + params.lam * D
        A = 0.5 * (A + A.T)
        B = params.alpha * (X @ (tau[:, None] * F))
        out.append(gpi_solve(TraceProblem(A, B), W))
    return out


def update_F(state, ds, graph, params, contexts, sweeps=1):
    """Multiplicative KKT sweep(s) on the nonnegative embedding.

    Signed quantities (the regression target J = Gamma X^T W, the
    Laplacians, and the confounder couplings C^T C F) are split into
    positive and negative parts across numerator and denominator so
    positivity is preserved exactly. Multiplicative steps crawl once
    entries approach the boundary, so a handful of sweeps per outer
    iteration buys a visibly faster objective tail; every sweep is
    individually non-increasing under the same majorization.
    """
    tau = state.weights
    n = ds.n
    V = ds.num_views
    xi = 2.0 * (len(contexts) + params.rho)
    # F-independent regression split, hoisted out of the sweep loop
    lin_num = np.zeros_like(state.consensus)
    lin_den = np.zeros_like(state.consensus)
    for X, W in zip(ds.views, state.projections):
        J = n * (tau[:, None] * (X.T @ W))
        lin_num += params.alpha * _positive_part(J)
        lin_den += params.alpha * _negative_part(J)
    F = state.consensus
    for _ in range(sweeps):
        num = 2.0 * params.rho * F + lin_num
        den = (params.alpha * V * n * n * (tau[:, None] * F)
               + xi * (F @ (F.T @ F)) + lin_den)
        for L in graph.per_view:
            num += _negative_part(L) @ F
            den += _positive_part(L) @ F
        for ctx in contexts:
            u = ctx.indicator ** 2
            ZF = ctx.rest @ F
            # (C^T C / n) F, the coupling from the normalized association term
            Q = (ctx.rest.T @ (u[:, None] * ZF)) / n
            num += 2.0 * _positive_part(Q)
            den += 2.0 * _negative_part(Q)
        F = F * num / (den + 1e-12)
    return F


def update_tau(balance, tau, params, quad_weight=None, lin_weight=None,
               max_steps=500, tol=1e-10):
    """Projected gradient for the box-and-simplex weight problem

        min_tau  quad_weight * tau^T H tau + lin_weight * tau^T g
        s.t.     tau in simplex, weight_floor / n <= tau_i <= weight_cap / n.

    Weights default to the literal subproblem scaling (beta / n^2 on the
    quadratic, alpha on the linear term); the solver passes the
    count-scaled weighting instead. The box is the usual two-sided window
    on importance-style weights: the cap bounds the effective sample size
    from below so a few well-fit samples cannot absorb all the mass, and
    the floor keeps every sample in play so downstream weighted grams
    stay full rank. A vanishing quadratic reduces the problem to a
    linear program solved by greedily capping the smallest-g samples.
    """
    H, g = balance.H, balance.g
    n = g.size
    if quad_weight is None:
        quad_weight = params.beta / float(n * n)
    if lin_weight is None:
        lin_weight = params.alpha
    cap = params.weight_cap / n
    floor = params.weight_floor / n
    lmax = max(estimate_lmax(H), 0.0)
    lip = 2.0 * quad_weight * lmax
    if lip <= 1e-300:
        order = np.lexsort((np.arange(n), g))
        t = np.full(n, floor)
        budget = 1.0 - n * floor
        room = cap - floor
        if room > 0.0 and budget > 0.0:
            full = int(np.floor(budget / room))
            t[order[:full]] = cap
            t[order[min(full, n - 1)]] += budget - full * room
        return t
    step = 1.0 / (lip * 1.05 + 1e-30)
    t = np.asarray(tau, dtype=float).copy()
    for _ in range(max_steps):
        grad = 2.0 * quad_weight * (H @ t) + lin_weight * g
        t_new = box_simplex_project(t - step * grad, floor, cap)
        moved = float(np.linalg.norm(t_new - t))
        t = t_new
        if moved <= tol * max(1.0, float(np.linalg.norm(t))):
            break
    return t


def _weighted_residual_tau_part(ds, state, tau):
    # alpha-free: sum_v sum_i tau_i ||x_i^T W - n F_i.||^2 as a function of tau
    total = np.zeros(ds.n)
    T = ds.n * state.consensus
    for X, W in zip(ds.views, state.projections):
        R = X.T @ W - T
        total += np.sum(R * R, axis=1)
    return float(tau @ total)


def objective(state, ds, graph, params, contexts):
    """The traced objective.

    Regression with smoothed l2,1, the embedding's graph and
    orthogonality penalties, and per-context balance terms (count-scaled
    weighted MMD, association, alignment, l1 on the indicators).
    """
    F = state.consensus
    tau = state.weights
    total = 0.0
    for X, W in zip(ds.views, state.projections):
        R = X.T @ W - ds.n * F
        total += params.alpha * float(tau @ np.sum(R * R, axis=1))
        total += params.lam * l21_norm(W, params.epsilon)
    total += float(np.sum(F * (graph.cross_view @ F)))
    G = F.T @ F - np.eye(F.shape[1])
    total += params.rho * float(np.sum(G * G))
    if contexts:
        coeff = _mmd_coeff(params, ds.n)
        with_l1 = params.ablation == "full"
        for ctx in contexts:
            val, _ = causal.indicator_objective(ctx, tau, F, params.beta,
                                                kernel=params.kernel,
                                                mmd_coeff=coeff)
            total += val
            if with_l1:
                total += params.varrho * float(np.abs(ctx.indicator).sum())
    return total


def _build_contexts(ds, state, params, grams, prototypes=None):
    """Contexts for every live prototype; degenerate exposures are skipped.

    prototypes defaults to the state's current set. Indicator columns
    are carried over by feature identity when a prototype survives
    reselection; new prototypes start at all-ones (or stay pinned there
    under the all_confounders ablation). Updates state in place.
    """
    if prototypes is None:
        prototypes = state.prototypes
    contexts = []
    live = []
    indicators = []
    for v, X in enumerate(ds.views):
        old = {int(f): state.indicators[v][:, j]
               for j, f in enumerate(state.prototypes[v])}
        keep, cols = [], []
        for r in np.asarray(prototypes[v], dtype=int):
            e0 = old.get(int(r))
            if params.ablation == "all_confounders":
                e0 = None
            try:
                ctx = causal.build_confounder_context(
                    X, int(r), e=e0, view=v, gram=grams[v])
            except causal.DegenerateSplitError:
                log.info("view %d feature %d: degenerate split, skipped", v, r)
                continue
            contexts.append(ctx)
            keep.append(int(r))
            cols.append(ctx.indicator)
        live.append(np.array(keep, dtype=int))
        indicators.append(np.stack(cols, axis=1) if cols
                          else np.zeros((X.shape[0] - 1, 0)))
    state.prototypes = live
    state.indicators = indicators
    return contexts


def _sync_indicators(state, contexts, ds):
    cols = {v: [] for v in range(ds.num_views)}
    for ctx in contexts:
        cols[ctx.view].append(ctx.indicator)
    state.indicators = [
        np.stack(cols[v], axis=1) if cols[v]
        else np.zeros((ds.views[v].shape[0] - 1, 0))
        for v in range(ds.num_views)
    ]


def fit(ds, params, seed=0, graph=None, freeze_causal_after=2,
        freeze_indicators_after="follow", callback=None):
    """Run the alternating solver to convergence or max_iter.

    freeze_causal_after=k stops prototype reselection (and with it the
    treatment splits) after outer iteration k; None refreshes every
    iteration, 0 freezes the warm-start set outright, which makes the
    objective trace exactly non-increasing (reselection is the one step
    that can swap terms of the objective). freeze_indicators_after
    controls the indicator anneal the same way and follows
    freeze_causal_after unless given. Returns the final ModelState with
    the per-iteration objective trace attached.
    """
    if freeze_indicators_after == "follow":
        freeze_indicators_after = freeze_causal_after
    if graph is None:
        graph = build_laplacian(ds, params.k_nn)
    state = initialize(ds, graph, params, seed=seed)
    causal_on = params.ablation != "no_causal"
    grams = [X @ X.T for X in ds.views] if causal_on else None
    contexts = _build_contexts(ds, state, params, grams) if causal_on else []
    coeff = _mmd_coeff(params, ds.n)
    stages = {k: [] for k in ("projections", "consensus", "indicators",
                              "balance", "prototypes")}
    state.stage_seconds = stages

    obj = objective(state, ds, graph, params, contexts)
    state.objective_trace.append(obj)
    slack = lambda v: 1e-12 * (1.0 + abs(v))

    for it in range(1, params.max_iter + 1):
        t0 = time.perf_counter()
        state.projections = update_W(state, ds, params)
        stages["projections"].append(time.perf_counter() - t0)

        # guarded multiplicative F sweep: geometric damping toward the
        # previous iterate if the traced objective would rise
        t0 = time.perf_counter()
        before = objective(state, ds, graph, params, contexts)
        F_old = state.consensus
        F_raw = update_F(state, ds, graph, params, contexts, sweeps=F_SWEEPS)
        state.consensus = F_raw
        after = objective(state, ds, graph, params, contexts)
        if after > before + slack(before):
            # multiplicative updates keep zero entries at zero, so a zero
            # denominator always pairs with a zero numerator: ratio 1
            safe = np.where(F_old > 0.0, F_old, 1.0)
            ratio = np.where(F_old > 0.0, F_raw / safe, 1.0)
            for eta in (0.5, 0.25, 0.125, 0.0625):
                state.consensus = F_old * ratio ** eta
                after = objective(state, ds, graph, params, contexts)
                if after <= before + slack(before):
                    break
            else:
                state.consensus = F_old
        stages["consensus"].append(time.perf_counter() - t0)

        if causal_on and contexts:
            anneal = (freeze_indicators_after is None
                      or it <= freeze_indicators_after)
            if params.ablation == "full" and anneal:
                t0 = time.perf_counter()
                cols, stalls = causal.update_indicators(
                    contexts, state.weights, state.consensus, params,
                    mmd_coeff=coeff)
                for ctx, col in zip(contexts, cols):
                    ctx.indicator = col
                _sync_indicators(state, contexts, ds)
                if any(stalls):
                    log.info("iteration %d: %d indicator column(s) stalled",
                             it, sum(stalls))
                stages["indicators"].append(time.perf_counter() - t0)

            t0 = time.perf_counter()
            balance = causal.assemble_balance_system(
                contexts, ds.views, state.projections, state.consensus,
                state.weights, kernel=params.kernel)
            tau_old = state.weights
            tau_raw = update_tau(balance, tau_old, params,
                                 quad_weight=coeff, lin_weight=params.alpha)
            # the subproblem's linear term uses unsquared residuals; guard
            # against ascent of the traced (squared-residual) objective
            def tau_part(t):
                return (coeff * float(t @ (balance.H @ t))
                        + params.alpha * _weighted_residual_tau_part(ds, state, t))
            base = tau_part(tau_old)
            cand = tau_raw
            for theta in (1.0, 0.5, 0.25, 0.125):
                cand = (1.0 - theta) * tau_old + theta * tau_raw
                if tau_part(cand) <= base + slack(base):
                    break
            else:
                cand = tau_old
            state.weights = cand
            stages["balance"].append(time.perf_counter() - t0)

            if freeze_causal_after is None or it < freeze_causal_after:
                t0 = time.perf_counter()
                fresh = [causal.select_prototypes(W, params.m)
                         for W in state.projections]
                contexts = _build_contexts(ds, state, params, grams,
                                           prototypes=fresh)
                stages["prototypes"].append(time.perf_counter() - t0)

        obj = objective(state, ds, graph, params, contexts)
        state.objective_trace.append(obj)
        state.iteration = it
        if callback is not None:
            callback(state)
        prev = state.objective_trace[-2]
        if abs(obj - prev) <= params.tol * (1.0 + abs(prev)):
            state.converged = True
            break
    return state


def rank_features(state):
    """Per-view feature order (descending projection row norm) and scores."""
    out = []
    for W in state.projections:
        scores = np.linalg.norm(W, axis=1)
        order = np.lexsort((np.arange(scores.size), -scores))
        out.append((order, scores))
    return out


def proportional_quotas(dims, h):
    """Split a global budget h across views proportionally to d_v,
    rounding by largest remainder (ties to the lower view index)."""
    dims = np.asarray(dims, dtype=float)
    if h < 0 or h > dims.sum():
        raise ValueError("budget outside [0, total features]")
    share = h * dims / dims.sum()
    base = np.floor(share).astype(int)
    rem = int(h - base.sum())
    if rem:
        frac_order = np.lexsort((np.arange(dims.size), -(share - base)))
        for i in frac_order[:rem]:
            base[i] += 1
    return base.tolist()


def select_features(state, dims, ratio=None, count=None):
    """Top-ranked features per view under a proportional global budget.

    Either ratio (fraction of all features) or count (global h) must be
    given. Returns per-view index arrays in rank order.
    """
    if (ratio is None) == (count is None):
        raise ValueError("give exactly one of ratio, count")
    total = int(np.sum(dims))
    if ratio is not None:
        count = int(np.floor(ratio * total + 0.5))
    quotas = proportional_quotas(dims, count)
    ranking = rank_features(state)
    return [order[:q] for (order, _), q in zip(ranking, quotas)]


def save_checkpoint(state, path, meta=None):
    """Serialize a ModelState to .npz (arrays) with a JSON meta record."""
    arrays = {
        "consensus": state.consensus,
        "weights": state.weights,
        "trace": np.asarray(state.objective_trace, dtype=float),
    }
    for v, W in enumerate(state.projections):
        arrays[f"projection_{v}"] = W
    for v, E in enumerate(state.indicators):
        arrays[f"indicator_{v}"] = E
    for v, P in enumerate(state.prototypes):
        arrays[f"prototype_{v}"] = np.asarray(P, dtype=np.int64)
    meta_doc = {
        "num_views": len(state.projections),
        "iteration": state.iteration,
        "converged": bool(state.converged),
    }
    if meta:
        meta_doc.update(meta)
    arrays["meta"] = np.array(json.dumps(meta_doc, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint. Returns (state, meta dict)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        V = meta["num_views"]
        state = ModelState(
            projections=[z[f"projection_{v}"] for v in range(V)],
            consensus=z["consensus"],
            weights=z["weights"],
            indicators=[z[f"indicator_{v}"] for v in range(V)],
            prototypes=[z[f"prototype_{v}"] for v in range(V)],
            iteration=int(meta["iteration"]),
            objective_trace=list(z["trace"]),
            converged=bool(meta["converged"]),
        )
    return state, meta
