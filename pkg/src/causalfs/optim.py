"""Shared numerical building blocks for the block-coordinate solver.

Orthogonality-constrained trace minimization (generalized power iteration),
euclidean projections onto the simplex and its box-restricted slice, the
box-constrained l1 proximal map and the iteratively-reweighted l2,1
diagonal.
"""

import numpy as np


class NonSymmetricError(ValueError):
    """Quadratic coefficient matrix is not symmetric within tolerance."""


class TraceProblem:
    """min_W Tr(W^T A W) - 2 Tr(W^T B) over W^T W = I.

    A must be symmetric (d x d), B is d x c with c <= d.
    """

    def __init__(self, A, B):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        asym = np.abs(A - A.T).max() if A.size else 0.0
        if asym > 1e-10 * max(1.0, np.abs(A).max()):
            raise NonSymmetricError(f"A asymmetric: max |A - A.T| = {asym:.3e}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValueError("B must be d x c with matching d")
        if B.shape[1] > B.shape[0]:
            raise ValueError("need c <= d for an orthonormal W")
        self.A = A
        self.B = B


def estimate_lmax(A, iters=50):
    """Largest-eigenvalue estimate of symmetric A by power iteration.

    Deterministic start (ones plus a fixed small tilt so a zero-sum top
    eigenvector cannot hide). Returns a Rayleigh quotient, which for
    symmetric A never exceeds the true lambda_max.
    """
    d = A.shape[0]
    if d == 0:
        return 0.0
    rng = np.random.default_rng(0)
    v = np.ones(d) + 1e-6 * rng.standard_normal(d)
    v /= np.linalg.norm(v)
    # shift so power iteration tracks the largest-magnitude end even when
    # A has a dominant negative eigenvalue
    shift = np.abs(A).sum(axis=1).max()
    for _ in range(iters):
        w = A @ v + shift * v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(v @ (A @ v))


def polar_factor(M):
    """Orthonormal polar factor U V^T of M (d x c, c <= d).

    Sign convention: the largest-magnitude entry of each left singular
    vector is made positive, so the factor is reproducible across runs.
    """
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    for k in range(U.shape[1]):
        i = np.argmax(np.abs(U[:, k]))
        if U[i, k] < 0:
            U[:, k] = -U[:, k]
            Vt[k, :] = -Vt[k, :]
    return U @ Vt


def gpi_solve(problem, W0, iters=30, tol=1e-10):
    """Generalized power iteration for the orthogonality-constrained
    trace problem.

    Lifts A to gamma*I - A (gamma above lambda_max so the surrogate
    Tr(W^T (gamma I - A) W + 2 W^T B) is being maximized by the polar
    step) and repeats W <- polar(gamma W - A W + B). The surrogate is
    non-decreasing; stops on relative surrogate change below tol.
    """
    A, B = problem.A, problem.B
    W = np.asarray(W0, dtype=float)
    if W.shape != B.shape:
        raise ValueError("W0 shape must match B")
    ortho = np.abs(W.T @ W - np.eye(W.shape[1])).max()
    if ortho > 1e-8:
        raise ValueError(f"W0 not orthonormal: max |W0^T W0 - I| = {ortho:.3e}")
    lam = estimate_lmax(A, iters=50)
    gamma = lam + 0.01 * abs(lam) + 1e-8
    prev = None
    for _ in range(iters):
        M = gamma * W - A @ W + B
        W = polar_factor(M)
        val = gamma * W.shape[1] - float(np.sum(W * (A @ W))) + 2.0 * float(np.sum(W * B))
        if prev is not None and abs(val - prev) <= tol * (1.0 + abs(prev)):
            break
        prev = val
    return W


def simplex_project(y):
    """Euclidean projection of y onto the probability simplex.

    Sort-and-threshold: find the largest support size rho with
    u_rho > (cumsum(u)_rho - 1)/rho, clip at that threshold.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise ValueError("empty input")
    if n == 1:
        return np.ones(1)
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, n + 1)
    rho = np.nonzero(u * idx > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def box_simplex_project(y, lo=0.0, hi=np.inf):
    """Euclidean projection onto {t : lo <= t_i <= hi, sum t = 1}.

    clip(y - theta, lo, hi) with the threshold theta located exactly:
    the mass m(theta) = sum clip(y - theta, lo, hi) is piecewise linear
    and non-increasing with breakpoints at y_i - hi and y_i - lo, so one
    sorted sweep brackets the crossing segment, and the active sets are
    re-solved exactly so the mass constraint holds to machine precision.
    lo = 0, hi = inf falls back to the plain simplex.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise ValueError("empty input")
    if lo == 0.0 and not np.isfinite(hi):
        return simplex_project(y)
    if not 0.0 <= lo <= hi:
        raise ValueError("need 0 <= lo <= hi")
    if n * lo > 1.0 or n * hi < 1.0:
        raise ValueError(f"unit mass infeasible for box [{lo!r}, {hi!r}] over {n}")
    hi = min(hi, 1.0)  # the mass constraint makes any larger cap slack
    if lo == hi:
        return np.full(n, lo)
    ys = np.sort(y)
    prefix = np.concatenate(([0.0], np.cumsum(ys)))
    cand = np.concatenate([y - hi, y - lo])
    n_hi = n - np.searchsorted(ys, cand + hi, side="left")
    below = np.searchsorted(ys, cand + lo, side="right")
    cut_hi = n - n_hi
    free_count = cut_hi - below
    mass = (below * lo + n_hi * hi
            + prefix[cut_hi] - prefix[below] - cand * free_count)
    a = cand[mass >= 1.0].max()
    b = cand[mass <= 1.0].min()
    # exact theta for the bracketed active sets; the segment midpoint
    # classifies face-touching entries unambiguously, the ends cover an
    # exact hit at a breakpoint
    for theta in (0.5 * (a + b), a, b):
        at_hi = y - theta >= hi
        at_lo = y - theta <= lo
        free = ~at_hi & ~at_lo
        k = int(free.sum())
        if k == 0:
            t = np.where(at_hi, hi, lo)
        else:
            mass = 1.0 - at_hi.sum() * hi - at_lo.sum() * lo
            exact = (y[free].sum() - mass) / k
            t = np.clip(y - exact, lo, hi)
        if abs(t.sum() - 1.0) <= 1e-12:
            return t
    t = np.clip(y - b, lo, hi)
    room = np.clip(hi - t, 0.0, None) if t.sum() < 1.0 else np.clip(t - lo, 0.0, None)
    scale = (1.0 - t.sum()) / room.sum() if room.sum() > 0.0 else 0.0
    return t + scale * room


def prox_l1_box(x, step, weight):
    """Proximal map of weight*||.||_1 + indicator of [0, 1]^d at x.

    Soft-threshold by step*weight, then clip into the unit box. The two
    operations commute here because the box is an interval product.
    """
    t = step * weight
    z = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return np.clip(z, 0.0, 1.0)


def l21_reweight(W, epsilon):
    """Diagonal D with D_kk = 1 / (2 sqrt(||W_k.||^2 + epsilon)).

    Majorizer weights for the smoothed l2,1 norm; epsilon > 0 keeps the
    weights finite on zero rows.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    sq = np.sum(np.asarray(W, dtype=float) ** 2, axis=1)
    return np.diag(1.0 / (2.0 * np.sqrt(sq + epsilon)))


def l21_norm(W, epsilon=0.0):
    """sum_k sqrt(||W_k.||^2 + epsilon); plain l2,1 norm when epsilon=0."""
    sq = np.sum(np.asarray(W, dtype=float) ** 2, axis=1)
    return float(np.sum(np.sqrt(sq + epsilon)))
