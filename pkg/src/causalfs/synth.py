"""Synthetic multi-view benchmark with known causal structure.

Per view: a small causal block drives the labels, a spurious block is a
linear readout of a label-dependent confounder (so it correlates with
classes without causing them), and a noise block is pure Gaussian.
Labels depend only on the causal stream; every nuisance block can be
regenerated without touching them.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import MultiViewDataset


@dataclass
class SynthSpec:
    n: int = 500
    causal: int = 10
    spurious: tuple = (260, 240)
    noise: tuple = (150, 150)
    classes: int = 4
    confounder_dim: int = 5
    confound_strength: float = 1.5
    spurious_noise: float = 0.5
    causal_cohesion: float = 0.6
    aligned_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.spurious = tuple(int(s) for s in self.spurious)
        self.noise = tuple(int(s) for s in self.noise)
        if len(self.spurious) != len(self.noise):
            raise ValueError("spurious and noise must cover the same views")
        if self.n < 2 * self.classes:
            raise ValueError("need at least two samples per class")

    @property
    def num_views(self):
        return len(self.spurious)

    @property
    def dims(self):
        return [self.causal + s + z for s, z in zip(self.spurious, self.noise)]


def _unit_rows(rng, shape):
    M = rng.standard_normal(shape)
    return M / np.linalg.norm(M, axis=1, keepdims=True)


def label_rule(blocks, weights, classes):
    """Quantile-bin the weighted causal score into classes."""
    score = np.zeros(blocks[0].shape[1])
    for B, w in zip(blocks, weights):
        score += w @ B
    edges = np.quantile(score, np.arange(1, classes) / classes)
    return np.searchsorted(edges, score, side="right").astype(np.int64)


def generate(spec, nuisance_seed=None):
    """Build the benchmark. Returns (dataset, roles).

    roles[v] is a string array over view v's features with values
    causal / spurious / noise, in that block order. nuisance_seed
    redraws the confounder, spurious and noise blocks while leaving the
    causal blocks and labels untouched (they live on separate seed
    streams).
    """
    root = np.random.SeedSequence(spec.seed)
    causal_ss, label_ss, nuisance_default = root.spawn(3)
    if nuisance_seed is None:
        nuisance_root = nuisance_default
    else:
        nuisance_root = np.random.SeedSequence((spec.seed, int(nuisance_seed)))

    rng_c = np.random.default_rng(causal_ss)
    # causal features share a per-dataset latent factor (cohesion a), so
    # each one is marginally standard Gaussian yet individually carries
    # the label signal instead of diluting it across the whole block
    a = spec.causal_cohesion
    if not 0.0 <= a < 1.0:
        raise ValueError("causal_cohesion must lie in [0, 1)")
    latent = rng_c.standard_normal(spec.n)
    causal_blocks = [a * latent
                     + np.sqrt(1.0 - a * a)
                     * rng_c.standard_normal((spec.causal, spec.n))
                     for _ in range(spec.num_views)]

    rng_l = np.random.default_rng(label_ss)
    weights = [1.0 + 0.5 * rng_l.random(spec.causal)
               for _ in range(spec.num_views)]
    y = label_rule(causal_blocks, weights, spec.classes)

    views, roles = [], []
    for v, child in enumerate(nuisance_root.spawn(spec.num_views)):
        rng = np.random.default_rng(child)
        centers = spec.confound_strength * _unit_rows(
            rng, (spec.classes, spec.confounder_dim))
        conf = centers[y].T + rng.standard_normal((spec.confounder_dim, spec.n))
        readout = _unit_rows(rng, (spec.spurious[v], spec.confounder_dim))
        n_strong = int(round(spec.aligned_frac * spec.spurious[v]))
        if n_strong:
            # a slice of the readouts points along the class-contrast
            # directions of the confounder: those features correlate with
            # the labels as strongly as causal ones, yet entirely through
            # the confounder
            contrast = centers - centers.mean(axis=0)
            basis = np.linalg.svd(contrast, full_matrices=False)[2]
            rank = max(1, np.linalg.matrix_rank(contrast))
            picks = basis[np.arange(n_strong) % rank]
            picks = picks + 0.15 * rng.standard_normal(picks.shape)
            readout[:n_strong] = picks / np.linalg.norm(picks, axis=1,
                                                        keepdims=True)
        spurious = readout @ conf + spec.spurious_noise * rng.standard_normal(
            (spec.spurious[v], spec.n))
        noise = rng.standard_normal((spec.noise[v], spec.n))
        views.append(np.vstack([causal_blocks[v], spurious, noise]))
        roles.append(np.array(["causal"] * spec.causal
                              + ["spurious"] * spec.spurious[v]
                              + ["noise"] * spec.noise[v]))
    ds = MultiViewDataset(views=views, labels=y,
                          view_names=[f"view{v}" for v in range(spec.num_views)])
    return ds, roles


def write_roles(roles, path):
    """CSV of (view, feature, role) triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "feature", "role"])
        for v, rv in enumerate(roles):
            for f, role in enumerate(rv):
                w.writerow([v, f, role])


def load_roles(path):
    """Inverse of write_roles. Returns per-view role string arrays."""
    per_view = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["view", "feature", "role"]:
            raise ValueError(f"{path}: not a roles file")
        for view, feature, role in reader:
            per_view.setdefault(int(view), {})[int(feature)] = role
    out = []
    for v in sorted(per_view):
        entries = per_view[v]
        out.append(np.array([entries[f] for f in range(len(entries))]))
    return out
