"""Multi-view dataset container, manifest I/O and standardization."""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np


class DatasetError(Exception):
    pass


class MissingFileError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class NonNumericCellError(DatasetError):
    """Raised with the file, row and column of the offending cell."""


class EmptyViewError(DatasetError):
    pass


@dataclass
class HyperParams:
    """Model hyperparameters. c is the embedding dimension / cluster count."""

    c: int
    m: int = 15
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    k_nn: int = 5
    rho: float = 1e3
    varrho: float = 1e-1
    epsilon: float = 1e-8
    tol: float = 1e-4
    max_iter: int = 50
    weight_cap: float = 1.2
    weight_floor: float = 0.1
    ablation: str = "full"
    kernel: str = "linear"

    def __post_init__(self):
        if self.c < 1:
            raise ValueError("c must be a positive integer")
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if self.ablation not in ("full", "no_causal", "all_confounders"):
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.kernel not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        for name in ("alpha", "beta", "lam", "rho", "varrho", "epsilon", "tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.weight_cap < 1.0:
            raise ValueError("weight_cap must be at least 1 (x uniform)")
        if not 0.0 <= self.weight_floor <= 1.0:
            raise ValueError("weight_floor must lie in [0, 1] (x uniform)")


@dataclass
class MultiViewDataset:
    """Views are d_v x n float arrays (features as rows) over shared samples.

    Arrays are frozen after validation; transforms return new datasets.
    """

    views: list
    labels: np.ndarray | None = None
    view_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.views:
            raise EmptyViewError("dataset has no views")
        frozen = []
        n = None
        for i, X in enumerate(self.views):
            X = np.ascontiguousarray(X, dtype=float)
            if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
                raise EmptyViewError(f"view {i} is empty or not 2-d")
            if n is None:
                n = X.shape[1]
            elif X.shape[1] != n:
                raise ShapeMismatchError(
                    f"view {i} has {X.shape[1]} samples, expected {n}")
            if not np.all(np.isfinite(X)):
                r, c = np.argwhere(~np.isfinite(X))[0]
                raise NonNumericCellError(
                    f"view {i} has a non-finite entry at row {r}, column {c}")
            X.flags.writeable = False
            frozen.append(X)
        self.views = frozen
        if not self.view_names:
            self.view_names = [f"view{i}" for i in range(len(frozen))]
        elif len(self.view_names) != len(frozen):
            raise ShapeMismatchError("one name per view required")
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.ndim != 1 or y.shape[0] != n:
                raise ShapeMismatchError(
                    f"labels length {y.shape[0]} != sample count {n}")
            y = y.astype(np.int64)
            y.flags.writeable = False
            self.labels = y

    @property
    def n(self):
        return self.views[0].shape[1]

    @property
    def num_views(self):
        return len(self.views)

    @property
    def dims(self):
        return [X.shape[0] for X in self.views]


@dataclass
class StandardizeReport:
    """Bookkeeping from standardize: per-view indices of zero-variance rows."""

    zero_variance: list


def _read_matrix(path):
    """Parse a numeric CSV into a 2-d float array, reporting bad cells."""
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    rows = []
    width = None
    with open(path, newline="") as fh:
        for r, rec in enumerate(csv.reader(fh)):
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise ShapeMismatchError(
                    f"{path}: row {r} has {len(rec)} cells, expected {width}")
            vals = []
            for c, cell in enumerate(rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCellError(
                        f"{path}: non-numeric cell at row {r}, column {c}: {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise NonNumericCellError(
                        f"{path}: non-finite cell at row {r}, column {c}: {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise EmptyViewError(f"{path}: no rows")
    return np.array(rows, dtype=float)


def load_dataset(manifest_path):
    """Load a dataset from a JSON manifest.

    Manifest schema: {"views": [{"name": ..., "csv": ...}, ...],
    "labels_csv": optional}. CSV paths resolve relative to the manifest.
    """
    if not os.path.isfile(manifest_path):
        raise MissingFileError(f"no such manifest: {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{manifest_path}: bad JSON: {exc}") from None
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = manifest.get("views")
    if not entries:
        raise EmptyViewError(f"{manifest_path}: manifest lists no views")
    views, names = [], []
    for e in entries:
        names.append(e["name"])
        views.append(_read_matrix(os.path.join(base, e["csv"])))
    labels = None
    if manifest.get("labels_csv"):
        raw = _read_matrix(os.path.join(base, manifest["labels_csv"]))
        flat = raw.ravel()
        if not np.all(flat == np.round(flat)):
            raise NonNumericCellError(
                f"{manifest_path}: labels must be integers")
        labels = flat.astype(np.int64)
        if labels.min() == 1:
            labels = labels - 1  # accept 1-based labels
    return MultiViewDataset(views=views, labels=labels, view_names=names)


def save_dataset(ds, manifest_path):
    """Write views (and labels) as CSV next to a JSON manifest.

    Floats are written with shortest round-trip repr, so
    load(save(ds)) reproduces the arrays bit for bit.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(base, exist_ok=True)
    entries = []
    for name, X in zip(ds.view_names, ds.views):
        fname = f"{name}.csv"
        with open(os.path.join(base, fname), "w", newline="") as fh:
            for row in X:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
        entries.append({"name": name, "csv": fname})
    manifest = {"views": entries}
    if ds.labels is not None:
        with open(os.path.join(base, "labels.csv"), "w", newline="") as fh:
            for v in ds.labels:
                fh.write(f"{int(v)}\n")
        manifest["labels_csv"] = "labels.csv"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def standardize(ds):
    """Center and scale every feature row to zero mean, unit variance.

    Zero-variance rows become all zeros and are reported, not dropped.
    Idempotent up to floating-point noise. Returns (dataset, report).
    """
    views = []
    flagged = []
    for X in ds.views:
        mu = X.mean(axis=1, keepdims=True)
        sd = X.std(axis=1, keepdims=True)
        dead = np.nonzero(sd.ravel() == 0.0)[0]
        safe = np.where(sd == 0.0, 1.0, sd)
        Z = (X - mu) / safe
        if dead.size:
            Z[dead, :] = 0.0
        views.append(Z)
        flagged.append(dead)
    out = MultiViewDataset(views=views, labels=ds.labels,
                           view_names=list(ds.view_names))
    return out, StandardizeReport(zero_variance=flagged)
