"""Dataset container, manifest round-trips and standardization."""

import json

import numpy as np
import pytest

from causalfs.dataset import (EmptyViewError, HyperParams, MissingFileError,
                              MultiViewDataset, NonNumericCellError,
                              ShapeMismatchError, load_dataset, save_dataset,
                              standardize)


def small_ds(labels=None):
    rng = np.random.default_rng(0)
    return MultiViewDataset(
        views=[rng.standard_normal((6, 12)), rng.standard_normal((4, 12))],
        labels=labels)


class TestHyperParams:
    def test_defaults_valid(self):
        hp = HyperParams(c=4)
        assert hp.m == 15 and hp.alpha == hp.beta == hp.lam == 1.0

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            HyperParams(c=0)
        with pytest.raises(ValueError):
            HyperParams(c=4, m=0)
        with pytest.raises(ValueError):
            HyperParams(c=4, alpha=-1.0)
        with pytest.raises(ValueError):
            HyperParams(c=4, ablation="half")
        with pytest.raises(ValueError):
            HyperParams(c=4, kernel="cubic")
        with pytest.raises(ValueError):
            HyperParams(c=4, weight_cap=0.5)
        with pytest.raises(ValueError):
            HyperParams(c=4, weight_floor=1.5)


class TestMultiViewDataset:
    def test_basic_properties(self):
        ds = small_ds()
        assert ds.n == 12 and ds.num_views == 2 and ds.dims == [6, 4]
        assert ds.view_names == ["view0", "view1"]

    def test_views_are_frozen(self):
        ds = small_ds()
        with pytest.raises(ValueError):
            ds.views[0][0, 0] = 7.0

    def test_sample_count_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            MultiViewDataset(views=[np.zeros((3, 5)), np.zeros((3, 6))])

    def test_no_views(self):
        with pytest.raises(EmptyViewError):
            MultiViewDataset(views=[])

    def test_non_finite_entry(self):
        bad = np.zeros((2, 4))
        bad[1, 2] = np.nan
        with pytest.raises(NonNumericCellError):
            MultiViewDataset(views=[bad])

    def test_label_length_checked(self):
        with pytest.raises(ShapeMismatchError):
            small_ds(labels=np.zeros(5, dtype=int))


class TestManifestRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        ds = small_ds(labels=np.random.default_rng(1).integers(0, 3, 12))
        path = save_dataset(ds, str(tmp_path / "manifest.json"))
        back = load_dataset(path)
        assert back.view_names == ds.view_names
        for X, Y in zip(ds.views, back.views):
            assert np.array_equal(X, Y)  # exact, not approximate
        assert np.array_equal(back.labels, ds.labels)

    def test_one_based_labels_accepted(self, tmp_path):
        p = tmp_path / "m.json"
        (tmp_path / "v.csv").write_text("1.0,2.0\n3.0,4.0\n")
        (tmp_path / "y.csv").write_text("1\n2\n")
        p.write_text(json.dumps(
            {"views": [{"name": "v", "csv": "v.csv"}], "labels_csv": "y.csv"}))
        ds = load_dataset(str(p))
        assert ds.labels.tolist() == [0, 1]

    def test_missing_manifest(self):
        with pytest.raises(MissingFileError):
            load_dataset("/nonexistent/manifest.json")

    def test_missing_view_csv(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"views": [{"name": "v", "csv": "gone.csv"}]}))
        with pytest.raises(MissingFileError):
            load_dataset(str(p))

    def test_ragged_csv_rejected(self, tmp_path):
        p = tmp_path / "m.json"
        (tmp_path / "v.csv").write_text("1,2,3\n4,5\n")
        p.write_text(json.dumps({"views": [{"name": "v", "csv": "v.csv"}]}))
        with pytest.raises(ShapeMismatchError):
            load_dataset(str(p))

    def test_non_numeric_cell_located(self, tmp_path):
        p = tmp_path / "m.json"
        (tmp_path / "v.csv").write_text("1,2\n3,oops\n")
        p.write_text(json.dumps({"views": [{"name": "v", "csv": "v.csv"}]}))
        with pytest.raises(NonNumericCellError, match="row 1, column 1"):
            load_dataset(str(p))

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "m.json"
        (tmp_path / "v.csv").write_text("1,2\n\n3,4\n")
        p.write_text(json.dumps({"views": [{"name": "v", "csv": "v.csv"}]}))
        assert load_dataset(str(p)).views[0].shape == (2, 2)


class TestStandardize:
    def test_zero_mean_unit_variance(self):
        ds = small_ds()
        out, report = standardize(ds)
        for Z in out.views:
            np.testing.assert_allclose(Z.mean(axis=1), 0.0, atol=1e-12)
            np.testing.assert_allclose(Z.std(axis=1), 1.0, atol=1e-12)
        assert all(d.size == 0 for d in report.zero_variance)

    def test_constant_rows_zeroed_and_reported(self):
        X = np.vstack([np.full(8, 3.0), np.arange(8.0)])
        out, report = standardize(MultiViewDataset(views=[X]))
        assert report.zero_variance[0].tolist() == [0]
        np.testing.assert_array_equal(out.views[0][0], np.zeros(8))

    def test_idempotent(self):
        ds = small_ds()
        once, _ = standardize(ds)
        twice, _ = standardize(once)
        for A, B in zip(once.views, twice.views):
            np.testing.assert_allclose(A, B, atol=1e-12)

    def test_labels_carried_through(self):
        y = np.random.default_rng(2).integers(0, 4, 12)
        out, _ = standardize(small_ds(labels=y))
        assert np.array_equal(out.labels, y)
