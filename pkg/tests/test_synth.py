"""Synthetic benchmark generator: structure, seeding, confounding."""

import numpy as np
import pytest

from causalfs.synth import SynthSpec, generate, load_roles, write_roles


def between_class_ratio(rows, y):
    """Mean share of per-row variance explained by class membership."""
    ratios = []
    for row in rows:
        mu = row.mean()
        between = 0.0
        for k in np.unique(y):
            sel = y == k
            between += sel.sum() * (row[sel].mean() - mu) ** 2
        ratios.append(between / (row.size * row.var() + 1e-30))
    return float(np.mean(ratios))


class TestSpecValidation:
    def test_defaults_describe_two_views(self):
        spec = SynthSpec()
        assert spec.num_views == 2
        assert spec.dims == [420, 400]

    def test_view_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(spurious=(10, 10), noise=(5,))

    def test_tiny_sample_count_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(n=5, classes=4)

    def test_cohesion_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            generate(SynthSpec(n=50, causal=3, spurious=(8,), noise=(4,),
                               causal_cohesion=1.0))


class TestStructure:
    def _small(self, **kw):
        base = dict(n=80, causal=4, spurious=(12, 10), noise=(6, 8),
                    classes=3, seed=7)
        base.update(kw)
        return SynthSpec(**base)

    def test_shapes_roles_and_labels(self):
        spec = self._small()
        ds, roles = generate(spec)
        assert [X.shape for X in ds.views] == [(22, 80), (22, 80)]
        assert ds.labels.shape == (80,)
        assert set(np.unique(ds.labels)) == {0, 1, 2}
        for v, rv in enumerate(roles):
            assert rv.shape == (spec.dims[v],)
            counts = {role: int((rv == role).sum()) for role in
                      ("causal", "spurious", "noise")}
            assert counts == {"causal": 4, "spurious": spec.spurious[v],
                              "noise": spec.noise[v]}
            # block order: causal band first
            assert (rv[:4] == "causal").all()

    def test_quantile_labels_are_balanced(self):
        ds, _ = generate(self._small(n=90))
        counts = np.bincount(ds.labels)
        assert counts.max() - counts.min() <= 1

    def test_generation_is_deterministic(self):
        spec = self._small()
        a, _ = generate(spec)
        b, _ = generate(spec)
        for Xa, Xb in zip(a.views, b.views):
            np.testing.assert_array_equal(Xa, Xb)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_changes_data(self):
        a, _ = generate(self._small(seed=1))
        b, _ = generate(self._small(seed=2))
        assert not np.array_equal(a.views[0], b.views[0])


class TestNuisanceReseed:
    def test_labels_and_causal_blocks_invariant(self):
        spec = SynthSpec(n=100, causal=5, spurious=(15,), noise=(10,), seed=3)
        base, _ = generate(spec)
        redraw, _ = generate(spec, nuisance_seed=11)
        np.testing.assert_array_equal(base.labels, redraw.labels)
        np.testing.assert_array_equal(base.views[0][:5], redraw.views[0][:5])
        assert not np.allclose(base.views[0][5:], redraw.views[0][5:])

    def test_distinct_nuisance_seeds_differ(self):
        spec = SynthSpec(n=100, causal=5, spurious=(15,), noise=(10,), seed=3)
        a, _ = generate(spec, nuisance_seed=1)
        b, _ = generate(spec, nuisance_seed=2)
        assert not np.allclose(a.views[0][5:], b.views[0][5:])


class TestConfounding:
    def test_causal_rows_carry_label_signal(self):
        ds, roles = generate(SynthSpec(n=400, seed=0))
        X, rv = ds.views[0], roles[0]
        y = ds.labels
        causal = between_class_ratio(X[rv == "causal"], y)
        noise = between_class_ratio(X[rv == "noise"], y)
        assert causal > 5 * noise

    def test_confound_strength_drives_spurious_signal(self):
        weak, roles_w = generate(SynthSpec(n=400, seed=0, confound_strength=0.0))
        strong, roles_s = generate(SynthSpec(n=400, seed=0, confound_strength=2.0))
        yw, ys = weak.labels, strong.labels
        rw = between_class_ratio(weak.views[0][roles_w[0] == "spurious"], yw)
        rs = between_class_ratio(strong.views[0][roles_s[0] == "spurious"], ys)
        assert rs > 5 * rw
        # at zero strength the spurious block is label-blind noise
        noise_level = between_class_ratio(weak.views[0][roles_w[0] == "noise"], yw)
        assert rw < 3 * noise_level

    def test_aligned_slice_matches_causal_signal_strength(self):
        spec = SynthSpec(n=500, seed=1)
        ds, roles = generate(spec)
        X, rv, y = ds.views[0], roles[0], ds.labels
        n_aligned = int(round(spec.aligned_frac * spec.spurious[0]))
        spur = np.nonzero(rv == "spurious")[0]
        aligned = between_class_ratio(X[spur[:n_aligned]], y)
        causal = between_class_ratio(X[rv == "causal"], y)
        assert aligned > 0.5 * causal


class TestRolesRoundTrip:
    def test_write_then_load(self, tmp_path):
        _, roles = generate(SynthSpec(n=60, causal=3, spurious=(7, 5),
                                      noise=(4, 6), classes=3))
        path = tmp_path / "roles.csv"
        write_roles(roles, path)
        back = load_roles(path)
        assert len(back) == len(roles)
        for a, b in zip(roles, back):
            np.testing.assert_array_equal(a, b)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n0,0,causal\n")
        with pytest.raises(ValueError):
            load_roles(path)
