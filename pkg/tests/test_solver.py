"""Alternating solver: invariants, monotone traces, ablations,
ranking/selection, checkpoints."""

import numpy as np
import pytest

import causalfs.solver as solver
from causalfs.dataset import HyperParams, standardize
from causalfs.solver import (ModelState, fit, initialize, load_checkpoint,
                             proportional_quotas, rank_features,
                             save_checkpoint, select_features, update_F)
from causalfs.graph import build_laplacian
from causalfs.synth import SynthSpec, generate


@pytest.fixture(scope="module")
def small_ds():
    spec = SynthSpec(n=60, causal=4, spurious=(20, 18), noise=(10, 12),
                     classes=3, seed=11)
    return standardize(generate(spec)[0])[0]


@pytest.fixture(scope="module")
def fitted(small_ds):
    params = HyperParams(c=3, m=5, max_iter=6, tol=0.0)
    return fit(small_ds, params, seed=0)


class TestInvariants:
    def test_projections_orthonormal(self, fitted):
        for W in fitted.projections:
            err = np.linalg.norm(W.T @ W - np.eye(W.shape[1]))
            assert err <= 1e-8

    def test_weights_in_box_simplex(self, small_ds, fitted):
        tau = fitted.weights
        n = small_ds.n
        assert tau.min() >= 0.1 / n - 1e-12
        assert tau.max() <= 1.2 / n + 1e-12
        assert abs(tau.sum() - 1.0) <= 1e-10

    def test_consensus_nonnegative(self, fitted):
        assert fitted.consensus.min() >= -1e-12

    def test_indicators_in_unit_box(self, fitted):
        for E in fitted.indicators:
            if E.size:
                assert E.min() >= 0.0 and E.max() <= 1.0

    def test_trace_records_every_iteration(self, fitted):
        assert fitted.iteration == 6
        assert len(fitted.objective_trace) == 7
        assert not fitted.converged

    def test_objective_decreases_overall(self, fitted):
        trace = fitted.objective_trace
        assert trace[-1] < trace[0]

    def test_stage_timings_collected(self, fitted):
        for key in ("projections", "consensus", "balance"):
            assert len(fitted.stage_seconds[key]) == 6


class TestMonotonicity:
    def test_frozen_prototype_trace_never_increases(self, small_ds):
        params = HyperParams(c=3, m=5, max_iter=8, tol=0.0)
        state = fit(small_ds, params, seed=0, freeze_causal_after=0,
                    freeze_indicators_after=None)
        tr = np.asarray(state.objective_trace)
        diffs = np.diff(tr)
        assert (diffs <= 1e-8 * np.abs(tr[:-1])).all()

    def test_tolerance_stop_sets_converged(self, small_ds):
        params = HyperParams(c=3, m=5, max_iter=50, tol=1e-2)
        state = fit(small_ds, params, seed=0)
        assert state.converged
        assert state.iteration < 50
        a, b = state.objective_trace[-2:]
        assert abs(b - a) <= 1e-2 * (1.0 + abs(a))


class TestAblations:
    def test_no_causal_keeps_uniform_weights(self, small_ds):
        params = HyperParams(c=3, m=5, max_iter=4, tol=0.0,
                             ablation="no_causal")
        state = fit(small_ds, params, seed=0)
        np.testing.assert_allclose(state.weights, 1.0 / small_ds.n)
        for E in state.indicators:
            assert (E == 1.0).all()

    def test_all_confounders_pins_gates_open(self, small_ds):
        params = HyperParams(c=3, m=5, max_iter=4, tol=0.0,
                             ablation="all_confounders")
        state = fit(small_ds, params, seed=0)
        for E in state.indicators:
            assert (E == 1.0).all()
        # the weight step still runs against the unpruned balance system
        assert np.unique(state.weights).size > 1

    def test_full_run_moves_weights_and_gates(self, fitted):
        assert np.unique(fitted.weights).size > 1
        gates = np.concatenate([E.ravel() for E in fitted.indicators])
        assert gates.min() < 1.0


class TestDeterminism:
    def test_same_seed_bitwise_identical(self, small_ds):
        params = HyperParams(c=3, m=5, max_iter=3, tol=0.0)
        a = fit(small_ds, params, seed=4)
        b = fit(small_ds, params, seed=4)
        assert a.objective_trace == b.objective_trace
        for Wa, Wb in zip(a.projections, b.projections):
            np.testing.assert_array_equal(Wa, Wb)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_callback_sees_every_iteration(self, small_ds):
        params = HyperParams(c=3, m=5, max_iter=3, tol=0.0)
        seen = []
        fit(small_ds, params, seed=0, callback=lambda st: seen.append(st.iteration))
        assert seen == [1, 2, 3]


class TestInitialize:
    def test_embedding_dim_cannot_exceed_samples(self, small_ds):
        graph = build_laplacian(small_ds, 5)
        with pytest.raises(ValueError):
            initialize(small_ds, graph, HyperParams(c=61), seed=0)

    def test_warm_start_shapes(self, small_ds):
        params = HyperParams(c=3, m=5)
        graph = build_laplacian(small_ds, params.k_nn)
        state = initialize(small_ds, graph, params, seed=0)
        assert state.consensus.shape == (60, 3)
        assert state.consensus.min() > 0.0
        assert [W.shape for W in state.projections] == [(34, 3), (34, 3)]
        np.testing.assert_allclose(state.weights, 1.0 / 60)
        for P, E in zip(state.prototypes, state.indicators):
            assert P.size == 5
            assert E.shape == (33, 5)
            assert (E == 1.0).all()

    def test_extra_embedding_sweeps_compose(self, small_ds):
        params = HyperParams(c=3, m=5)
        graph = build_laplacian(small_ds, params.k_nn)
        state = initialize(small_ds, graph, params, seed=0)
        twice = update_F(state, small_ds, graph, params, [], sweeps=2)
        once = update_F(state, small_ds, graph, params, [], sweeps=1)
        stepped = ModelState(projections=state.projections, consensus=once,
                             weights=state.weights, indicators=state.indicators,
                             prototypes=state.prototypes)
        again = update_F(stepped, small_ds, graph, params, [], sweeps=1)
        np.testing.assert_allclose(twice, again, atol=1e-12)


class TestRanking:
    def _state_with(self, W):
        W = np.asarray(W, dtype=float)
        return ModelState(projections=[W],
                          consensus=np.zeros((2, 2)), weights=np.full(2, 0.5),
                          indicators=[np.zeros((W.shape[0] - 1, 0))],
                          prototypes=[np.array([], dtype=int)])

    def test_orders_by_descending_row_norm(self):
        state = self._state_with([[3.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
        (order, scores), = rank_features(state)
        assert order.tolist() == [0, 2, 1]
        np.testing.assert_allclose(scores, [3.0, 1.0, 2.0])

    def test_ties_break_to_lower_index(self):
        state = self._state_with([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        (order, _), = rank_features(state)
        assert order.tolist() == [0, 1, 2]

    def test_quota_split_largest_remainder(self):
        assert proportional_quotas([420, 400], 15) == [8, 7]
        assert proportional_quotas([10, 10], 3) == [2, 1]
        assert proportional_quotas([5, 5, 5], 0) == [0, 0, 0]
        with pytest.raises(ValueError):
            proportional_quotas([4, 4], 9)

    def test_select_features_takes_rank_prefix(self, small_ds, fitted):
        sel = select_features(fitted, small_ds.dims, count=10)
        ranking = rank_features(fitted)
        quotas = proportional_quotas(small_ds.dims, 10)
        for picks, (order, _), q in zip(sel, ranking, quotas):
            np.testing.assert_array_equal(picks, order[:q])

    def test_ratio_and_count_are_exclusive(self, small_ds, fitted):
        with pytest.raises(ValueError):
            select_features(fitted, small_ds.dims)
        with pytest.raises(ValueError):
            select_features(fitted, small_ds.dims, ratio=0.1, count=3)
        by_ratio = select_features(fitted, small_ds.dims, ratio=10.0 / 68.0)
        by_count = select_features(fitted, small_ds.dims, count=10)
        for a, b in zip(by_ratio, by_count):
            np.testing.assert_array_equal(a, b)


class TestCheckpoint:
    def test_round_trip(self, fitted, tmp_path):
        path = tmp_path / "state.npz"
        save_checkpoint(fitted, path, meta={"note": "unit"})
        back, meta = load_checkpoint(path)
        assert meta["note"] == "unit"
        assert meta["iteration"] == fitted.iteration
        assert back.converged == fitted.converged
        np.testing.assert_array_equal(back.consensus, fitted.consensus)
        np.testing.assert_array_equal(back.weights, fitted.weights)
        for a, b in zip(back.projections, fitted.projections):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(back.indicators, fitted.indicators):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(back.prototypes, fitted.prototypes):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(back.objective_trace,
                                   fitted.objective_trace, atol=0.0)

    def test_rankings_survive_round_trip(self, fitted, tmp_path):
        path = tmp_path / "state.npz"
        save_checkpoint(fitted, path)
        back, _ = load_checkpoint(path)
        for (oa, _), (ob, _) in zip(rank_features(fitted), rank_features(back)):
            np.testing.assert_array_equal(oa, ob)
