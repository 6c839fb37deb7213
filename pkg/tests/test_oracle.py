"""Oracle tests: the checkers themselves have to be trustworthy."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from otcoreset.cost import compute_distances
from otcoreset.oracle import (
    BRUTE_FORCE_LIMIT,
    brute_force_best,
    lipschitz_probe,
    ot_1d,
    synth_pools,
)
from otcoreset.transport import Marginals, kr_gap, solve_ot, solve_ot_on_subset


class TestOt1d:
    def test_identical_sets_cost_nothing(self):
        assert ot_1d([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 0.0

    def test_single_pair_is_plain_distance(self):
        assert ot_1d([3.0], [10.0]) == 7.0

    def test_frozen_three_point_example(self):
        assert ot_1d([0.0, 1.0, 2.0], [0.0, 2.0, 4.0]) == 1.0

    def test_matches_exact_solver(self):
        rng = np.random.default_rng(50)
        for trial in range(30):
            size = int(rng.integers(2, 40))
            xs = rng.normal(size=size) * 2.0
            ys = rng.normal(size=size) * 2.0 + rng.normal()
            cost = np.abs(xs[:, None] - ys[None, :])
            sol = solve_ot(cost, Marginals.uniform(size, size))
            assert_allclose(ot_1d(xs, ys), sol.objective, rtol=0, atol=1e-9,
                            err_msg=f"trial {trial}")

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length mismatch"):
            ot_1d([1.0], [1.0, 2.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            ot_1d([], [])


class TestBruteForce:
    def test_enumerates_all_subsets(self):
        rng = np.random.default_rng(51)
        M = rng.normal(size=(6, 4))
        best_subset, best_score, table = brute_force_best(M, 2)
        assert len(table) == 15
        scores = {s: v for s, v in table}
        assert best_score == min(scores.values())
        assert scores[best_subset] == best_score

    def test_best_no_worse_than_every_entry(self):
        rng = np.random.default_rng(52)
        M = rng.normal(size=(8, 5))
        _, best_score, table = brute_force_best(M, 3)
        assert all(best_score <= score for _, score in table)

    def test_single_row_budget_picks_smallest_row_mean(self):
        rng = np.random.default_rng(53)
        M = rng.normal(size=(7, 4))
        best_subset, best_score, _ = brute_force_best(M, 1)
        means = M.mean(axis=1)
        assert best_subset == (int(np.argmin(means)),)
        assert_allclose(best_score, means.min(), rtol=1e-12)

    def test_full_budget_is_single_subset(self):
        rng = np.random.default_rng(54)
        M = rng.normal(size=(5, 4))
        best_subset, best_score, table = brute_force_best(M, 5)
        assert len(table) == 1
        assert best_subset == (0, 1, 2, 3, 4)
        assert best_score == solve_ot_on_subset(M, range(5)).objective

    def test_tie_takes_lexicographically_smallest(self):
        # Duplicated rows create exact ties between subsets.
        M = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
        best_subset, _, _ = brute_force_best(M, 2)
        assert best_subset == (0, 1)

    def test_enumeration_guard(self):
        M = np.zeros((40, 2))
        with pytest.raises(ValueError, match=str(BRUTE_FORCE_LIMIT)):
            brute_force_best(M, 10)

    def test_budget_out_of_range(self):
        with pytest.raises(ValueError, match="budget"):
            brute_force_best(np.zeros((3, 2)), 0)


class TestLipschitzProbe:
    def test_single_anchor_gives_shifted_distances(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0]])
        fa, fb = lipschitz_probe(pts, pts, np.array([[0.0, 0.0]]), [2.0])
        assert_allclose(fa, [2.0, 7.0], rtol=1e-12)
        assert np.array_equal(fa, fb)

    def test_envelope_takes_minimum_over_anchors(self):
        pts = np.array([[0.0], [10.0]])
        anchors = np.array([[0.0], [10.0]])
        fa, _ = lipschitz_probe(pts, pts, anchors, [5.0, 0.0])
        assert_allclose(fa, [5.0, 0.0], rtol=1e-12)

    def test_witness_is_one_lipschitz(self):
        rng = np.random.default_rng(55)
        for _ in range(10):
            pts = rng.normal(size=(12, 3)) * 3.0
            anchors = rng.normal(size=(4, 3)) * 3.0
            values = rng.normal(size=4) * 2.0
            f, _ = lipschitz_probe(pts, pts, anchors, values)
            diffs = np.abs(f[:, None] - f[None, :])
            dists = np.sqrt(np.square(pts[:, None] - pts[None, :]).sum(axis=2))
            assert np.all(diffs <= dists + 1e-9)

    def test_duality_inequality_holds_on_random_probes(self):
        rng = np.random.default_rng(56)
        train, val = synth_pools(seed=56, n_train=20, n_val=12, dim=3,
                                 center_shift=1.0)
        d = compute_distances(train, val)
        subset = np.sort(rng.choice(20, size=6, replace=False))
        ot_value = solve_ot_on_subset(d.entries, subset).objective
        for _ in range(30):
            k = int(rng.integers(1, 5))
            anchors = rng.normal(scale=4.0, size=(k, 3))
            values = rng.normal(size=k) * 3.0
            f_train, f_val = lipschitz_probe(train, val, anchors, values)
            assert kr_gap(ot_value, f_train[subset], f_val) >= -1e-9

    def test_value_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="anchors"):
            lipschitz_probe(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), [1.0])


class TestSynthPools:
    def test_deterministic_for_fixed_seed(self):
        a_train, a_val = synth_pools(seed=3, n_train=15, n_val=8, dim=4)
        b_train, b_val = synth_pools(seed=3, n_train=15, n_val=8, dim=4)
        assert a_train.embeddings.tobytes() == b_train.embeddings.tobytes()
        assert a_val.grad_norms.tobytes() == b_val.grad_norms.tobytes()
        assert np.array_equal(a_train.labels, b_train.labels)

    def test_different_seeds_differ(self):
        a, _ = synth_pools(seed=3, n_train=15, n_val=8, dim=4)
        b, _ = synth_pools(seed=4, n_train=15, n_val=8, dim=4)
        assert a.embeddings.tobytes() != b.embeddings.tobytes()

    def test_round_robin_labels_cover_every_cluster(self):
        train, val = synth_pools(seed=5, n_train=10, n_val=6, dim=2, n_clusters=3)
        assert set(train.labels.tolist()) == {0, 1, 2}
        assert set(val.labels.tolist()) == {0, 1, 2}
        assert np.array_equal(train.labels, np.arange(10) % 3)

    def test_center_shift_opens_transport_gap(self):
        train, near = synth_pools(seed=6, n_train=20, n_val=10, dim=3, center_shift=0.0)
        _, far = synth_pools(seed=6, n_train=20, n_val=10, dim=3, center_shift=6.0)
        d_near = compute_distances(train, near)
        d_far = compute_distances(train, far)
        full = list(range(20))
        assert (solve_ot_on_subset(d_far.entries, full).objective
                > solve_ot_on_subset(d_near.entries, full).objective)

    def test_constant_grad_model_is_all_ones(self):
        train, _ = synth_pools(seed=7, n_train=6, n_val=3, dim=2, grad_model="constant")
        assert np.array_equal(train.grad_norms, np.ones(6, dtype=np.float32))

    def test_zero_std_collapses_clusters(self):
        train, _ = synth_pools(seed=8, n_train=6, n_val=3, dim=2, n_clusters=1,
                               cluster_std=0.0)
        assert np.all(train.embeddings == train.embeddings[0])

    def test_distance_mix_correlates_norms_with_radius(self):
        train, _ = synth_pools(seed=9, n_train=60, n_val=3, dim=3, n_clusters=1,
                               grad_model="uniform", grad_distance_mix=1.0)
        center = synth_pools(seed=9, n_train=60, n_val=3, dim=3, n_clusters=1,
                             grad_model="uniform", grad_distance_mix=0.0)[0]
        # With full mixing the norm equals the distance to the cluster center.
        radial = np.sqrt(np.square(
            train.embeddings.astype(np.float64)
            - np.asarray(center.embeddings, dtype=np.float64).mean(axis=0)
        ).sum(axis=1))
        corr = np.corrcoef(train.grad_norms, radial)[0, 1]
        assert corr > 0.9

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError, match="at least 1"):
            synth_pools(seed=0, n_train=0, n_val=3, dim=2)

    def test_invalid_grad_model_rejected(self):
        with pytest.raises(ValueError, match="grad_model"):
            synth_pools(seed=0, n_train=3, n_val=3, dim=2, grad_model="cauchy")

    def test_invalid_mix_rejected(self):
        with pytest.raises(ValueError, match="grad_distance_mix"):
            synth_pools(seed=0, n_train=3, n_val=3, dim=2, grad_distance_mix=1.5)
