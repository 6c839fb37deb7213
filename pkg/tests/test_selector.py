"""End-to-end selection tests: score identity, pipeline contracts, labels."""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from otcoreset.cost import build_poo_matrix, compute_distances, normalize_grad_norms
from otcoreset.oracle import brute_force_best, synth_pools
from otcoreset.pool_io import Pool
from otcoreset.selector import (
    SelectionConfig,
    partition_classes,
    poo_score,
    poo_score_components,
    random_baseline,
    select,
    select_labeled,
)
from otcoreset.transport import solve_ot_on_subset
from tests_support import make_labeled_pools


class TestPooScore:
    def test_matches_transport_on_cost_matrix(self):
        # The per-row bonus is constant within a row and row masses are
        # fixed, so scoring via the folded cost matrix and scoring as
        # transport-minus-bonus must agree exactly.
        rng = np.random.default_rng(110)
        for trial in range(20):
            train = rng.normal(size=(10, 3))
            val = rng.normal(size=(6, 3))
            g = rng.random(10) * 2.0
            lam = float(rng.uniform(0.0, 0.6))
            d = compute_distances(train, val)
            size = int(rng.integers(1, 8))
            subset = np.sort(rng.choice(10, size=size, replace=False))
            direct = poo_score(d, g, lam, subset)
            M = build_poo_matrix(d, g, lam)
            folded = solve_ot_on_subset(M.entries, subset).objective
            assert_allclose(direct, folded, rtol=0, atol=1e-9, err_msg=f"trial {trial}")

    def test_components_sum(self):
        rng = np.random.default_rng(111)
        d = compute_distances(rng.normal(size=(6, 2)), rng.normal(size=(4, 2)))
        g = rng.random(6)
        score, transport, bonus = poo_score_components(d, g, 0.3, [1, 4])
        assert score == transport - bonus
        assert_allclose(bonus, 0.3 * g[[1, 4]].mean(), rtol=1e-12)

    def test_lambda_zero_is_pure_transport(self):
        rng = np.random.default_rng(112)
        d = compute_distances(rng.normal(size=(5, 2)), rng.normal(size=(4, 2)))
        score, transport, bonus = poo_score_components(d, rng.random(5), 0.0, [0, 2])
        assert bonus == 0.0
        assert score == transport

    def test_duplicate_subset_indices_collapse(self):
        rng = np.random.default_rng(113)
        d = compute_distances(rng.normal(size=(5, 2)), rng.normal(size=(4, 2)))
        g = rng.random(5)
        assert poo_score(d, g, 0.1, [2, 0, 2]) == poo_score(d, g, 0.1, [0, 2])

    def test_input_errors(self):
        rng = np.random.default_rng(114)
        d = compute_distances(rng.normal(size=(5, 2)), rng.normal(size=(4, 2)))
        g = rng.random(5)
        with pytest.raises(ValueError, match="non-empty"):
            poo_score(d, g, 0.1, [])
        with pytest.raises(ValueError, match="out of range"):
            poo_score(d, g, 0.1, [5])
        with pytest.raises(ValueError, match="nonnegative"):
            poo_score(d, g, -0.1, [0])
        with pytest.raises(ValueError, match="gradient norms"):
            poo_score(d, g[:3], 0.1, [0])


class TestSelect:
    def run(self, seed=120, budget=4, **kwargs):
        train, val = synth_pools(seed=seed, n_train=16, n_val=8, dim=3,
                                 grad_model="lognormal", center_shift=0.5)
        config = SelectionConfig(budget=budget, **kwargs)
        return config, train, val, select(config, train, val)

    def test_report_shape_and_consistency(self):
        config, train, val, report = self.run()
        assert len(report.selected_indices) == 4
        assert report.selected_indices == sorted(report.selected_indices)
        assert report.config_echo["budget"] == 4
        assert report.stats["train_size"] == 16
        assert report.stats["final_score"] == report.score_trajectory[-1][1]
        assert report.stats["refinement_start_iteration"] == 4

    def test_final_score_recomputable_from_artifacts(self):
        # The reported score must be reproducible from the report's own
        # selected indices and the input pools alone.
        config, train, val, report = self.run(seed=121)
        d = compute_distances(train, val)
        again = poo_score(d, np.asarray(train.grad_norms, np.float64),
                          config.lam, report.selected_indices)
        assert_allclose(report.stats["final_score"], again, rtol=0, atol=1e-9)

    def test_normalized_gradients_respected(self):
        config, train, val, report = self.run(seed=122, normalize_grad=True)
        d = compute_distances(train, val)
        g = normalize_grad_norms(np.asarray(train.grad_norms, np.float64))
        again = poo_score(d, g, config.lam, report.selected_indices)
        assert_allclose(report.stats["final_score"], again, rtol=0, atol=1e-9)
        assert report.config_echo["normalize_grad"] is True

    def test_trajectory_never_increases_after_refinement_starts(self):
        for seed in (123, 124, 125):
            _, _, _, report = self.run(seed=seed, budget=5)
            start = report.stats["refinement_start_iteration"]
            exact_part = [s for it, s in report.score_trajectory if it >= start]
            assert exact_part[0] == report.stats["greedy_score"]
            assert all(b < a for a, b in zip(exact_part, exact_part[1:]))
            assert len(exact_part) == 1 + report.stats["exchanges"]

    def test_greedy_part_of_trajectory_is_relaxed_scores(self):
        _, _, _, report = self.run(seed=126, budget=5)
        relaxed_part = [s for it, s in report.score_trajectory if it < 5]
        assert len(relaxed_part) == 5
        assert all(b <= a + 1e-12 for a, b in zip(relaxed_part, relaxed_part[1:]))
        assert report.stats["greedy_relaxed_score"] == relaxed_part[-1]

    def test_exchange_log_matches_trajectory(self):
        _, _, _, report = self.run(seed=127, budget=5)
        for step, (_, _, before, after) in enumerate(report.exchange_log):
            assert after < before
            it = report.stats["refinement_start_iteration"] + 1 + step
            assert (it, after) in report.score_trajectory

    def test_beats_random_subsets_and_approaches_brute_force(self):
        train, val = synth_pools(seed=12345, n_train=12, n_val=6, dim=3,
                                 grad_model="uniform", center_shift=0.5)
        config = SelectionConfig(budget=3, lam=0.1, t_max=100)
        report = select(config, train, val)
        final = report.stats["final_score"]
        d = compute_distances(train, val)
        g = np.asarray(train.grad_norms, np.float64)
        rng = np.random.default_rng(999)
        random_scores = [
            poo_score(d, g, 0.1, rng.choice(12, size=3, replace=False))
            for _ in range(200)
        ]
        assert final <= min(random_scores) + 1e-9
        M = build_poo_matrix(d, g, 0.1)
        _, best_score, _ = brute_force_best(M, 3)
        assert final >= best_score - 1e-12

    def test_full_budget_plain_transport_has_no_exchanges(self):
        # With every row selected, lam = 0, and constant norms, the score is
        # the fixed transport cost of the whole pool; nothing can improve.
        train, val = synth_pools(seed=128, n_train=8, n_val=5, dim=3,
                                 grad_model="constant")
        report = select(SelectionConfig(budget=8, lam=0.0), train, val)
        d = compute_distances(train, val)
        whole = solve_ot_on_subset(d.entries, range(8)).objective
        assert report.stats["exchanges"] == 0
        assert_allclose(report.stats["final_score"], whole, rtol=0, atol=1e-12)

    def test_budget_one_skips_refinement(self):
        _, _, _, report = self.run(seed=129, budget=1)
        assert report.stats["exchanges"] == 0
        assert "refinement_skipped" in report.stats
        assert len(report.selected_indices) == 1

    def test_deterministic_across_runs_and_threads(self):
        _, train, val, first = self.run(seed=130, budget=5)
        second = select(SelectionConfig(budget=5), train, val)
        threaded = select(SelectionConfig(budget=5, threads=4), train, val)
        assert first.selected_indices == second.selected_indices == threaded.selected_indices
        assert first.score_trajectory == second.score_trajectory == threaded.score_trajectory

    def test_config_validation(self):
        train, val = synth_pools(seed=131, n_train=6, n_val=4, dim=2)
        for bad in (
            SelectionConfig(budget=0),
            SelectionConfig(budget=7),
            SelectionConfig(budget=2, k=0),
            SelectionConfig(budget=2, t_max=-1),
            SelectionConfig(budget=2, lam=-0.5),
        ):
            with pytest.raises(ValueError):
                select(bad, train, val)

    def test_dimension_mismatch_rejected(self):
        train, _ = synth_pools(seed=132, n_train=6, n_val=4, dim=2)
        _, val = synth_pools(seed=132, n_train=6, n_val=4, dim=3)
        with pytest.raises(ValueError, match="dimension mismatch"):
            select(SelectionConfig(budget=2), train, val)


class TestRandomBaseline:
    def test_deterministic_sorted_sample(self):
        a = random_baseline(7, 5, 20)
        b = random_baseline(7, 5, 20)
        assert np.array_equal(a, b)
        assert np.array_equal(a, np.sort(a))
        assert len(set(a.tolist())) == 5

    def test_full_sample_is_identity(self):
        assert np.array_equal(random_baseline(0, 6, 6), np.arange(6))

    def test_accepts_pool_argument(self):
        train, _ = synth_pools(seed=133, n_train=9, n_val=3, dim=2)
        sample = random_baseline(3, 4, train)
        assert sample.max() < 9

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="n must be"):
            random_baseline(0, 0, 5)
        with pytest.raises(ValueError, match="n must be"):
            random_baseline(0, 6, 5)

    def test_pipeline_beats_average_random_subset(self):
        train, val = synth_pools(seed=134, n_train=20, n_val=10, dim=3,
                                 grad_model="uniform", center_shift=0.5)
        report = select(SelectionConfig(budget=5, lam=0.1), train, val)
        d = compute_distances(train, val)
        g = np.asarray(train.grad_norms, np.float64)
        scores = [
            poo_score(d, g, 0.1, random_baseline(s, 5, train)) for s in range(50)
        ]
        assert report.stats["final_score"] < np.mean(scores)


class TestPartitionClasses:
    def test_seventy_thirty_split(self):
        train, val = make_labeled_pools([70, 30], [7, 3])
        part = partition_classes(train, val, 64)
        assert [e.budget for e in part.classes] == [44, 19]
        assert [e.label for e in part.classes] == [0, 1]
        assert_allclose([e.proportion for e in part.classes], [0.7, 0.3])

    def test_redistribution_fills_the_floor_remainder(self):
        train, val = make_labeled_pools([70, 30], [7, 3])
        part = partition_classes(train, val, 64, redistribute_remainder=True)
        # Fractional parts are .8 for class 0 and .2 for class 1.
        assert [e.budget for e in part.classes] == [45, 19]
        assert sum(e.budget for e in part.classes) == 64

    def test_redistribution_tie_goes_to_lower_label(self):
        train, val = make_labeled_pools([10, 10], [5, 5])
        part = partition_classes(train, val, 5, redistribute_remainder=True)
        assert [e.budget for e in part.classes] == [3, 2]

    def test_redistribution_respects_training_caps(self):
        train, val = make_labeled_pools([2, 20], [5, 5])
        with pytest.warns(UserWarning, match="clamped"):
            part = partition_classes(train, val, 9, redistribute_remainder=True)
        budgets = {e.label: e.budget for e in part.classes}
        assert budgets[0] <= 2
        assert sum(budgets.values()) == 9

    def test_clamp_warns(self):
        train, val = make_labeled_pools([2, 20], [8, 2])
        with pytest.warns(UserWarning, match="clamped"):
            part = partition_classes(train, val, 10)
        assert part.entry(0).budget == 2

    def test_train_class_missing_rejected(self):
        train, val = make_labeled_pools([5], [3, 3])
        with pytest.raises(ValueError, match="absent from the training pool"):
            partition_classes(train, val, 4)

    def test_unlabeled_rejected(self):
        rng = np.random.default_rng(140)
        plain = Pool.from_arrays(rng.normal(size=(4, 2)).astype(np.float32))
        labeled, val = make_labeled_pools([4], [2])
        with pytest.raises(ValueError, match="labels"):
            partition_classes(plain, val, 2)


class TestSelectLabeled:
    def test_budgets_and_membership(self):
        train, val = make_labeled_pools([20, 12], [6, 4], seed=1)
        config = SelectionConfig(budget=10, lam=0.1, labeled=True)
        report = select_labeled(config, train, val)
        # floor(10 * .6) = 6 and floor(10 * .4) = 4
        assert report.stats["class_budgets"] == {"0": 6, "1": 4}
        assert report.stats["realized_budget"] == 10
        chosen_labels = train.labels[np.asarray(report.selected_indices)]
        assert int((chosen_labels == 0).sum()) == 6
        assert int((chosen_labels == 1).sum()) == 4
        assert report.score_trajectory == []
        assert report.stats["mode"] == "labeled"

    def test_single_class_matches_unlabeled_select(self):
        train, val = make_labeled_pools([14], [6], seed=2)
        config = SelectionConfig(budget=5, lam=0.1)
        labeled = select_labeled(replace(config, labeled=True), train, val)
        plain = select(config, train, val)
        assert labeled.selected_indices == plain.selected_indices
        assert labeled.stats["classes"][0]["final_score"] == plain.stats["final_score"]

    def test_class_order_is_immaterial(self):
        train, val = make_labeled_pools([15, 15], [5, 5], seed=3)
        config = SelectionConfig(budget=8, lam=0.1, labeled=True)
        forward = select_labeled(config, train, val, class_order=[0, 1])
        backward = select_labeled(config, train, val, class_order=[1, 0])
        assert forward.selected_indices == backward.selected_indices
        assert forward.exchange_log == backward.exchange_log
        assert (forward.stats["class_budgets"] == backward.stats["class_budgets"])

    def test_invalid_class_order_rejected(self):
        train, val = make_labeled_pools([15, 15], [5, 5], seed=4)
        config = SelectionConfig(budget=8, labeled=True)
        with pytest.raises(ValueError, match="class_order"):
            select_labeled(config, train, val, class_order=[0, 0])

    def test_zero_budget_class_skipped_with_warning(self):
        train, val = make_labeled_pools([10, 10], [19, 1], seed=5)
        config = SelectionConfig(budget=5, labeled=True)
        with pytest.warns(UserWarning, match="skipped"):
            report = select_labeled(config, train, val)
        assert report.stats["skipped_classes"] == [1]
        chosen_labels = train.labels[np.asarray(report.selected_indices)]
        assert np.all(chosen_labels == 0)

    def test_exchange_log_uses_global_indices(self):
        train, val = make_labeled_pools([20, 20], [5, 5], seed=6)
        config = SelectionConfig(budget=12, lam=0.1, labeled=True)
        report = select_labeled(config, train, val)
        for removed, added, before, after in report.exchange_log:
            assert 0 <= removed < 40 and 0 <= added < 40
            assert train.labels[removed] == train.labels[added]
            assert after < before

    def test_per_class_scores_recomputable(self):
        train, val = make_labeled_pools([16, 12], [4, 4], seed=7)
        config = SelectionConfig(budget=8, lam=0.1, labeled=True)
        report = select_labeled(config, train, val)
        for cs in report.stats["classes"]:
            label = cs["label"]
            t_idx = np.flatnonzero(train.labels == label)
            v_idx = np.flatnonzero(val.labels == label)
            local = [int(np.searchsorted(t_idx, i)) for i in cs["selected_indices"]]
            d = compute_distances(train.subset(t_idx), val.subset(v_idx))
            g = np.asarray(train.grad_norms, np.float64)[t_idx]
            again = poo_score(d, g, 0.1, local)
            assert_allclose(cs["final_score"], again, rtol=0, atol=1e-9)
