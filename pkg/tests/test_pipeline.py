"""Proposal assignment, loss assembly, and the per-scene iteration."""

import math

import numpy as np
import pytest

from disco.distribution import ProposalGroup
from disco.experiment import ExperimentConfig
from disco.noise import NoiseConfig
from disco.pipeline import assign_proposals, cls_loss, run_disco_iteration, total_loss
from disco.surrogate import SurrogateHeadConfig, generate_scene


def shifted(base, dy):
    return [base[0], base[1] + dy, base[2], base[3] + dy]


class TestAssignProposals:
    def test_max_iou_rule(self):
        gt_a = [0.0, 0.0, 10.0, 10.0]
        gt_b = [100.0, 100.0, 110.0, 110.0]
        # Shifting a unit square by s gives IoU (10-s)/(10+s): 2.5 -> 0.6.
        proposal = shifted(gt_a, 2.5)
        groups = assign_proposals([proposal], [gt_a, gt_b], 0.5)
        assert len(groups[0].boxes) == 2  # proposal + appended GT box
        assert len(groups[1].boxes) == 1

    def test_below_threshold_is_background(self):
        gt = [0.0, 0.0, 10.0, 10.0]
        proposal = shifted(gt, 30.0 / 7.0)  # IoU (10-s)/(10+s) ~ 0.4
        groups = assign_proposals([proposal], [gt], 0.5)
        assert len(groups[0].boxes) == 1
        np.testing.assert_array_equal(groups[0].boxes[0], gt)

    def test_identical_proposal_joins_without_duplicate(self):
        gt = np.array([0.0, 0.0, 10.0, 10.0])
        groups = assign_proposals([gt, shifted(gt, 1.0)], [gt], 0.5)
        assert len(groups[0].boxes) == 2
        assert groups[0].gt_index == 0

    def test_gt_without_proposals_singleton(self):
        gt = np.array([[0.0, 0.0, 10.0, 10.0]])
        groups = assign_proposals(np.zeros((0, 4)), gt, 0.5)
        assert len(groups) == 1
        np.testing.assert_array_equal(groups[0].boxes, gt)
        assert groups[0].gt_index == 0


class TestLosses:
    def make_group(self, cls_scores):
        boxes = np.tile([0.0, 0.0, 10.0, 10.0], (len(cls_scores), 1))
        return ProposalGroup(
            boxes,
            boxes.copy(),
            np.full(len(cls_scores), 0.5),
            category=1,
            noisy_gt_index=0,
            cls_scores=np.asarray(cls_scores, dtype=float),
        )

    def test_perfect_scores_zero(self):
        assert cls_loss([self.make_group([1.0, 1.0])]) == 0.0

    def test_mean_of_neg_logs(self):
        loss = cls_loss([self.make_group([1.0, math.exp(-1)])])
        assert loss == pytest.approx(0.5)

    def test_duplication_invariance(self):
        single = cls_loss([self.make_group([1.0, math.exp(-1)])])
        doubled = cls_loss([self.make_group([1.0, math.exp(-1), 1.0, math.exp(-1)])])
        assert single == pytest.approx(doubled)

    def test_missing_cls_scores_rejected(self):
        group = self.make_group([1.0])
        group.cls_scores = None
        with pytest.raises(ValueError):
            cls_loss([group])

    def test_total_loss_hand_value(self):
        assert total_loss(1.0, 1.0, 1.0, 1.0, gamma=0.3, lam=0.1) == pytest.approx(2.4)

    def test_total_loss_zero(self):
        assert total_loss(0, 0, 0, 0, 0.3, 0.1) == 0.0

    def test_total_loss_linear_in_each_component(self):
        base = total_loss(1.0, 2.0, 3.0, 4.0, 0.3, 0.1)
        assert total_loss(2.0, 2.0, 3.0, 4.0, 0.3, 0.1) - base == pytest.approx(1.0)
        assert total_loss(1.0, 3.0, 3.0, 4.0, 0.3, 0.1) - base == pytest.approx(1.0)
        assert total_loss(1.0, 2.0, 4.0, 4.0, 0.3, 0.1) - base == pytest.approx(0.3)
        assert total_loss(1.0, 2.0, 3.0, 5.0, 0.3, 0.1) - base == pytest.approx(0.1)

    def test_gamma_lambda_zero_drops_terms(self):
        assert total_loss(1.0, 2.0, 99.0, 77.0, 0.0, 0.0) == pytest.approx(3.0)


class TestRunDiscoIteration:
    def clean_config(self, **overrides):
        base = dict(
            noise_level=0.0,
            jitter=0.0,
            scenes=1,
            objects_per_scene=2,
            proposals_per_object=4,
            surrogate=SurrogateHeadConfig(
                score_noise=0.0, regressor_pull=0.0, score_exponent=2.0
            ),
        )
        base.update(overrides)
        return ExperimentConfig(**base)

    def test_all_clean_degenerate_case_gives_perfect_refinement(self):
        cfg = self.clean_config()
        scene = generate_scene(
            2, (640, 480), NoiseConfig(0.0), np.random.default_rng(0)
        )
        result = run_disco_iteration(scene, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(result.iou_noisy, np.ones(2))
        for per_pass in result.iou_passes:
            np.testing.assert_allclose(per_pass, np.ones(2), atol=1e-9)
        assert result.cls_neglog_sum == pytest.approx(0.0, abs=1e-9)

    def test_fixed_seed_reproducible(self):
        cfg = ExperimentConfig(scenes=1)
        scene = generate_scene(3, (640, 480), NoiseConfig(0.4), np.random.default_rng(5))
        a = run_disco_iteration(scene, cfg, np.random.default_rng(9))
        b = run_disco_iteration(scene, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(a.iou_passes[-1], b.iou_passes[-1])
        np.testing.assert_array_equal(a.features, b.features)
        assert a.cls_neglog_sum == b.cls_neglog_sum

    def test_supervision_losses_counted_once_per_object(self):
        cfg = ExperimentConfig(scenes=1, passes=3, objects_per_scene=3)
        scene = generate_scene(3, (640, 480), NoiseConfig(0.4), np.random.default_rng(2))
        result = run_disco_iteration(scene, cfg, np.random.default_rng(3))
        # Loss terms come from the supervision pass only: one group per
        # object, regardless of how many passes ran.
        assert result.group_count == 3
        assert len(result.iou_passes) == 3

    def test_force_phi_zero_is_noop_on_boxes(self):
        cfg = ExperimentConfig(scenes=1, force_phi_zero=True)
        scene = generate_scene(3, (640, 480), NoiseConfig(0.4), np.random.default_rng(4))
        result = run_disco_iteration(scene, cfg, np.random.default_rng(5))
        for per_pass in result.iou_passes:
            np.testing.assert_array_equal(per_pass, result.iou_noisy)

    def test_estimator_loss_accumulated_when_given(self):
        from disco.estimation import LinearEstimator

        cfg = ExperimentConfig(scenes=1)
        scene = generate_scene(2, (640, 480), NoiseConfig(0.3), np.random.default_rng(6))
        est = LinearEstimator.init(np.random.default_rng(0))
        result = run_disco_iteration(scene, cfg, np.random.default_rng(7), estimator=est)
        assert result.est_group_count == 2
        assert result.est_sum > 0

    def test_num_augmented_zero_keeps_group_size(self):
        cfg = ExperimentConfig(scenes=1, num_augmented=0, proposals_per_object=8)
        scene = generate_scene(1, (640, 480), NoiseConfig(0.4), np.random.default_rng(8))
        result = run_disco_iteration(scene, cfg, np.random.default_rng(9))
        assert result.group_sizes[0] <= 9  # own proposals plus appended GT

    def test_phi_zero_without_augmentation_is_strict_noop(self):
        # With the fusion weight pinned to zero and no augmentation, the
        # proposal pool never changes, so the second pass regroups exactly
        # the first pass's members against the same boxes.
        scene = generate_scene(2, (640, 480), NoiseConfig(0.4), np.random.default_rng(10))
        one = run_disco_iteration(
            scene,
            ExperimentConfig(scenes=1, passes=1, force_phi_zero=True, num_augmented=0),
            np.random.default_rng(11),
        )
        two = run_disco_iteration(
            scene,
            ExperimentConfig(scenes=1, passes=2, force_phi_zero=True, num_augmented=0),
            np.random.default_rng(11),
        )
        assert one.group_sizes == two.group_sizes
        np.testing.assert_array_equal(two.iou_passes[0], two.iou_passes[1])
        np.testing.assert_array_equal(two.iou_passes[1], two.iou_noisy)

    def test_augmented_samples_enrich_later_passes(self):
        # Samples drawn in earlier passes join the pool, so the
        # supervision-pass groups of a two-pass run are larger than those
        # of a single-pass run on the same scene.
        scene = generate_scene(2, (640, 480), NoiseConfig(0.4), np.random.default_rng(12))
        one = run_disco_iteration(
            scene, ExperimentConfig(scenes=1, passes=1), np.random.default_rng(13)
        )
        two = run_disco_iteration(
            scene, ExperimentConfig(scenes=1, passes=2), np.random.default_rng(13)
        )
        assert sum(two.group_sizes) > sum(one.group_sizes)
