"""Scene-level calibration iteration.

One training iteration on a scene assigns the proposal pool to the
current ground truths, then runs the calibration loop once per pass:
model each group, augment it from the modeled distribution, re-model,
and fuse the group's ground truth toward the re-modeled mean. All but
the last pass are refinement passes that stop at the fused box; the
fused boxes anchor proposal reassignment for the next pass, and the
augmented proposals are incorporated into the pool, so later passes
group over an enriched candidate set. The final supervision pass
additionally assembles the loss terms (the augmentation loss exists
only there), the estimator's feature/target pairs, and the detection
candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from disco.calibration import (
    SCORE_FLOOR,
    FusionConfig,
    RefinedGroundTruth,
    augment_proposals,
    merge_augmented,
    refine_box,
    reg_loss,
)
from disco.diagnostics import Diagnostics
from disco.distribution import ProposalGroup, model_distribution
from disco.estimation import LinearEstimator, est_loss
from disco.geometry import as_box_array, iou, iou_matrix
from disco.surrogate import (
    Scene,
    generate_proposals,
    lookup_column,
    proposal_features,
    regress_proposals,
    score_proposals,
)

# Proposals equal to a ground truth within this slack count as its own box.
GT_MATCH_TOLERANCE = 1e-9


@dataclass
class Assignment:
    """Boxes assigned to one ground truth; ``gt_index`` locates its own box."""

    boxes: np.ndarray
    gt_index: int


def assign_proposals(
    proposals,
    gts,
    iou_threshold: float,
    *,
    diagnostics: Diagnostics | None = None,
) -> list[Assignment]:
    """Group a proposal pool by the ground truth of maximal overlap.

    A proposal joins the ground truth it overlaps most, provided that
    overlap reaches the threshold; anything below is background. Every
    ground truth's own box is always a member of its group, appended at
    the end unless a pooled proposal already coincides with it, so a
    ground truth with no nearby proposals still yields a singleton group.
    """
    pool = as_box_array(proposals, "proposals").reshape(-1, 4)
    gt_boxes = as_box_array(gts, "gts").reshape(-1, 4)
    if len(gt_boxes) == 0:
        raise ValueError("at least one ground truth is required")
    if len(pool) == 0:
        assigned_to = np.zeros(0, dtype=np.int64)
    else:
        overlaps = iou_matrix(pool, gt_boxes)
        best = overlaps.argmax(axis=1)
        best_val = overlaps[np.arange(len(pool)), best]
        assigned_to = np.where(best_val >= iou_threshold, best, -1)
        if diagnostics is not None:
            diagnostics.bump("proposals_unassigned", int((assigned_to < 0).sum()))
    groups: list[Assignment] = []
    for k in range(len(gt_boxes)):
        members = pool[assigned_to == k]
        matches = np.flatnonzero(
            np.abs(members - gt_boxes[k]).max(axis=1) <= GT_MATCH_TOLERANCE
        ) if len(members) else np.zeros(0, dtype=np.int64)
        if len(matches):
            gt_index = int(matches[0])
        else:
            members = np.vstack([members, gt_boxes[k][None, :]])
            gt_index = len(members) - 1
        groups.append(Assignment(boxes=members, gt_index=gt_index))
    return groups


def cls_loss(groups: list[ProposalGroup]) -> float:
    """Mean negative log score over every assigned original proposal."""
    scores = []
    for g in groups:
        if g.cls_scores is None:
            raise ValueError("groups need cls_scores for the classification loss")
        scores.append(g.cls_scores)
    flat = np.concatenate(scores)
    if flat.size == 0:
        raise ValueError("cls_loss needs at least one proposal")
    return float(np.mean(-np.log(np.maximum(flat, SCORE_FLOOR))))


def total_loss(
    l_cls: float, l_reg: float, l_est: float, l_aug: float, gamma: float, lam: float
) -> float:
    """Weighted sum of the four loss terms: cls + reg + gamma*est + lambda*aug."""
    return float(l_cls + l_reg + gamma * l_est + lam * l_aug)


@dataclass
class SceneResult:
    """Per-scene contribution to a trial report."""

    iou_noisy: np.ndarray
    iou_passes: list[np.ndarray]
    cls_neglog_sum: float = 0.0
    cls_count: int = 0
    reg_sum: float = 0.0
    aug_neglog_sum: float = 0.0
    group_count: int = 0
    est_sum: float = 0.0
    est_group_count: int = 0
    features: np.ndarray = field(default_factory=lambda: np.zeros((0, 8)))
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    group_sizes: list[int] = field(default_factory=list)
    det_boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    det_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    det_categories: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    det_features: np.ndarray = field(default_factory=lambda: np.zeros((0, 8)))
    objects_skipped: int = 0
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


def _score_column(boxes, scene, object_index, cfg, rng):
    matrix = score_proposals(boxes, scene, object_index, cfg.surrogate, rng)
    return lookup_column(matrix, int(scene.categories[object_index]))


def run_disco_iteration(
    scene: Scene,
    cfg,
    rng: np.random.Generator,
    estimator: LinearEstimator | None = None,
) -> SceneResult:
    """Run the multi-pass calibration iteration on one scene.

    ``cfg`` is an :class:`disco.experiment.ExperimentConfig`. Every pass
    models, augments, re-models, and fuses; only the final supervision
    pass accumulates the loss terms, the feature/target pairs for the
    confidence estimator, and the detection candidates used for
    evaluation. When ``estimator`` is given, its current variance loss is
    accumulated as well; the experiment runner instead defers that loss
    until after training.
    """
    fusion = FusionConfig(alpha=cfg.fusion_alpha, beta=cfg.fusion_beta)
    result = SceneResult(
        iou_noisy=np.atleast_1d(iou(scene.noisy_boxes, scene.real_boxes)),
        iou_passes=[],
    )
    diag = result.diagnostics

    proposals_per_object = [
        generate_proposals(scene, k, cfg.proposals_per_object, cfg.jitter, rng)
        for k in range(len(scene))
    ]
    pool = np.vstack(proposals_per_object)
    current_gts = scene.noisy_boxes.copy()

    features_parts: list[np.ndarray] = []
    targets_parts: list[np.ndarray] = []
    det_boxes: list[np.ndarray] = []
    det_scores: list[np.ndarray] = []
    det_categories: list[np.ndarray] = []
    det_features: list[np.ndarray] = []

    for pass_index in range(cfg.passes):
        final = pass_index == cfg.passes - 1
        assignments = assign_proposals(pool, current_gts, cfg.assign_iou, diagnostics=diag)
        new_gts = current_gts.copy()
        pass_samples: list[np.ndarray] = []
        for k, assigned in enumerate(assignments):
            try:
                _, updated = regress_proposals(assigned.boxes, scene, k, cfg.surrogate)
                scores = _score_column(updated, scene, k, cfg, rng)
                group = ProposalGroup(
                    proposals=assigned.boxes,
                    updated=updated,
                    scores=scores,
                    category=int(scene.categories[k]),
                    noisy_gt_index=assigned.gt_index,
                )
                dist = model_distribution(
                    group, cfg.temperature, sigma_source=cfg.sigma_source, diagnostics=diag
                )
                aug = augment_proposals(dist, cfg.num_augmented, rng, diagnostics=diag)
                aug_scores = (
                    _score_column(aug, scene, k, cfg, rng) if len(aug) else np.zeros(0)
                )
                if len(aug) and not final:
                    pass_samples.append(aug)
                merged = merge_augmented(group, aug, aug_scores)
                if len(aug):
                    dist = model_distribution(
                        merged,
                        cfg.temperature,
                        sigma_source=cfg.sigma_source,
                        diagnostics=diag,
                    )
                score_mu = float(_score_column(dist.mu[None, :], scene, k, cfg, rng)[0])
                if cfg.force_phi_zero:
                    refined = RefinedGroundTruth(
                        box=current_gts[k].copy(), phi=0.0, source_score=score_mu
                    )
                else:
                    refined = refine_box(
                        dist.mu, score_mu, current_gts[k], fusion, diagnostics=diag
                    )
                if final:
                    # Compute everything before mutating the result, so a
                    # degenerate object skips cleanly without partial sums.
                    group_reg = reg_loss(merged, refined, diagnostics=diag)
                    original_scores = _score_column(assigned.boxes, scene, k, cfg, rng)
                    feats = proposal_features(assigned.boxes, dist)
                    group_est = (
                        est_loss(estimator.predict(feats), dist.sigma)
                        if estimator is not None
                        else None
                    )
            except ValueError:
                result.objects_skipped += 1
                continue
            new_gts[k] = refined.box
            if final:
                result.aug_neglog_sum += -np.log(max(merged.scores.max(), SCORE_FLOOR))
                result.reg_sum += group_reg
                result.cls_neglog_sum += float(
                    -np.log(np.maximum(original_scores, SCORE_FLOOR)).sum()
                )
                result.cls_count += len(original_scores)
                result.group_count += 1
                features_parts.append(feats)
                targets_parts.append(np.tile(dist.sigma**2, (len(assigned.boxes), 1)))
                result.group_sizes.append(len(assigned.boxes))
                if group_est is not None:
                    result.est_sum += group_est
                    result.est_group_count += 1
                det_boxes.append(updated)
                det_scores.append(scores)
                det_categories.append(
                    np.full(len(updated), int(scene.categories[k]), dtype=np.int64)
                )
                det_features.append(feats)
        current_gts = new_gts
        if pass_samples:
            pool = np.vstack([pool, *pass_samples])
        result.iou_passes.append(np.atleast_1d(iou(current_gts, scene.real_boxes)))

    if features_parts:
        result.features = np.vstack(features_parts)
        result.targets = np.vstack(targets_parts)
        result.det_boxes = np.vstack(det_boxes)
        result.det_scores = np.concatenate(det_scores)
        result.det_categories = np.concatenate(det_categories)
        result.det_features = np.vstack(det_features)
    return result
