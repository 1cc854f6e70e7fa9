"""Distribution-driven calibration of supervision signals.

Three pieces operate on a modeled proposal distribution:

* Gaussian proposal augmentation, sampling extra boxes from the modeled
  mean/deviation and rewarding the best classification score found in
  the enlarged group (``aug_loss``).
* Non-linear box fusion, blending the noisy ground truth toward the
  modeled mean with a score-gated weight ``phi(s) = min(s**alpha, beta)``
  so an unconfident mean barely moves the box (``refine_box``).
* The regression loss of the original proposals against the fused box,
  a smooth-L1 penalty on the standard offset encoding (``reg_loss``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from disco.diagnostics import Diagnostics
from disco.distribution import ProposalGroup, SpatialDistribution, repair_corners
from disco.geometry import as_box_array, encode_delta

# Keeps log terms finite when a group's best score collapses to zero.
SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    """Exponent and cap of the fusion weight ``phi(s) = min(s**alpha, beta)``."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")


@dataclass(frozen=True)
class RefinedGroundTruth:
    """A fused supervision box with the weight and score that produced it."""

    box: np.ndarray
    phi: float
    source_score: float


def augment_from_noise(dist: SpatialDistribution, gaussian, *, diagnostics=None) -> np.ndarray:
    """Turn standard-normal draws into proposals sampled from the distribution.

    Each row of ``gaussian`` produces ``mu + g * sigma``. Samples whose
    corners invert (possible when sigma is large relative to the box) are
    repaired by swapping the offending pair, which keeps the sample count
    and the marginal distribution of each border intact.
    """
    g = np.asarray(gaussian, dtype=np.float64).reshape(-1, 4)
    samples = dist.mu + g * dist.sigma
    return repair_corners(samples, diagnostics, "aug_repaired")


def augment_proposals(
    dist: SpatialDistribution,
    count: int,
    rng: np.random.Generator,
    *,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """Sample ``count`` proposals from the modeled Gaussian."""
    if count < 0:
        raise ValueError("augmentation count must be non-negative")
    if count == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return augment_from_noise(dist, rng.standard_normal((count, 4)), diagnostics=diagnostics)


def merge_augmented(group: ProposalGroup, aug_boxes, aug_scores) -> ProposalGroup:
    """Concatenate augmented proposals and scores onto a group.

    Only the updated-proposal and score lists grow; the original
    proposals are untouched and remain the prefix of the updated list.
    """
    aug = as_box_array(aug_boxes, "aug_boxes").reshape(-1, 4)
    scores = np.asarray(aug_scores, dtype=np.float64).reshape(-1)
    if len(aug) != len(scores):
        raise ValueError("augmented boxes and scores must stay aligned")
    return ProposalGroup(
        proposals=group.proposals,
        updated=np.vstack([group.updated, aug]),
        scores=np.concatenate([group.scores, scores]),
        category=group.category,
        noisy_gt_index=group.noisy_gt_index,
        cls_scores=group.cls_scores,
    )


def aug_loss(groups: list[ProposalGroup]) -> float:
    """Mean negative log of each group's best classification score."""
    if not groups:
        raise ValueError("aug_loss needs at least one group")
    best = np.array([max(g.scores.max(), SCORE_FLOOR) for g in groups])
    return float(np.mean(-np.log(best)))


def phi(score: float, cfg: FusionConfig, *, diagnostics: Diagnostics | None = None) -> float:
    """Fusion weight ``min(score**alpha, beta)``; scores outside [0, 1] are clamped."""
    s = float(score)
    if s < 0.0 or s > 1.0:
        if diagnostics is not None:
            diagnostics.bump("phi_input_clamped")
        s = min(max(s, 0.0), 1.0)
    return float(min(s**cfg.alpha, cfg.beta))


def refine_box(
    mu,
    score_mu: float,
    noisy_box,
    cfg: FusionConfig,
    *,
    diagnostics: Diagnostics | None = None,
) -> RefinedGroundTruth:
    """Fuse the noisy box toward the distribution mean, gated by its score.

    The fused box is the componentwise convex combination
    ``phi * mu + (1 - phi) * noisy`` computed as ``noisy + phi * (mu - noisy)``
    and clamped to the componentwise interval between the two inputs, so
    the endpoints are exact and convexity holds bit-for-bit.
    """
    m = np.asarray(mu, dtype=np.float64).reshape(4)
    b = as_box_array(noisy_box, "noisy_box").reshape(4)
    weight = phi(score_mu, cfg, diagnostics=diagnostics)
    fused = b + weight * (m - b)
    fused = np.clip(fused, np.minimum(m, b), np.maximum(m, b))
    if fused[2] < fused[0] or fused[3] < fused[1]:
        fused = repair_corners(fused, diagnostics, "refined_repaired")
    return RefinedGroundTruth(box=fused, phi=weight, source_score=float(score_mu))


def smooth_l1(values) -> np.ndarray:
    """Elementwise smooth-L1: quadratic inside |x| < 1, linear outside."""
    x = np.asarray(values, dtype=np.float64)
    absx = np.abs(x)
    return np.where(absx < 1.0, 0.5 * x * x, absx - 0.5)


def reg_loss(
    group: ProposalGroup,
    refined: RefinedGroundTruth,
    *,
    diagnostics: Diagnostics | None = None,
) -> float:
    """Mean smooth-L1 offset distance from the original proposals to the fused box.

    Distances are taken on the offset encoding of each original proposal
    against the refined box and summed over the four components before
    averaging over the group. Degenerate zero-size proposals cannot be
    encoded and are skipped (and counted) rather than poisoning the mean.
    """
    boxes = group.proposals
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    usable = (widths > 0) & (heights > 0)
    if diagnostics is not None:
        diagnostics.bump("reg_degenerate_skipped", int((~usable).sum()))
    if not usable.any():
        return 0.0
    deltas = encode_delta(boxes[usable], refined.box[None, :])
    return float(np.mean(smooth_l1(deltas).sum(axis=1)))
