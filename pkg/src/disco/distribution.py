"""Spatial distribution modeling over a proposal group.

A group of proposals assigned to one ground truth is summarized as a
four-dimensional diagonal Gaussian: temperature-softmax weights over the
per-proposal classification scores, a weighted mean of the regressed
boxes, and a weighted per-coordinate standard deviation about that mean.
The mean acts as a statistical guess at the object location and the
deviation measures how tightly the group aggregates around it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from disco.diagnostics import Diagnostics
from disco.geometry import as_box_array


@dataclass
class ProposalGroup:
    """Proposals assigned to one (noisy or refined) ground truth.

    ``proposals`` holds the original boxes, ``updated`` the regressed
    ones, and ``scores`` the true-category classification score of each
    updated box. After augmentation merging, ``updated``/``scores`` grow
    beyond ``proposals`` while keeping the originals as their prefix.
    ``noisy_gt_index`` locates the ground-truth box inside the group and
    ``cls_scores`` optionally carries the scores of the original boxes
    for the classification loss.
    """

    proposals: np.ndarray
    updated: np.ndarray
    scores: np.ndarray
    category: int
    noisy_gt_index: int
    cls_scores: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.proposals = as_box_array(self.proposals, "proposals").reshape(-1, 4)
        self.updated = as_box_array(self.updated, "updated").reshape(-1, 4)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.proposals) < 1:
            raise ValueError("a proposal group needs at least one proposal")
        if len(self.updated) != len(self.scores):
            raise ValueError("updated proposals and scores must stay aligned")
        if len(self.updated) < len(self.proposals):
            raise ValueError("updated proposals cannot be fewer than the originals")
        if not 0 <= self.noisy_gt_index < len(self.proposals):
            raise ValueError("noisy_gt_index must point into the proposal list")
        if self.cls_scores is not None:
            self.cls_scores = np.asarray(self.cls_scores, dtype=np.float64).reshape(-1)
            if len(self.cls_scores) != len(self.proposals):
                raise ValueError("cls_scores must align with the original proposals")

    def __len__(self) -> int:
        return len(self.updated)


@dataclass
class SpatialDistribution:
    """Diagonal 4-D Gaussian over box coordinates: mean and std, in pixels."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(4)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(4)
        if not (np.isfinite(self.mu).all() and np.isfinite(self.sigma).all()):
            raise ValueError("distribution parameters must be finite")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative componentwise")


def softmax_weights(scores, temperature: float) -> np.ndarray:
    """Normalized weights ``exp(s/T) / sum exp(s/T)``.

    Computed with max subtraction; scores are nominally in [0, 1] but
    surrogate noise can push them outside, so stability is cheap
    insurance.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise ValueError("cannot weight an empty score list")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = (s - s.max()) / temperature
    w = np.exp(z)
    return w / w.sum()


def weighted_mean(boxes, weights) -> np.ndarray:
    """Componentwise convex combination of boxes under normalized weights."""
    arr = as_box_array(boxes).reshape(-1, 4)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(arr) != len(w):
        raise ValueError("boxes and weights must have equal length")
    return w @ arr


def weighted_std(boxes, mu, weights) -> np.ndarray:
    """Per-coordinate weighted standard deviation about ``mu``."""
    arr = as_box_array(boxes).reshape(-1, 4)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(arr) != len(w):
        raise ValueError("boxes and weights must have equal length")
    center = np.asarray(mu, dtype=np.float64).reshape(4)
    return np.sqrt(w @ (arr - center) ** 2)


def repair_corners(box: np.ndarray, diagnostics: Diagnostics | None, key: str) -> np.ndarray:
    """Swap inverted corner pairs in place of rejecting them, counting repairs."""
    out = np.array(box, dtype=np.float64, copy=True)
    if out.ndim == 1:
        flipped = False
        if out[2] < out[0]:
            out[0], out[2] = out[2], out[0]
            flipped = True
        if out[3] < out[1]:
            out[1], out[3] = out[3], out[1]
            flipped = True
        if flipped and diagnostics is not None:
            diagnostics.bump(key)
        return out
    swap_x = out[:, 2] < out[:, 0]
    swap_y = out[:, 3] < out[:, 1]
    if swap_x.any():
        out[swap_x, 0], out[swap_x, 2] = out[swap_x, 2].copy(), out[swap_x, 0].copy()
    if swap_y.any():
        out[swap_y, 1], out[swap_y, 3] = out[swap_y, 3].copy(), out[swap_y, 1].copy()
    if diagnostics is not None:
        diagnostics.bump(key, int((swap_x | swap_y).sum()))
    return out


def model_distribution(
    group: ProposalGroup,
    temperature: float,
    *,
    sigma_source: str = "original",
    diagnostics: Diagnostics | None = None,
) -> SpatialDistribution:
    """Fit the weighted diagonal Gaussian to a proposal group.

    Weights come from the group scores at the given temperature and the
    mean is taken over the updated proposals. ``sigma_source`` selects
    which boxes the deviation is computed from: ``"original"`` (default)
    uses the raw proposals, whose wider spread measures the group before
    the regressor tightened it; ``"updated"`` uses the same boxes that
    produced the mean and is kept for A/B comparison. Groups that have
    been lengthened by augmentation fall back to the updated boxes since
    the originals no longer align with the weights.
    """
    if sigma_source not in ("updated", "original"):
        raise ValueError(f"unknown sigma_source {sigma_source!r}")
    w = softmax_weights(group.scores, temperature)
    mu = weighted_mean(group.updated, w)
    if mu[2] < mu[0] or mu[3] < mu[1]:
        mu = repair_corners(mu, diagnostics, "mu_repaired")
    boxes = group.updated
    if sigma_source == "original":
        if len(group.proposals) == len(group.updated):
            boxes = group.proposals
        elif diagnostics is not None:
            diagnostics.bump("sigma_source_fallback")
    sigma = weighted_std(boxes, mu, w)
    return SpatialDistribution(mu=mu, sigma=sigma)
