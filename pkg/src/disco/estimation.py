"""Per-border confidence estimation and variance-aware suppression.

A small linear model maps geometric proposal features to a positive
per-border variance through a softplus output, trained by SGD on an L1
loss against the squared deviation of the modeled group distribution.
At inference time the predicted variances drive a suppression variant
that replaces each kept box's coordinates with the inverse-variance
weighted mean of its suppressed cluster; a plain greedy NMS is kept as
the baseline. Both suppress the same detections, they differ only in
the coordinates of the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from disco.geometry import as_box_array, iou

# Floors division by predicted variance in the weighted coordinate mean.
VARIANCE_FLOOR = 1e-6
# A batch loss above this aborts training as diverged.
DIVERGENCE_LIMIT = 1e6
# softplus(-40) underflows to ~4e-18: an estimator biased here predicts
# (numerically) zero variance everywhere.
ZERO_OUTPUT_BIAS = -40.0

FEATURE_DIM = 8


def softplus(z):
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class LinearEstimator:
    """Linear map from 8-d proposal features to pre-activation variances.

    Predictions pass through softplus so the output is positive by
    construction; the model itself never needs clamping.
    """

    weights: np.ndarray
    bias: np.ndarray
    learning_rate: float = 0.5
    steps_taken: int = field(default=0)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(FEATURE_DIM, 4)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(4)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("estimator parameters must be finite")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator | int | None = None,
        *,
        scale: float = 0.01,
        bias: float = 1.0,
        learning_rate: float = 0.5,
    ) -> "LinearEstimator":
        """Small random weights and a mildly positive bias, ready to train."""
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        return cls(
            weights=gen.normal(0.0, scale, (FEATURE_DIM, 4)),
            bias=np.full(4, float(bias)),
            learning_rate=learning_rate,
        )

    @classmethod
    def zero_output(cls, *, learning_rate: float = 0.5) -> "LinearEstimator":
        """An estimator that predicts zero variance for every input."""
        return cls(
            weights=np.zeros((FEATURE_DIM, 4)),
            bias=np.full(4, ZERO_OUTPUT_BIAS),
            learning_rate=learning_rate,
        )

    def predict(self, features) -> np.ndarray:
        """Positive variance predictions, one 4-vector per feature row."""
        f = np.asarray(features, dtype=np.float64)
        single = f.ndim == 1
        f = np.atleast_2d(f)
        if f.shape[-1] != FEATURE_DIM:
            raise ValueError(f"features must have {FEATURE_DIM} components")
        out = softplus(f @ self.weights + self.bias)
        return out[0] if single else out


def est_loss(predictions, sigma) -> float:
    """Mean L1 distance between predicted variances and the squared deviation.

    The target is the square of the group's modeled standard deviation,
    shared by every proposal in the group; the norm sums over the four
    borders and the mean runs over proposals.
    """
    preds = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    target = np.asarray(sigma, dtype=np.float64).reshape(4) ** 2
    return float(np.mean(np.abs(preds - target).sum(axis=1)))


def estimator_loss_and_grad(est: LinearEstimator, features, targets):
    """Batch L1 loss against variance targets and its analytic gradients."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if f.shape[0] != t.shape[0]:
        raise ValueError("features and targets must have equal length")
    pre = f @ est.weights + est.bias
    preds = softplus(pre)
    resid = preds - t
    loss = float(np.mean(np.abs(resid).sum(axis=1)))
    dpre = np.sign(resid) * _sigmoid(pre) / f.shape[0]
    return loss, f.T @ dpre, dpre.sum(axis=0)


def train_estimator(
    est: LinearEstimator,
    features,
    targets,
    *,
    steps: int,
    batch_size: int = 256,
    rng: np.random.Generator | int | None = None,
) -> LinearEstimator:
    """SGD on the variance L1 loss; returns the trained copy.

    Batches are sampled with replacement from the provided pairs, so the
    trajectory is fully determined by the RNG. Training aborts if a batch
    loss explodes past the divergence limit.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if f.shape[0] != t.shape[0] or f.shape[0] == 0:
        raise ValueError("training needs aligned, non-empty features and targets")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    weights = est.weights.copy()
    bias = est.bias.copy()
    current = replace(est, weights=weights, bias=bias)
    take = min(batch_size, f.shape[0])
    for step in range(steps):
        idx = gen.integers(0, f.shape[0], take)
        loss, grad_w, grad_b = estimator_loss_and_grad(current, f[idx], t[idx])
        if loss > DIVERGENCE_LIMIT:
            raise RuntimeError(
                f"estimator diverged at step {step + est.steps_taken}: batch loss {loss:.3e}"
            )
        weights -= est.learning_rate * grad_w
        bias -= est.learning_rate * grad_b
    return LinearEstimator(
        weights=weights,
        bias=bias,
        learning_rate=est.learning_rate,
        steps_taken=est.steps_taken + steps,
    )


@dataclass
class Detection:
    """One scored box with optional per-border variance."""

    box: np.ndarray
    score: float
    category: int = 0
    variance: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.box = as_box_array(self.box, "box").reshape(4)
        self.score = float(self.score)
        if self.variance is not None:
            self.variance = np.asarray(self.variance, dtype=np.float64).reshape(4)


def _greedy_clusters(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float):
    """Greedy score-descending suppression shared by both NMS variants.

    Yields ``(keep_index, cluster_indices)`` pairs where the cluster is
    the kept detection plus everything it suppressed (IoU strictly above
    the threshold). Ties in score break by input order.
    """
    order = np.lexsort((np.arange(len(scores)), -scores))
    alive = np.ones(len(scores), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        overlaps = iou(boxes[i][None, :], boxes)
        cluster = alive & (overlaps > iou_threshold)
        cluster[i] = True
        alive &= ~cluster
        yield int(i), np.flatnonzero(cluster)


def variance_voted_boxes(
    boxes: np.ndarray,
    scores: np.ndarray,
    variances: np.ndarray,
    iou_threshold: float,
) -> tuple[list[int], np.ndarray]:
    """Array-level core of the variance-voting suppression.

    Returns the kept indices (score-descending) and, aligned with them,
    the inverse-variance weighted coordinates over each kept detection's
    suppressed cluster. Each merged coordinate is clamped to the cluster
    range so the vote can never leave the cluster's extent.
    """
    variances = np.maximum(variances, VARIANCE_FLOOR)
    kept: list[int] = []
    merged: list[np.ndarray] = []
    for keep, cluster in _greedy_clusters(boxes, scores, iou_threshold):
        inv = 1.0 / variances[cluster]
        vote = (boxes[cluster] * inv).sum(axis=0) / inv.sum(axis=0)
        vote = np.clip(vote, boxes[cluster].min(axis=0), boxes[cluster].max(axis=0))
        kept.append(keep)
        merged.append(vote)
    return kept, np.array(merged).reshape(-1, 4)


def standard_nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Classic greedy suppression; survivors keep their coordinates."""
    if not dets:
        return []
    boxes = np.stack([d.box for d in dets])
    scores = np.array([d.score for d in dets])
    return [dets[keep] for keep, _ in _greedy_clusters(boxes, scores, iou_threshold)]


def softer_nms(
    dets: list[Detection],
    iou_threshold: float,
    score_threshold: float = 0.0,
) -> list[Detection]:
    """Greedy suppression with inverse-variance coordinate voting.

    Each kept detection's coordinates are replaced by the per-border
    weighted mean over itself and its suppressed neighbors, weighting by
    the reciprocal of the (floored) predicted variance. The survivor set
    matches ``standard_nms`` at the same threshold; only coordinates
    change, and each merged coordinate stays inside the cluster's range.
    """
    dets = [d for d in dets if d.score >= score_threshold]
    if not dets:
        return []
    if any(d.variance is None for d in dets):
        raise ValueError("softer_nms needs a variance for every detection")
    boxes = np.stack([d.box for d in dets])
    scores = np.array([d.score for d in dets])
    variances = np.stack([d.variance for d in dets])
    kept, merged = variance_voted_boxes(boxes, scores, variances, iou_threshold)
    return [replace(dets[i], box=box) for i, box in zip(kept, merged)]
