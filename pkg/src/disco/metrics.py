"""Detection quality metrics for the simulation harness."""

from __future__ import annotations

import numpy as np

from disco.estimation import Detection
from disco.geometry import as_box_array, iou


def average_precision(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """All-point interpolated average precision from a PR curve."""
    r = np.concatenate([[0.0], recalls])
    p = np.concatenate([[1.0], precisions])
    envelope = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * envelope[1:]))


def evaluate_ap50(
    detections_by_scene: list[list[Detection]],
    gts_by_scene: list[tuple[np.ndarray, np.ndarray]],
    *,
    iou_threshold: float = 0.5,
) -> float | None:
    """Average precision at the IoU threshold, averaged over categories.

    ``gts_by_scene`` pairs each scene's ground-truth corner boxes with
    their category labels. Detections are matched greedily in descending
    score order against the unmatched ground truth of highest overlap in
    their own scene and category. Categories absent from the ground
    truth are skipped; with no ground truth at all the metric is
    undefined and ``None`` is returned rather than 0.
    """
    if len(detections_by_scene) != len(gts_by_scene):
        raise ValueError("detections and ground truths must cover the same scenes")
    gt_boxes = [as_box_array(b, "gt boxes").reshape(-1, 4) for b, _ in gts_by_scene]
    gt_cats = [np.asarray(c, dtype=np.int64).reshape(-1) for _, c in gts_by_scene]
    categories = sorted({int(c) for cats in gt_cats for c in cats})
    if not categories:
        return None

    ap_per_category = []
    for category in categories:
        n_gt = sum(int((cats == category).sum()) for cats in gt_cats)
        entries = []  # (score, scene, box) in deterministic order
        for scene_idx, dets in enumerate(detections_by_scene):
            for det in dets:
                if det.category == category:
                    entries.append((det.score, scene_idx, det.box))
        if not entries:
            ap_per_category.append(0.0)
            continue
        order = np.lexsort(
            (np.arange(len(entries)), -np.array([e[0] for e in entries]))
        )
        matched = [np.zeros(len(cats), dtype=bool) for cats in gt_cats]
        tp = np.zeros(len(entries))
        for rank, idx in enumerate(order):
            _, scene_idx, box = entries[idx]
            candidates = np.flatnonzero(
                (gt_cats[scene_idx] == category) & ~matched[scene_idx]
            )
            if len(candidates) == 0:
                continue
            overlaps = iou(
                np.broadcast_to(box, (len(candidates), 4)),
                gt_boxes[scene_idx][candidates],
            )
            best = int(np.argmax(overlaps))
            if overlaps[best] >= iou_threshold:
                matched[scene_idx][candidates[best]] = True
                tp[rank] = 1.0
        cum_tp = np.cumsum(tp)
        recalls = cum_tp / n_gt
        precisions = cum_tp / np.arange(1, len(entries) + 1)
        ap_per_category.append(average_precision(recalls, precisions))
    return float(np.mean(ap_per_category))
