"""Axis-aligned bounding-box geometry.

Two array layouts are used throughout the package:

* corner boxes ``[x1, y1, x2, y2]`` with ``x1 <= x2`` and ``y1 <= y2``
* center-size boxes ``[cx, cy, w, h]`` with ``w > 0`` and ``h > 0``

plus the detector offset encoding ``[dx, dy, dw, dh]``, where the center
offsets are normalized by the anchor size and the width/height factors
are logarithmic. Every function accepts a single box ``(4,)`` or a batch
``(N, 4)`` and returns the matching shape. Coordinates are continuous
reals; nothing here rounds to a pixel grid.
"""

from __future__ import annotations

import math

import numpy as np

# Decoded |dw|, |dh| are clamped here before exponentiation (a scale
# factor of ~62.5), so pathological regressor output cannot overflow.
SCALE_CLAMP = 4.135


def as_box_array(boxes, name: str = "boxes") -> np.ndarray:
    """Cast to a float64 array shaped ``(..., 4)``."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != 4:
        raise ValueError(f"{name} must have four components per box, got shape {arr.shape}")
    return arr


def validate_corners(boxes, name: str = "boxes") -> np.ndarray:
    """Cast and check the corner-box invariants: finite, x1 <= x2, y1 <= y2."""
    arr = as_box_array(boxes, name)
    if arr.ndim == 1:
        x1, y1, x2, y2 = arr.tolist()
        if not (math.isfinite(x1) and math.isfinite(y1) and math.isfinite(x2) and math.isfinite(y2)):
            raise ValueError(f"{name} must be finite")
        if x2 < x1 or y2 < y1:
            raise ValueError(f"{name} has inverted corners")
        return arr
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite")
    if np.any(arr[..., 2] < arr[..., 0]) or np.any(arr[..., 3] < arr[..., 1]):
        raise ValueError(f"{name} has inverted corners")
    return arr


def box_area(boxes):
    """Area of corner boxes (0 for degenerate boxes)."""
    arr = as_box_array(boxes)
    area = (arr[..., 2] - arr[..., 0]) * (arr[..., 3] - arr[..., 1])
    return float(area) if area.ndim == 0 else area


def _iou_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU over pre-validated float64 arrays (no casting or shape checks)."""
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = np.asarray(area_a + area_b - inter, dtype=np.float64)
    return np.divide(inter, union, out=np.zeros_like(union), where=union > 0)


def iou(a, b):
    """Intersection over union of corner boxes, elementwise over a broadcast batch.

    Pairs whose union has zero area yield 0 rather than dividing by zero,
    so ``iou(x, x) == 1`` holds exactly for boxes with positive area and
    degenerate boxes never poison downstream statistics.
    """
    out = _iou_arrays(as_box_array(a, "a"), as_box_array(b, "b"))
    return float(out) if out.ndim == 0 else out


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box sets: ``(N, 4) x (M, 4) -> (N, M)``."""
    a = as_box_array(a, "a").reshape(-1, 4)
    b = as_box_array(b, "b").reshape(-1, 4)
    return _iou_arrays(a[:, None, :], b[None, :, :])


def _to_center_size_arrays(arr: np.ndarray) -> np.ndarray:
    out = np.empty_like(arr)
    out[..., 0] = (arr[..., 0] + arr[..., 2]) / 2.0
    out[..., 1] = (arr[..., 1] + arr[..., 3]) / 2.0
    out[..., 2] = arr[..., 2] - arr[..., 0]
    out[..., 3] = arr[..., 3] - arr[..., 1]
    return out


def to_center_size(boxes) -> np.ndarray:
    """Convert corner boxes to center-size form.

    Zero-width or zero-height boxes are rejected: they have no valid
    center-size representation under the ``w > 0, h > 0`` invariant.
    """
    arr = validate_corners(boxes)
    out = _to_center_size_arrays(arr)
    if np.any(out[..., 2] <= 0) or np.any(out[..., 3] <= 0):
        raise ValueError("box with zero width or height cannot be converted to center-size form")
    return out


def _to_corners_arrays(arr: np.ndarray) -> np.ndarray:
    out = np.empty_like(arr)
    hw = arr[..., 2] / 2.0
    hh = arr[..., 3] / 2.0
    out[..., 0] = arr[..., 0] - hw
    out[..., 1] = arr[..., 1] - hh
    out[..., 2] = arr[..., 0] + hw
    out[..., 3] = arr[..., 1] + hh
    return out


def to_corners(boxes) -> np.ndarray:
    """Convert center-size boxes back to corner form."""
    arr = as_box_array(boxes)
    if not np.isfinite(arr).all():
        raise ValueError("center-size boxes must be finite")
    if np.any(arr[..., 2] <= 0) or np.any(arr[..., 3] <= 0):
        raise ValueError("center-size boxes need positive width and height")
    return _to_corners_arrays(arr)


def apply_delta(anchors, deltas) -> np.ndarray:
    """Decode offsets against anchor boxes.

    The center moves by the offset times the anchor size and the sizes
    scale by ``exp`` of the (clamped) log factors:

    ``cx' = cx + dx*w``, ``cy' = cy + dy*h``, ``w' = w*exp(dw)``, ``h' = h*exp(dh)``
    """
    cs = to_center_size(anchors)
    d = np.asarray(deltas, dtype=np.float64)
    if d.ndim == 0 or d.shape[-1] != 4:
        raise ValueError(f"deltas must have four components, got shape {d.shape}")
    if not np.isfinite(d).all():
        raise ValueError("deltas must be finite")
    cs, d = np.broadcast_arrays(cs, d)
    out = np.empty(cs.shape, dtype=np.float64)
    out[..., 0] = cs[..., 0] + d[..., 0] * cs[..., 2]
    out[..., 1] = cs[..., 1] + d[..., 1] * cs[..., 3]
    out[..., 2] = cs[..., 2] * np.exp(np.clip(d[..., 2], -SCALE_CLAMP, SCALE_CLAMP))
    out[..., 3] = cs[..., 3] * np.exp(np.clip(d[..., 3], -SCALE_CLAMP, SCALE_CLAMP))
    return _to_corners_arrays(out)


def _encode_from_center_size(acs: np.ndarray, tcs: np.ndarray) -> np.ndarray:
    acs, tcs = np.broadcast_arrays(acs, tcs)
    out = np.empty(acs.shape, dtype=np.float64)
    out[..., 0] = (tcs[..., 0] - acs[..., 0]) / acs[..., 2]
    out[..., 1] = (tcs[..., 1] - acs[..., 1]) / acs[..., 3]
    out[..., 2] = np.log(tcs[..., 2] / acs[..., 2])
    out[..., 3] = np.log(tcs[..., 3] / acs[..., 3])
    return out


def encode_delta(anchors, targets) -> np.ndarray:
    """Offsets that decode ``anchors`` into ``targets`` (inverse of apply_delta).

    Both inputs need positive width and height; degenerate anchors have
    no well-defined encoding and are rejected.
    """
    return _encode_from_center_size(to_center_size(anchors), to_center_size(targets))


def clip_to_image(boxes, width: float, height: float):
    """Clamp boxes into ``[0, width] x [0, height]``.

    Returns ``(clipped, valid)``: a box fully outside the image collapses
    to a zero-area sliver on the border and is flagged invalid so callers
    can drop it instead of propagating degenerate geometry.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image width and height must be positive")
    arr = validate_corners(boxes)
    x1 = np.clip(arr[..., 0], 0.0, float(width))
    y1 = np.clip(arr[..., 1], 0.0, float(height))
    x2 = np.clip(arr[..., 2], 0.0, float(width))
    y2 = np.clip(arr[..., 3], 0.0, float(height))
    clipped = np.stack([x1, y1, x2, y2], axis=-1)
    valid = (x2 > x1) & (y2 > y1)
    return clipped, (bool(valid) if valid.ndim == 0 else valid)
