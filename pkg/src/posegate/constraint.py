"""Lock-on detection from per-frame vehicle detections.

A vehicle that keeps the same image-plane position across two consecutive
frames is moving at roughly the ego vehicle's velocity and heading, so its
apparent stillness constrains the ego motion.  Detections are matched across
frames by pooled appearance descriptors, per-keypoint mutual nearest
neighbours give pixel correspondences, and a matched pair locks on when its
mean pixel shift stays below a bounding-box-scaled threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class ConstraintParams:
    """Detector tuning; defaults match the filter's stock configuration."""

    mask_area_fraction: float = 0.0004
    assoc_max_dist: float = 0.8
    min_matches: int = 5
    tau_divisor: float = 70.0

    def __post_init__(self):
        if self.mask_area_fraction < 0.0:
            raise ValueError("mask area fraction must be non-negative")
        if self.assoc_max_dist <= 0.0 or self.tau_divisor <= 0.0:
            raise ValueError("association distance and tau divisor must be positive")
        if self.min_matches < 1:
            raise ValueError("min_matches must be at least 1")


@dataclass(frozen=True)
class VehicleDetection:
    """One detected vehicle: box, mask size, keypoints and descriptors."""

    id: int
    bbox: tuple[float, float, float, float]  # (u_min, v_min, u_max, v_max)
    mask_area: float
    keypoints: np.ndarray   # (N, 2) pixel locations
    descriptors: np.ndarray  # (N, D) unit rows
    pooled: np.ndarray       # (D,) mean of descriptor rows

    @classmethod
    def create(cls, det_id: int, bbox, mask_area: float, keypoints,
               descriptors) -> "VehicleDetection":
        """Build a detection, unit-normalizing descriptor rows and pooling."""
        keypoints = np.asarray(keypoints, dtype=float).reshape(-1, 2).copy()
        descriptors = np.asarray(descriptors, dtype=float).copy()
        if descriptors.ndim != 2 or descriptors.shape[0] != keypoints.shape[0]:
            raise ValueError("keypoints and descriptors must align")
        if keypoints.shape[0] < 1:
            raise ValueError("a detection needs at least one keypoint")
        norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
        if np.any(norms <= 0.0):
            raise ValueError("descriptors must be non-zero")
        descriptors = descriptors / norms
        bbox = tuple(float(b) for b in bbox)
        if (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]) <= 0.0:
            raise ValueError("bounding box must have positive area")
        return cls(int(det_id), bbox, float(mask_area), keypoints, descriptors,
                   pool_descriptor(descriptors))

    @property
    def bbox_area(self) -> float:
        u_min, v_min, u_max, v_max = self.bbox
        return (u_max - u_min) * (v_max - v_min)


@dataclass(frozen=True)
class LockedPair:
    """A cross-frame vehicle pair whose mean pixel shift beat its threshold."""

    prev_id: int
    curr_id: int
    mean_shift: float
    threshold: float


@dataclass(frozen=True)
class ConstraintDecision:
    """Per-frame verdict: constrained iff at least one pair locked on."""

    constrained: bool
    locked_pairs: tuple[LockedPair, ...]

    @classmethod
    def from_pairs(cls, pairs: Sequence[LockedPair]) -> "ConstraintDecision":
        pairs = tuple(pairs)
        return cls(bool(pairs), pairs)


def filter_detections(dets: Sequence[VehicleDetection], image_w: int, image_h: int,
                      min_fraction: float = 0.0004) -> list[VehicleDetection]:
    """Drop detections whose mask is under ``min_fraction`` of the image area."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    threshold = min_fraction * image_w * image_h
    return [d for d in dets if d.mask_area >= threshold]


def pool_descriptor(descriptors) -> np.ndarray:
    """Componentwise mean of a non-empty descriptor set."""
    descriptors = np.asarray(descriptors, dtype=float)
    if descriptors.ndim != 2 or descriptors.shape[0] == 0:
        raise ValueError("cannot pool an empty descriptor set")
    return descriptors.mean(axis=0)


def mutual_nn_matches(l1, l2) -> list[tuple[int, int]]:
    """Mutual nearest neighbours between two descriptor sets.

    (i, j) is kept iff j is i's nearest row of l2 and i is j's nearest row of
    l1, Euclidean distance, ties broken by lowest index.
    """
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    if l1.size == 0 or l2.size == 0:
        return []
    dist = cdist(l1, l2)
    nn12 = dist.argmin(axis=1)  # argmin returns the first (lowest) index on ties
    nn21 = dist.argmin(axis=0)
    return [(i, int(j)) for i, j in enumerate(nn12) if nn21[j] == i]


def associate_vehicles(prev: Sequence[VehicleDetection], curr: Sequence[VehicleDetection],
                       max_dist: float = 0.8) -> list[tuple[int, int]]:
    """Pair vehicles across frames by mutual-NN on pooled descriptors.

    Each vehicle matches at most once; pairs farther apart than ``max_dist``
    are discarded.  Returns (prev id, curr id) pairs.
    """
    if not prev or not curr:
        return []
    pooled_prev = np.stack([d.pooled for d in prev])
    pooled_curr = np.stack([d.pooled for d in curr])
    pairs = []
    for i, j in mutual_nn_matches(pooled_prev, pooled_curr):
        if np.linalg.norm(pooled_prev[i] - pooled_curr[j]) <= max_dist:
            pairs.append((prev[i].id, curr[j].id))
    return pairs


def mean_pixel_shift(matches: Sequence[tuple[int, int]], kps1, kps2) -> float:
    """Mean Euclidean pixel distance between matched keypoints."""
    if len(matches) == 0:
        raise ValueError("mean pixel shift needs at least one match")
    kps1 = np.asarray(kps1, dtype=float)
    kps2 = np.asarray(kps2, dtype=float)
    idx1 = [i for i, _ in matches]
    idx2 = [j for _, j in matches]
    return float(np.mean(np.linalg.norm(kps1[idx1] - kps2[idx2], axis=1)))


def tau(bbox_area: float, divisor: float = 70.0) -> float:
    """Lock-on threshold in pixels, scaled with bounding-box side length."""
    if bbox_area <= 0.0:
        raise ValueError("bounding box area must be positive")
    return float(np.sqrt(bbox_area)) / divisor


def detect_constraint(prev_dets: Sequence[VehicleDetection],
                      curr_dets: Sequence[VehicleDetection],
                      image_size: tuple[int, int],
                      params: Optional[ConstraintParams] = None) -> ConstraintDecision:
    """Full per-frame decision over two consecutive frames' detections."""
    if params is None:
        params = ConstraintParams()
    w, h = image_size
    prev_dets = filter_detections(prev_dets, w, h, params.mask_area_fraction)
    curr_dets = filter_detections(curr_dets, w, h, params.mask_area_fraction)
    prev_by_id = {d.id: d for d in prev_dets}
    curr_by_id = {d.id: d for d in curr_dets}

    locked = []
    for prev_id, curr_id in associate_vehicles(prev_dets, curr_dets, params.assoc_max_dist):
        d_prev = prev_by_id[prev_id]
        d_curr = curr_by_id[curr_id]
        matches = mutual_nn_matches(d_prev.descriptors, d_curr.descriptors)
        if len(matches) < params.min_matches:
            continue
        shift = mean_pixel_shift(matches, d_prev.keypoints, d_curr.keypoints)
        threshold = tau(d_curr.bbox_area, params.tau_divisor)
        if shift < threshold:
            locked.append(LockedPair(prev_id, curr_id, shift, threshold))
    return ConstraintDecision.from_pairs(locked)
