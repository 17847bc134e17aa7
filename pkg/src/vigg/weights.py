"""
vigg | Copyright (c) The vigg developers

Weight rule for geometric correspondences: a Gaussian kernel on the
feature-space distance. Visual correspondences keep their match score.
"""
import typing as t

import numpy as np

from .exceptions import DimMismatch, InvalidConfig


def correspondence_weight(f_src: t.Any, f_dst: t.Any, bandwidth: float) -> float:
    """
    `exp(-‖f_src - f_dst‖² / (2·bandwidth²))`, in (0, 1].
    """
    if not bandwidth > 0:
        raise InvalidConfig(f"bandwidth must be positive, got {bandwidth}")
    a = np.asarray(f_src, dtype=np.float64)
    b = np.asarray(f_dst, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"feature dimensions differ: {a.shape} != {b.shape}")
    d2 = float(np.sum((a - b) ** 2))
    return float(np.exp(-d2 / (2.0 * bandwidth * bandwidth)))


def self_tuning_bandwidth(distances: np.ndarray) -> float | None:
    """
    Median of the feature distances; `None` when every distance is zero
    (all weights are then 1).
    """
    if not len(distances):
        return None
    median = float(np.median(distances))
    if median > 0:
        return median
    positive = distances[distances > 0]
    return float(positive.mean()) if len(positive) else None


def kernel_weights(distances: t.Any, bandwidth: float | None = None) -> np.ndarray:
    """
    Vectorized weight rule over feature distances. With no bandwidth the
    median distance of the batch is used.
    """
    d = np.asarray(distances, dtype=np.float64)
    if bandwidth is None:
        bandwidth = self_tuning_bandwidth(d)
        if bandwidth is None:
            return np.ones(len(d))
    elif not bandwidth > 0:
        raise InvalidConfig(f"bandwidth must be positive, got {bandwidth}")
    return np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))
