"""Training objectives and the angular evaluation metric.

Losses are differentiable tensor expressions; the angle/vector conversions
and the angular error are plain numpy (evaluation never needs gradients).
Angle convention: pitch is vertical (positive up), yaw horizontal (positive
left), camera-forward z; radians internally, degrees at reporting boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, absolute, add, mean_, mul, scale, sub, sum_


class MetricError(ValueError):
    """Inputs outside the metric's domain (e.g. a zero-length gaze vector)."""


@dataclass(frozen=True)
class GazeAngles:
    pitch: float  # radians
    yaw: float  # radians


@dataclass(frozen=True)
class LossReport:
    eye_recon: float  # L1
    region_recon: float  # L2
    gaze: float  # Lg
    total: float


def mse(pred: Tensor, target: Tensor) -> Tensor:
    d = sub(pred, target)
    return mean_(mul(d, d))


def eye_recon_loss(recon_l: Tensor, recon_r: Tensor, target_l: Tensor, target_r: Tensor) -> Tensor:
    """Sum of the two per-eye mean squared errors."""
    return add(mse(recon_l, target_l), mse(recon_r, target_r))


def region_recon_loss(recons, targets) -> Tensor:
    """Sum of the top/mid/bottom region mean squared errors."""
    if len(recons) != 3 or len(targets) != 3:
        raise MetricError("region loss expects exactly three region pairs")
    total = mse(recons[0], targets[0])
    for r, t in zip(recons[1:], targets[1:]):
        total = add(total, mse(r, t))
    return total


def gaze_loss(pred: Tensor, truth: Tensor) -> Tensor:
    """Mean over samples of |d pitch| + |d yaw| (radians); pred/truth are (n, 2)."""
    n = pred.data.shape[0]
    return scale(sum_(absolute(sub(pred, truth))), 1.0 / n)


def total_loss(lg: Tensor, l1: Tensor, l2: Tensor, lambda_eye: float = 1.0, lambda_region: float = 1.0) -> Tensor:
    return add(lg, add(scale(l1, lambda_eye), scale(l2, lambda_region)))


# ---------------------------------------------------------------------------
# angle / vector conversions (numpy, evaluation side)

def angles_to_vector(pitch, yaw) -> np.ndarray:
    """Unit gaze vector(s) (x, y, z) from pitch/yaw radians. Accepts scalars
    or same-shape arrays; vectors land on the last axis."""
    pitch = np.asarray(pitch, dtype=float)
    yaw = np.asarray(yaw, dtype=float)
    cp = np.cos(pitch)
    return np.stack([cp * np.sin(yaw), np.sin(pitch), cp * np.cos(yaw)], axis=-1)


def vector_to_angles(g) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of angles_to_vector for |pitch| < pi/2 (atan2 based)."""
    g = np.asarray(g, dtype=float)
    pitch = np.arctan2(g[..., 1], np.hypot(g[..., 0], g[..., 2]))
    yaw = np.arctan2(g[..., 0], g[..., 2])
    return pitch, yaw


def angular_error_deg(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Angle in degrees between gaze vectors; dot product clamped so that
    identical vectors report exactly zero despite rounding."""
    g = np.asarray(g, dtype=float)
    g_ref = np.asarray(g_ref, dtype=float)
    sq_g = (g * g).sum(axis=-1)
    sq_r = (g_ref * g_ref).sum(axis=-1)
    if np.any(sq_g == 0.0) or np.any(sq_r == 0.0):
        raise MetricError("angular error undefined for zero-length vectors")
    # sqrt(sq_g * sq_r) (not norm*norm) so identical inputs give cos exactly 1
    cos = np.clip((g * g_ref).sum(axis=-1) / np.sqrt(sq_g * sq_r), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def angles_error_deg(pred_pitch, pred_yaw, true_pitch, true_yaw) -> np.ndarray:
    """Angular error between two pitch/yaw pairs, in degrees."""
    return angular_error_deg(angles_to_vector(pred_pitch, pred_yaw), angles_to_vector(true_pitch, true_yaw))
