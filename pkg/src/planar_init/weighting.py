"""Dynamic per-feature pixel deviation for stereo visual residuals.

Two residual types: the stereo (left-to-right, same time) deviation uses
the baseline and a reference depth; the temporal deviation predicts the
next-keyframe coordinate from the motion field under a uniform-motion
assumption.  Weights are inverse-variance in the deviation, floored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDisparityError, TimeStepError, ZeroDepthError
from .geometry import CameraRig, homogeneous, normalize
from .motion_field import projection_velocity_matrix

STEREO = "stereo"
TEMPORAL = "temporal"


@dataclass(frozen=True)
class PixelDeviation:
    sigma: float
    kind: str
    feature_id: int = -1
    keyframe: int = -1

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0.0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.kind not in (STEREO, TEMPORAL):
            raise ValueError(f"unknown deviation kind {self.kind!r}")


def stereo_deviation(obs_l, obs_r, rig: CameraRig, depth: float,
                     feature_id: int = -1, keyframe: int = -1) -> PixelDeviation:
    """Left-to-right reprojection deviation in pixels.

    ``depth`` is the feature's reference depth (from its first stereo
    triangulation); the left observation is pushed across the baseline at
    that depth and compared with the measured right observation.
    """
    if depth <= 0.0:
        raise InvalidDisparityError(f"reference depth {depth} must be positive")
    p_l = homogeneous(normalize(rig, obs_l))
    p_r = normalize(rig, obs_r)
    pred = depth * p_l + np.array([-rig.baseline, 0.0, 0.0])
    sigma = rig.f * float(np.linalg.norm(pred[:2] / pred[2] - p_r))
    return PixelDeviation(sigma, STEREO, feature_id, keyframe)


def temporal_deviation(obs_k, obs_k1, p_c_k, v_rel, omega_c, dt: float,
                       rig: CameraRig, feature_id: int = -1,
                       keyframe: int = -1) -> PixelDeviation:
    """Left-camera deviation between predicted and tracked next coordinates.

    ``v_rel`` is the camera's translational velocity in its own frame and
    ``omega_c`` its angular rate; the feature's camera-frame velocity is
    ``-v_rel - omega_c x p_c`` and the next normalized coordinate follows
    by uniform motion over ``dt``.
    """
    if dt <= 0.0:
        raise TimeStepError(f"dt must be positive, got {dt}")
    p_c = np.asarray(p_c_k, dtype=np.float64).reshape(3)
    if abs(p_c[2]) < 1e-9:
        raise ZeroDepthError("zero feature depth")
    v_c = -np.asarray(v_rel, dtype=np.float64) - np.cross(
        np.asarray(omega_c, dtype=np.float64), p_c)
    v_hat = projection_velocity_matrix(p_c) @ v_c
    predicted = normalize(rig, obs_k) + v_hat * dt
    sigma = rig.f * float(np.linalg.norm(predicted - normalize(rig, obs_k1)))
    return PixelDeviation(sigma, TEMPORAL, feature_id, keyframe)


def weight(dev: PixelDeviation, floor: float = 0.25) -> float:
    """Inverse-variance weight 1 / max(sigma, floor)^2."""
    if floor <= 0.0:
        raise ValueError("floor must be positive")
    s = max(dev.sigma, floor)
    return 1.0 / (s * s)


def estimated_flow(p_l, v_hat, dt: float, rig: CameraRig) -> np.ndarray:
    """Predicted inter-frame pixel displacement at a normalized point."""
    if dt <= 0.0:
        raise TimeStepError(f"dt must be positive, got {dt}")
    del p_l  # the pinhole flow f * v * dt does not depend on the point
    return rig.f * np.asarray(v_hat, dtype=np.float64).reshape(2) * dt
