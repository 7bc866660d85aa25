"""Motion-field velocity refinement.

The image-plane velocity of a tracked plane feature constrains the body
velocity through a linear chain: body velocity -> camera velocity
(rigid-lever arm) -> apparent feature velocity in the camera ->
normalized image velocity -> transfer through the inter-keyframe
homography.  Gauss-Newton on the stacked residuals recovers the body
velocity in the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    HorizonSingularityError,
    InsufficientDataError,
    UnobservableVelocityError,
    ZeroDepthError,
)
from .geometry import CameraRig, Rotation
from .homography import Homography


def flow_transfer_matrix(h: Homography, p_i) -> np.ndarray:
    """2x2 Jacobian of the dehomogenized homography map at p_i.

    With the block partition H = [[h1, h2], [h3, h4]] this is
    ((h3 p + h4) h1 - (h1 p + h2) h3) / (h3 p + h4)^2.
    """
    p = np.asarray(p_i, dtype=np.float64).reshape(2)
    denom = float(h.h3 @ p + h.h4)
    if abs(denom) < 1e-9:
        raise HorizonSingularityError(f"h3.p + h4 = {denom:.3g} at {p}")
    num = denom * h.h1 - np.outer(h.h1 @ p + h.h2, h.h3)
    return num / (denom * denom)


def predicted_normalized_velocity(h: Homography, p_i, v_i) -> np.ndarray:
    """Transfer a normalized image velocity from the source to the target view."""
    v = np.asarray(v_i, dtype=np.float64).reshape(2)
    return flow_transfer_matrix(h, p_i) @ v


def projection_velocity_matrix(p_c) -> np.ndarray:
    """2x3 map from a camera-frame point velocity to normalized image velocity."""
    p = np.asarray(p_c, dtype=np.float64).reshape(3)
    z = p[2]
    if abs(z) < 1e-9:
        raise ZeroDepthError("feature depth is zero")
    return np.array([
        [1.0 / z, 0.0, -p[0] / (z * z)],
        [0.0, 1.0 / z, -p[1] / (z * z)],
    ])


def feature_normalized_velocity(p_c, v_c) -> np.ndarray:
    """Normalized image velocity of a camera-frame point with velocity v_c."""
    v = np.asarray(v_c, dtype=np.float64).reshape(3)
    return projection_velocity_matrix(p_c) @ v


def camera_velocity(v_b_w, omega_b, R_w_b: Rotation, rig: CameraRig) -> np.ndarray:
    """Apparent velocity of static scene points in the camera frame.

    The camera origin moves at v_c^w = v_b^w + R_b^w (omega_b x t_c^b);
    ignoring the camera's rotational flow, static points then appear to
    move at -R_b^c R_w^b v_c^w.
    """
    v = np.asarray(v_b_w, dtype=np.float64).reshape(3)
    w = np.asarray(omega_b, dtype=np.float64).reshape(3)
    r_b_w = R_w_b.inverse()
    v_cam_w = v + r_b_w.apply(np.cross(w, rig.T_c_b.translation))
    r_b_c = rig.T_c_b.rotation.inverse()
    return -r_b_c.apply(R_w_b.apply(v_cam_w))


@dataclass(frozen=True)
class FlowObservation:
    """One feature's contribution to the velocity refinement.

    ``p_source``: normalized coordinate in the source keyframe;
    ``p_c_source``: its metric camera-frame point there (stereo depth);
    ``v_measured``: measured normalized velocity in the target keyframe.
    """

    p_source: np.ndarray
    p_c_source: np.ndarray
    v_measured: np.ndarray
    feature_id: int = -1

    def __post_init__(self):
        for name, size in (("p_source", 2), ("p_c_source", 3), ("v_measured", 2)):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(size).copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class VelocityRefinement:
    velocity: np.ndarray
    iterations: int
    cost: float
    converged: bool

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=np.float64).reshape(3).copy()
        v.setflags(write=False)
        object.__setattr__(self, "velocity", v)


def refine_velocity(
    observations: list[FlowObservation],
    h: Homography,
    R_w_b: Rotation,
    omega_b,
    rig: CameraRig,
    v_init,
    *,
    max_iters: int = 25,
    step_tol: float = 1e-10,
    cost_tol: float = 1e-12,
) -> VelocityRefinement:
    """Gauss-Newton body-velocity fit to measured normalized velocities.

    Residual per feature: measured velocity in the target view minus the
    prediction transferred through ``h`` from the source view.  The chain
    is linear in the body velocity, so the iteration converges in one
    step; the loop shape matches the general solver contract (no damping,
    stop on step norm or relative cost decrease).
    """
    if len(observations) < 3:
        raise InsufficientDataError(
            f"need >= 3 flow observations, got {len(observations)}")
    omega = np.asarray(omega_b, dtype=np.float64).reshape(3)
    v = np.asarray(v_init, dtype=np.float64).reshape(3).copy()

    # constant pieces of the chain
    r_b_c = rig.T_c_b.rotation.inverse()
    c_mat = (r_b_c @ R_w_b).matrix()
    lever_w = R_w_b.inverse().apply(np.cross(omega, rig.T_c_b.translation))
    blocks = []
    measured = []
    for ob in observations:
        a = flow_transfer_matrix(h, ob.p_source)
        j = projection_velocity_matrix(ob.p_c_source)
        blocks.append(a @ j @ c_mat)  # prediction = -block @ (v + lever_w)
        measured.append(ob.v_measured)
    blocks = np.array(blocks)
    measured = np.array(measured)
    jac = blocks.reshape(-1, 3)  # d(residual)/dv = +block
    if np.linalg.matrix_rank(jac, tol=1e-12) < 3:
        raise UnobservableVelocityError("flow Jacobian rank < 3")

    def cost_at(vel: np.ndarray) -> tuple[float, np.ndarray]:
        pred = -np.einsum("nij,j->ni", blocks, vel + lever_w)
        res = measured - pred
        return float(np.sum(res * res)), res.reshape(-1)

    cost, res = cost_at(v)
    iterations = 0
    converged = False
    for _ in range(max_iters):
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
        new_cost, new_res = cost_at(v + step)
        if new_cost > cost:  # no damping: a non-descending step ends the solve
            break
        iterations += 1
        drop = cost - new_cost
        v = v + step
        cost, res = new_cost, new_res
        if drop < cost_tol * max(cost, 1.0):
            converged = True
            break
    return VelocityRefinement(v, iterations, cost, converged)
