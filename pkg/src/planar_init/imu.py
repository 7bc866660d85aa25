"""Discrete-time IMU propagation for the pre-initialization phase.

Midpoint (trapezoidal) integration between consecutive samples; biases
are held constant.  Gravity is a world-frame constant, down-positive in
NED by default.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StreamError
from .geometry import Pose, Rotation

GRAVITY_NED = np.array([0.0, 0.0, 9.81])


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: gyro in rad/s, accel (specific force) in m/s^2, body frame."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        for name in ("gyro", "accel"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3).copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class NavState:
    """Timestamped body pose in world, velocity, and constant biases."""

    t: float
    pose: Pose
    velocity: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray

    def __post_init__(self):
        if self.pose.of_frame != "b" or self.pose.in_frame != "w":
            raise ValueError("NavState pose must carry frames (of='b', in='w')")
        for name in ("velocity", "gyro_bias", "accel_bias"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3).copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def nav_state_at_rest(t: float, gyro_bias=(0.0, 0.0, 0.0),
                      accel_bias=(0.0, 0.0, 0.0)) -> NavState:
    """Stationary, level state anchoring the world frame at the body."""
    return NavState(t, Pose(Rotation.identity(), np.zeros(3), "b", "w"),
                    np.zeros(3),
                    np.asarray(gyro_bias, dtype=np.float64),
                    np.asarray(accel_bias, dtype=np.float64))


@dataclass(frozen=True)
class PriorNormal:
    """Unit plane normal in the current left-camera frame."""

    n: np.ndarray
    t: float

    def __post_init__(self):
        v = np.asarray(self.n, dtype=np.float64).reshape(3).copy()
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > 1e-9:
            v = v / nrm
        v.setflags(write=False)
        object.__setattr__(self, "n", v)


def _check_stream(samples: Sequence[ImuSample]) -> None:
    if len(samples) == 0:
        raise StreamError("empty IMU sample stream")
    for a, b in zip(samples, samples[1:]):
        if b.t <= a.t:
            raise StreamError(f"non-monotonic timestamps at t={b.t}")


def propagate(state: NavState, samples: Sequence[ImuSample], gravity=GRAVITY_NED) -> NavState:
    """Midpoint strapdown propagation through a sample stream.

    The stream must start at ``state.t``.  Rotation integrates the
    bias-corrected mean gyro of each interval; velocity and position use
    the average of the world-rotated specific force at both endpoints
    plus gravity.
    """
    _check_stream(samples)
    if abs(samples[0].t - state.t) > 1e-9:
        raise StreamError(
            f"stream starts at {samples[0].t}, state is at {state.t}")
    g = np.asarray(gravity, dtype=np.float64)
    b_g, b_a = state.gyro_bias, state.accel_bias
    r = state.pose.rotation
    p = state.pose.translation.copy()
    v = state.velocity.copy()
    for s0, s1 in zip(samples, samples[1:]):
        dt = s1.t - s0.t
        omega = 0.5 * (s0.gyro + s1.gyro) - b_g
        r_next = r @ Rotation.from_rotvec(omega * dt)
        a_w = 0.5 * (r.apply(s0.accel - b_a) + r_next.apply(s1.accel - b_a)) + g
        p = p + v * dt + 0.5 * a_w * dt * dt
        v = v + a_w * dt
        r = r_next
    return NavState(samples[-1].t, Pose(r, p, "b", "w"), v, b_g, b_a)


def integrate_camera_rotation(samples: Sequence[ImuSample], gyro_bias,
                              T_c_b: Pose) -> Rotation:
    """Gyro delta-rotation over the span, conjugated into the camera frame.

    Returns R mapping camera coordinates at the first sample time to
    camera coordinates at the last sample time (the i -> j convention
    used to chain the prior plane normal).
    """
    _check_stream(samples)
    if len(samples) < 2:
        raise StreamError("need at least two samples to integrate rotation")
    b_g = np.asarray(gyro_bias, dtype=np.float64)
    gamma = Rotation.identity()  # body increment: R_bk^b(k-1)
    for s0, s1 in zip(samples, samples[1:]):
        dt = s1.t - s0.t
        omega = 0.5 * (s0.gyro + s1.gyro) - b_g
        gamma = gamma @ Rotation.from_rotvec(omega * dt)
    r_cb = T_c_b.rotation
    return r_cb.inverse() @ gamma.inverse() @ r_cb


def propagate_normal(n_prev: PriorNormal, rotation: Rotation,
                     t: float | None = None) -> PriorNormal:
    """Chain the prior plane normal into the next camera frame, renormalized."""
    n = rotation.apply(n_prev.n)
    n = n / np.linalg.norm(n)
    return PriorNormal(n, n_prev.t if t is None else t)


def is_stationary(samples: Sequence[ImuSample], gravity_mag: float = 9.81,
                  window: float = 0.5, accel_tol: float = 0.05,
                  gyro_tol: float = 0.01) -> bool:
    """Stationarity gate for the n_0 = [0, 0, 1] assumption.

    Averages the first ``window`` seconds: mean accel magnitude within
    ``accel_tol * g`` of g and mean gyro magnitude below ``gyro_tol``
    rad/s (means reject sensor white noise, motion does not average out).
    """
    _check_stream(samples)
    t_end = samples[0].t + window
    accels = []
    gyros = []
    for s in samples:
        if s.t > t_end:
            break
        accels.append(s.accel)
        gyros.append(s.gyro)
    if len(accels) < 2:
        return False
    accel_mag = float(np.linalg.norm(np.mean(accels, axis=0)))
    gyro_mag = float(np.linalg.norm(np.mean(gyros, axis=0)))
    return (abs(accel_mag - gravity_mag) <= accel_tol * gravity_mag
            and gyro_mag <= gyro_tol)


def slice_between(samples: Sequence[ImuSample], t0: float, t1: float,
                  tol: float = 1e-9) -> list[ImuSample]:
    """Samples with t in [t0, t1] (inclusive, with tolerance)."""
    return [s for s in samples if t0 - tol <= s.t <= t1 + tol]


def mean_gyro(samples: Sequence[ImuSample], gyro_bias=(0.0, 0.0, 0.0)) -> np.ndarray:
    _check_stream(samples)
    raw = np.mean([s.gyro for s in samples], axis=0)
    return raw - np.asarray(gyro_bias, dtype=np.float64)


IMU_CSV_HEADER = ["t", "gx", "gy", "gz", "ax", "ay", "az"]


def save_imu_csv(path, samples: Sequence[ImuSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IMU_CSV_HEADER)
        for s in samples:
            w.writerow([repr(float(x)) for x in (s.t, *s.gyro, *s.accel)])


def load_imu_csv(path) -> list[ImuSample]:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 7:
        raise StreamError(f"expected 7 columns in IMU csv, got {data.shape[1]}")
    return [ImuSample(float(row[0]), row[1:4], row[4:7]) for row in data]
