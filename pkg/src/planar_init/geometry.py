"""Rotations, labeled poses, and the pinhole stereo rig.

Conventions
-----------
- Rotations are stored as unit quaternions (wxyz) and renormalized after
  every composition; matrices appear only at API boundaries.
- A :class:`Pose` carries frame labels: ``T`` with ``of_frame="c"`` and
  ``in_frame="b"`` maps camera coordinates into body coordinates,
  ``x_b = R x_c + t``.  Composition checks that labels chain.
- Euler angles are reported in ZYX (yaw-pitch-roll) order for a
  north-east-down world frame, radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BehindCameraError, FrameMismatchError

_EPS = 1e-15


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {a.shape}")
    return a


class Rotation:
    """Unit-quaternion rotation (wxyz storage, Hamilton convention)."""

    __slots__ = ("_q",)

    def __init__(self, quat_wxyz):
        q = np.array(quat_wxyz, dtype=np.float64).reshape(4)
        n = math.sqrt(float(q @ q))
        if n < _EPS:
            raise ValueError("zero-norm quaternion")
        q /= n
        if q[0] < 0.0:  # canonical sign, keeps equality checks simple
            q = -q
        q.setflags(write=False)
        self._q = q

    # -- constructors -------------------------------------------------

    @classmethod
    def identity(cls) -> "Rotation":
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        a = _as_vec3(axis)
        n = np.linalg.norm(a)
        if n < _EPS:
            raise ValueError("zero rotation axis")
        half = 0.5 * float(angle)
        return cls(np.concatenate(([math.cos(half)], math.sin(half) * a / n)))

    @classmethod
    def from_rotvec(cls, rotvec) -> "Rotation":
        """Exponential map; safe for small angles."""
        r = _as_vec3(rotvec)
        angle = float(np.linalg.norm(r))
        if angle < 1e-12:
            # second-order expansion of cos/sinc around zero
            return cls(np.concatenate(([1.0 - angle * angle / 8.0], 0.5 * r)))
        return cls.from_axis_angle(r, angle)

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        """Shepperd's method: branch on the largest diagonal term."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > max(m[0, 0], m[1, 1], m[2, 2]):
            s = math.sqrt(tr + 1.0) * 2.0
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                 (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
                 (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                 (m[1, 2] + m[2, 1]) / s)
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                 (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls(q)

    @classmethod
    def about_x(cls, angle: float) -> "Rotation":
        return cls.from_axis_angle((1.0, 0.0, 0.0), angle)

    @classmethod
    def about_y(cls, angle: float) -> "Rotation":
        return cls.from_axis_angle((0.0, 1.0, 0.0), angle)

    @classmethod
    def about_z(cls, angle: float) -> "Rotation":
        return cls.from_axis_angle((0.0, 0.0, 1.0), angle)

    # -- accessors ----------------------------------------------------

    @property
    def quat(self) -> np.ndarray:
        """Quaternion as wxyz, read-only."""
        return self._q

    def matrix(self) -> np.ndarray:
        w, x, y, z = self._q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    # -- algebra ------------------------------------------------------

    def compose(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        return Rotation((
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation((w, -x, -y, -z))

    def apply(self, v) -> np.ndarray:
        """Rotate one 3-vector or an (N, 3) batch."""
        a = np.asarray(v, dtype=np.float64)
        m = self.matrix()
        if a.ndim == 1:
            return m @ a
        return a @ m.T

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        return 2.0 * math.acos(min(1.0, abs(float(self._q[0]))))

    def angle_to(self, other: "Rotation") -> float:
        return (self.inverse() @ other).angle()

    def __repr__(self) -> str:
        w, x, y, z = self._q
        return f"Rotation(wxyz=[{w:.6g}, {x:.6g}, {y:.6g}, {z:.6g}])"


@dataclass(frozen=True)
class Pose:
    """Rigid transform with frame labels: x_in = R x_of + t."""

    rotation: Rotation
    translation: np.ndarray
    of_frame: str
    in_frame: str

    def __post_init__(self):
        t = _as_vec3(self.translation).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, frame: str = "w") -> "Pose":
        return cls(Rotation.identity(), np.zeros(3), frame, frame)

    def compose(self, other: "Pose") -> "Pose":
        if other.in_frame != self.of_frame:
            raise FrameMismatchError(
                f"cannot compose T[{self.of_frame}->{self.in_frame}] with "
                f"T[{other.of_frame}->{other.in_frame}]"
            )
        return Pose(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
            other.of_frame,
            self.in_frame,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def invert(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation), self.in_frame, self.of_frame)

    def apply(self, p) -> np.ndarray:
        return self.rotation.apply(p) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation
        return m


def compose(a: Pose, b: Pose) -> Pose:
    """Standard SE(3) composition with frame-label checking."""
    return a.compose(b)


def invert(a: Pose) -> Pose:
    return a.invert()


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> Rotation:
    """ZYX composition: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return Rotation.about_z(yaw) @ Rotation.about_y(pitch) @ Rotation.about_x(roll)


def to_euler_ned(rotation: Rotation) -> EulerAngles:
    """ZYX (yaw-pitch-roll) Euler angles in NED, radians.

    At gimbal lock (|pitch| = pi/2) yaw is set to 0 by convention and the
    result is flagged.
    """
    m = rotation.matrix()
    s = -m[2, 0]
    if abs(s) >= 1.0 - 1e-12:
        pitch = math.copysign(math.pi / 2.0, s)
        if s > 0.0:
            roll = math.atan2(m[0, 1], m[0, 2])
        else:
            roll = math.atan2(-m[0, 1], -m[0, 2])
        return EulerAngles(roll, pitch, 0.0, True)
    pitch = math.asin(max(-1.0, min(1.0, s)))
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return EulerAngles(roll, pitch, yaw, False)


@dataclass(frozen=True)
class CameraRig:
    """Stereo rig: pinhole intrinsics, baseline, left-camera-to-body extrinsics.

    ``f`` in pixels, ``baseline`` in meters.  ``T_c_b`` maps left-camera
    coordinates into body coordinates.  The right camera sits at
    ``[+baseline, 0, 0]`` in the left camera frame.
    """

    f: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int
    T_c_b: Pose

    def __post_init__(self):
        if self.f <= 0.0:
            raise ValueError("focal length must be positive")
        if self.baseline <= 0.0:
            raise ValueError("baseline must be positive")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise ValueError("principal point outside image bounds")
        if self.T_c_b.of_frame != "c" or self.T_c_b.in_frame != "b":
            raise ValueError("T_c_b must carry frames (of='c', in='b')")

    @classmethod
    def default(cls) -> "CameraRig":
        """1280x800 rig with a small forward/down camera offset."""
        return cls(
            f=640.0, cx=640.0, cy=400.0, baseline=0.2, width=1280, height=800,
            T_c_b=Pose(Rotation.identity(), np.array([0.10, 0.0, 0.03]), "c", "b"),
        )

    def to_json_dict(self) -> dict:
        return {
            "f": self.f, "cx": self.cx, "cy": self.cy,
            "baseline": self.baseline,
            "width": self.width, "height": self.height,
            "T_cb": {
                "q_wxyz": [float(v) for v in self.T_c_b.rotation.quat],
                "t_xyz": [float(v) for v in self.T_c_b.translation],
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraRig":
        t = d["T_cb"]
        return cls(
            f=float(d["f"]), cx=float(d["cx"]), cy=float(d["cy"]),
            baseline=float(d["baseline"]),
            width=int(d["width"]), height=int(d["height"]),
            T_c_b=Pose(Rotation(t["q_wxyz"]), np.asarray(t["t_xyz"], dtype=np.float64),
                       "c", "b"),
        )


def save_rig(path, rig: CameraRig) -> None:
    Path(path).write_text(json.dumps(rig.to_json_dict(), indent=2))


def load_rig(path) -> CameraRig:
    return CameraRig.from_json_dict(json.loads(Path(path).read_text()))


def project(rig: CameraRig, p_c) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixels."""
    p = _as_vec3(p_c)
    if p[2] <= 0.0:
        raise BehindCameraError(f"point depth {p[2]:.6g} <= 0")
    return np.array([rig.f * p[0] / p[2] + rig.cx, rig.f * p[1] / p[2] + rig.cy])


def normalize(rig: CameraRig, pixel) -> np.ndarray:
    """Pixel to normalized image coordinates [(u-cx)/f, (v-cy)/f]."""
    uv = np.asarray(pixel, dtype=np.float64)
    return np.array([(uv[0] - rig.cx) / rig.f, (uv[1] - rig.cy) / rig.f])


def homogeneous(xy) -> np.ndarray:
    """Append 1 to a normalized 2-vector."""
    a = np.asarray(xy, dtype=np.float64)
    return np.array([a[0], a[1], 1.0])
