import math

import numpy as np
import pytest

from planar_init.errors import StreamError
from planar_init.geometry import Pose, Rotation
from planar_init.imu import (
    ImuSample,
    PriorNormal,
    integrate_camera_rotation,
    is_stationary,
    load_imu_csv,
    mean_gyro,
    nav_state_at_rest,
    propagate,
    propagate_normal,
    save_imu_csv,
    slice_between,
)
from planar_init.simulator import (
    TrajectoryProfile,
    generate_trajectory,
    synthesize_imu,
)


def constant_stream(gyro, accel, duration=1.0, rate=200.0, t0=0.0):
    n = int(round(duration * rate)) + 1
    return [ImuSample(t0 + k / rate, gyro, accel) for k in range(n)]


class TestPropagate:
    def test_hover_equilibrium(self):
        # accel = -gravity (specific force at rest), zero gyro: state unchanged
        state = nav_state_at_rest(0.0)
        samples = constant_stream([0, 0, 0], [0.0, 0.0, -9.81])
        out = propagate(state, samples)
        assert np.linalg.norm(out.pose.translation) < 1e-12
        assert np.linalg.norm(out.velocity) < 1e-12
        assert out.pose.rotation.angle() < 1e-12

    def test_constant_acceleration_kinematics(self):
        # net world accel a for T seconds from rest: dp = a T^2 / 2, dv = a T
        a = np.array([0.3, -0.2, 0.5])
        state = nav_state_at_rest(0.0)
        samples = constant_stream([0, 0, 0], a + [0.0, 0.0, -9.81], duration=2.0)
        out = propagate(state, samples)
        np.testing.assert_allclose(out.velocity, a * 2.0, atol=1e-9)
        np.testing.assert_allclose(out.pose.translation, a * 2.0, atol=1e-9)

    def test_constant_yaw_rate(self):
        # oracle: quaternion exponential, exact for constant rate
        omega = 0.7
        state = nav_state_at_rest(0.0)
        samples = constant_stream([0, 0, omega], [0.0, 0.0, -9.81], duration=3.0)
        out = propagate(state, samples)
        expected = Rotation.about_z(omega * 3.0)
        assert out.pose.rotation.angle_to(expected) < 1e-9

    def test_bias_correction(self):
        bg = np.array([0.01, -0.02, 0.005])
        state = nav_state_at_rest(0.0, gyro_bias=bg)
        samples = constant_stream(bg, [0.0, 0.0, -9.81], duration=2.0)
        out = propagate(state, samples)
        assert out.pose.rotation.angle() < 1e-12

    def test_split_stream_equals_whole(self):
        rng = np.random.default_rng(0)
        samples = [
            ImuSample(k / 200.0, rng.normal(0, 0.3, 3),
                      rng.normal(0, 1.0, 3) + [0, 0, -9.81])
            for k in range(401)
        ]
        state = nav_state_at_rest(0.0)
        whole = propagate(state, samples)
        for cut in (1, 137, 200, 399):
            mid = propagate(state, samples[:cut + 1])
            out = propagate(mid, samples[cut:])
            assert abs(out.t - whole.t) < 1e-12
            np.testing.assert_allclose(out.pose.translation,
                                       whole.pose.translation, atol=1e-10)
            np.testing.assert_allclose(out.velocity, whole.velocity, atol=1e-10)
            assert out.pose.rotation.angle_to(whole.pose.rotation) < 1e-10

    def test_non_monotonic_raises(self):
        s = constant_stream([0, 0, 0], [0, 0, -9.81], duration=0.1)
        bad = [s[0], s[2], s[1]]
        with pytest.raises(StreamError):
            propagate(nav_state_at_rest(0.0), bad)

    def test_misaligned_start_raises(self):
        s = constant_stream([0, 0, 0], [0, 0, -9.81], duration=0.1, t0=1.0)
        with pytest.raises(StreamError):
            propagate(nav_state_at_rest(0.0), s)

    def test_closed_loop_against_simulator(self):
        # fine IMU rate isolates the integrator consistency from the sampling
        # discretization of the smoothstep ramp
        profile = TrajectoryProfile(kind="vertical", imu_rate_hz=2000.0)
        truth = generate_trajectory(profile)
        samples = synthesize_imu(truth)
        out = propagate(nav_state_at_rest(0.0), samples)
        assert -truth.position[-1, 2] > 3.0  # the ascent passes 3 m
        np.testing.assert_allclose(out.pose.translation, truth.position[-1],
                                   atol=1e-6)
        np.testing.assert_allclose(out.velocity, truth.velocity[-1], atol=1e-6)

    def test_closed_loop_at_200hz(self):
        # at the hardware rate the midpoint scheme keeps sub-mm accuracy
        truth = generate_trajectory(TrajectoryProfile(kind="vertical"))
        samples = synthesize_imu(truth)
        out = propagate(nav_state_at_rest(0.0), samples)
        np.testing.assert_allclose(out.pose.translation, truth.position[-1],
                                   atol=2e-4)


class TestCameraRotation:
    def test_zero_gyro_identity(self):
        t_cb = Pose(Rotation.about_x(0.3), np.zeros(3), "c", "b")
        s = constant_stream([0, 0, 0], [0, 0, -9.81], duration=0.5)
        r = integrate_camera_rotation(s, np.zeros(3), t_cb)
        assert r.angle() < 1e-12

    def test_identity_extrinsics_matches_body(self):
        t_cb = Pose(Rotation.identity(), np.zeros(3), "c", "b")
        s = constant_stream([0, 0, 0.5], [0, 0, -9.81], duration=1.0)
        r = integrate_camera_rotation(s, np.zeros(3), t_cb)
        # coordinate map from frame k-1 to frame k is the inverse increment
        assert r.angle_to(Rotation.about_z(-0.5)) < 1e-9

    def test_conjugation(self):
        # oracle: explicit matrix conjugation R_c = R_cb^T Gamma^-1 R_cb
        r_cb = Rotation.about_x(math.pi / 2)
        t_cb = Pose(r_cb, np.zeros(3), "c", "b")
        s = constant_stream([0, 0, 0.8], [0, 0, -9.81], duration=1.0)
        r = integrate_camera_rotation(s, np.zeros(3), t_cb)
        gamma_inv = Rotation.about_z(-0.8).matrix()
        expected = r_cb.matrix().T @ gamma_inv @ r_cb.matrix()
        np.testing.assert_allclose(r.matrix(), expected, atol=1e-9)

    def test_empty_span_raises(self):
        t_cb = Pose(Rotation.identity(), np.zeros(3), "c", "b")
        with pytest.raises(StreamError):
            integrate_camera_rotation([ImuSample(0.0, np.zeros(3), np.zeros(3))],
                                      np.zeros(3), t_cb)


class TestPropagateNormal:
    def test_identity(self):
        n = PriorNormal(np.array([0.0, 0.0, 1.0]), 0.0)
        out = propagate_normal(n, Rotation.identity())
        np.testing.assert_allclose(out.n, n.n)

    def test_axis_rotation(self):
        n = PriorNormal(np.array([0.0, 0.0, 1.0]), 0.0)
        out = propagate_normal(n, Rotation.about_x(math.pi / 2))
        np.testing.assert_allclose(out.n, [0.0, -1.0, 0.0], atol=1e-12)

    def test_unit_norm_over_long_chain(self):
        rng = np.random.default_rng(1)
        n = PriorNormal(np.array([0.0, 0.0, 1.0]), 0.0)
        for _ in range(10_000):
            axis = rng.normal(size=3)
            r = Rotation.from_axis_angle(axis, rng.uniform(0, 0.05))
            n = propagate_normal(n, r)
        assert abs(np.linalg.norm(n.n) - 1.0) < 1e-9

    def test_chained_oblique_take_off(self):
        # simulator oracle: propagate [0,0,1] through the noise-free gyro
        # stream of an oblique take-off and compare with the true plane
        # normal in the camera frame
        from planar_init.geometry import CameraRig
        rig = CameraRig.default()
        profile = TrajectoryProfile(kind="oblique")
        truth = generate_trajectory(profile)
        samples = synthesize_imu(truth)
        n = PriorNormal(np.array([0.0, 0.0, 1.0]), 0.0)
        r = integrate_camera_rotation(samples, np.zeros(3), rig.T_c_b)
        n = propagate_normal(n, r, samples[-1].t)
        n_true, _ = truth.plane_in_camera(len(truth.t) - 1, rig)
        angle = math.degrees(math.acos(np.clip(float(n.n @ n_true), -1, 1)))
        assert angle < 0.5


class TestStationarity:
    def test_at_rest(self):
        s = constant_stream([0, 0, 0], [0, 0, -9.81], duration=1.0)
        assert is_stationary(s)

    def test_rotating_fails(self):
        s = constant_stream([0.2, 0, 0], [0, 0, -9.81], duration=1.0)
        assert not is_stationary(s)

    def test_accelerating_fails(self):
        s = constant_stream([0, 0, 0], [0, 0, -12.0], duration=1.0)
        assert not is_stationary(s)

    def test_noise_tolerated(self):
        truth = generate_trajectory(TrajectoryProfile(kind="vertical"))
        samples = synthesize_imu(
            truth, gyro_noise_density=2e-4, accel_noise_density=2e-3, seed=5)
        assert is_stationary(samples)


class TestStreamUtils:
    def test_slice_between(self):
        s = constant_stream([0, 0, 0], [0, 0, -9.81], duration=1.0)
        part = slice_between(s, 0.25, 0.5)
        assert part[0].t == pytest.approx(0.25)
        assert part[-1].t == pytest.approx(0.5)

    def test_mean_gyro(self):
        s = [ImuSample(0.0, [1.0, 0, 0], [0, 0, -9.81]),
             ImuSample(0.1, [3.0, 0, 0], [0, 0, -9.81])]
        np.testing.assert_allclose(mean_gyro(s, [0.5, 0, 0]), [1.5, 0.0, 0.0])

    def test_csv_wrong_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,gx,gy\n0.0,0.1,0.2\n")
        with pytest.raises(StreamError):
            load_imu_csv(path)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        samples = [ImuSample(k * 0.005, rng.normal(size=3), rng.normal(size=3))
                   for k in range(50)]
        path = tmp_path / "imu.csv"
        save_imu_csv(path, samples)
        back = load_imu_csv(path)
        assert len(back) == 50
        for a, b in zip(samples, back):
            assert a.t == b.t
            np.testing.assert_array_equal(a.gyro, b.gyro)
            np.testing.assert_array_equal(a.accel, b.accel)
