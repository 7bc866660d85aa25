"""The initialization pipeline: solution selection, stereo scale recovery,
motion-field velocity refinement, and the window-level orchestration.

Per consecutive keyframe pair (previous ``i``, current ``j``) the pipeline
estimates the homography mapping the *current* view onto the *previous*
one, so the decomposed plane normal lives in the current camera frame
(where the gyro-propagated prior normal is maintained) and the decomposed
translation is the current camera's position in the previous camera
frame.  PnP against stereo points triangulated at the previous keyframe
supplies the metric counterpart of that translation, and their
least-squares ratio is the scale.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import imu as imu_mod
from .config import PipelineConfig
from .errors import (
    DegenerateTranslationError,
    InconsistentDataError,
    InvalidDisparityError,
    NoSolutionError,
    PipelineError,
    PlanarInitError,
)
from .geometry import CameraRig, Pose, Rotation, homogeneous, normalize
from .homography import (
    Correspondence,
    Homography,
    HomographySolution,
    decompose,
    estimate,
    filter_positive_depth,
    indicator,
)
from .imu import NavState, PriorNormal
from .motion_field import FlowObservation, VelocityRefinement, refine_velocity
from .pnp import refine_pose, solve_pnp
from .weighting import stereo_deviation, weight

STATUS_INITIALIZED = "initialized"
STATUS_IMU_ONLY = "imu-only-fallback"
STATUS_PURE_ROTATION = "pure-rotation"


@dataclass(frozen=True)
class StereoObservation:
    """One feature in one stereo keyframe: pixels and normalized coords."""

    uv_l: np.ndarray
    uv_r: np.ndarray
    norm_l: np.ndarray
    norm_r: np.ndarray

    def __post_init__(self):
        for name in ("uv_l", "uv_r", "norm_l", "norm_r"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(2).copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_pixels(cls, rig: CameraRig, uv_l, uv_r) -> "StereoObservation":
        return cls(uv_l, uv_r, normalize(rig, uv_l), normalize(rig, uv_r))


@dataclass(frozen=True)
class Keyframe:
    index: int
    t: float
    observations: dict  # feature_id -> StereoObservation


@dataclass(frozen=True)
class FeatureTrack:
    """One feature's observations across the window keyframes."""

    feature_id: int
    samples: tuple  # of (keyframe position in window, StereoObservation)


@dataclass
class KeyframeWindow:
    keyframes: list
    imu: list
    capacity: int = 10

    def __post_init__(self):
        times = [kf.t for kf in self.keyframes]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("keyframe timestamps must be strictly increasing")

    def shared_features(self, a: int, b: int) -> list[int]:
        ka, kb = self.keyframes[a], self.keyframes[b]
        return sorted(set(ka.observations) & set(kb.observations))

    def track(self, feature_id: int) -> FeatureTrack:
        samples = tuple(
            (pos, kf.observations[feature_id])
            for pos, kf in enumerate(self.keyframes)
            if feature_id in kf.observations
        )
        return FeatureTrack(feature_id, samples)


@dataclass(frozen=True)
class Selection:
    """Outcome of the prior-normal disambiguation."""

    solution: HomographySolution
    margin: float
    distances: tuple


def select_solution(n_prior: PriorNormal, candidates: list[HomographySolution]) -> Selection:
    """Pick the candidate whose plane normal is closest to the prior.

    Ties go to the first candidate.  The margin (absolute distance gap)
    is reported for diagnostics; it is infinite for a single candidate.
    """
    if not candidates:
        raise NoSolutionError("no homography solutions to select from")
    dists = tuple(float(np.linalg.norm(n_prior.n - c.n)) for c in candidates)
    if len(candidates) == 1:
        return Selection(candidates[0], math.inf, dists)
    order = int(np.argmin(dists))
    # argmin returns the first minimum, which realizes the <= convention
    margin = abs(dists[0] - dists[1]) if len(dists) == 2 else math.inf
    return Selection(candidates[order], margin, dists)


@dataclass(frozen=True)
class StereoPoint:
    point: np.ndarray
    disparity_px: float
    reliable: bool

    def __post_init__(self):
        v = np.asarray(self.point, dtype=np.float64).reshape(3).copy()
        v.setflags(write=False)
        object.__setattr__(self, "point", v)


def triangulate_stereo(obs_l, obs_r, rig: CameraRig,
                       min_disparity_px: float = 1.0) -> StereoPoint:
    """Depth from pixel disparity: z = f b / (uL - uR); point in the left frame.

    Disparity <= 0 raises; disparity below ``min_disparity_px`` flags the
    point as unreliable.
    """
    u_l = float(np.asarray(obs_l, dtype=np.float64)[0])
    u_r = float(np.asarray(obs_r, dtype=np.float64)[0])
    disparity = u_l - u_r
    if disparity <= 0.0:
        raise InvalidDisparityError(f"disparity {disparity:.6g} <= 0")
    z = rig.f * rig.baseline / disparity
    p = z * homogeneous(normalize(rig, obs_l))
    return StereoPoint(p, disparity, disparity >= min_disparity_px)


def recover_scale(t_bar, t_hat) -> float:
    """Closed-form least squares for s in s * t_bar = t_hat.

    A non-positive result signals a backwards scale; callers treat it as
    a failure flag.
    """
    tb = np.asarray(t_bar, dtype=np.float64).reshape(3)
    th = np.asarray(t_hat, dtype=np.float64).reshape(3)
    nrm2 = float(tb @ tb)
    if nrm2 <= 1e-12:  # ||t_bar|| <= 1e-6: pure rotation, scale unobservable
        raise DegenerateTranslationError("up-to-scale translation is degenerate")
    return float(tb @ th) / nrm2


def metric_alignment(T_pnp: Pose, T_imu_body: Pose, rig: CameraRig) -> np.ndarray:
    """Metric counterpart of the up-to-scale translation.

    ``T_pnp`` is the PnP camera pose (frames c -> w) at the current
    keyframe; ``T_imu_body`` the body pose (b -> w) at the reference
    keyframe.  Returns the current camera's position expressed in the
    reference camera frame:

        t_hat = (R_b^w R_c^b)^T (t_pnp - t_b^w) - (R_c^b)^T t_c^b
    """
    if T_pnp.of_frame != "c" or T_pnp.in_frame != "w":
        raise PlanarInitError("T_pnp must carry frames (of='c', in='w')")
    if T_imu_body.of_frame != "b" or T_imu_body.in_frame != "w":
        raise PlanarInitError("T_imu_body must carry frames (of='b', in='w')")
    r_cw = (T_imu_body.rotation @ rig.T_c_b.rotation).inverse()
    lever = rig.T_c_b.rotation.inverse().apply(rig.T_c_b.translation)
    return r_cw.apply(T_pnp.translation - T_imu_body.translation) - lever


def measured_flow_observations(
    window: KeyframeWindow,
    rig: CameraRig,
    pair: int = 0,
    feature_ids: list[int] | None = None,
    min_disparity_px: float = 1.0,
) -> list[FlowObservation]:
    """Flow observations for one keyframe pair.

    The measured normalized velocity of each feature is the forward
    difference of its tracked left-camera coordinates over the pair
    interval; the metric source point comes from stereo triangulation at
    the earlier keyframe.
    """
    kf_i, kf_j = window.keyframes[pair], window.keyframes[pair + 1]
    dt = kf_j.t - kf_i.t
    ids = feature_ids if feature_ids is not None else window.shared_features(pair, pair + 1)
    out: list[FlowObservation] = []
    for fid in ids:
        if fid not in kf_i.observations or fid not in kf_j.observations:
            continue
        oi, oj = kf_i.observations[fid], kf_j.observations[fid]
        try:
            sp = triangulate_stereo(oi.uv_l, oi.uv_r, rig, min_disparity_px)
        except InvalidDisparityError:
            continue
        if not sp.reliable:
            continue
        v_meas = (oj.norm_l - oi.norm_l) / dt
        out.append(FlowObservation(oi.norm_l, sp.point, v_meas, fid))
    return out


def refine_body_velocity(
    window: KeyframeWindow,
    h_forward: Homography,
    v_init,
    rig: CameraRig,
    *,
    pair: int = 0,
    R_w_b: Rotation | None = None,
    gyro_bias=(0.0, 0.0, 0.0),
    config: PipelineConfig | None = None,
    feature_ids: list[int] | None = None,
) -> VelocityRefinement:
    """Gauss-Newton body-velocity refinement over one keyframe pair.

    ``h_forward`` maps the earlier keyframe of the pair onto the later
    one (the direction in which feature velocities are transferred).
    """
    cfg = config or PipelineConfig()
    kf_i, kf_j = window.keyframes[pair], window.keyframes[pair + 1]
    obs = measured_flow_observations(window, rig, pair, feature_ids,
                                     cfg.min_disparity_px)
    pair_imu = imu_mod.slice_between(window.imu, kf_i.t, kf_j.t)
    omega = imu_mod.mean_gyro(pair_imu, gyro_bias)
    return refine_velocity(
        obs, h_forward, R_w_b or Rotation.identity(), omega, rig, v_init,
        max_iters=cfg.gn_max_iters, step_tol=cfg.gn_step_tol,
        cost_tol=cfg.gn_cost_tol)


@dataclass
class InitializationResult:
    """Metric per-keyframe states plus diagnostics.

    ``poses`` are body poses in the window's world frame (anchored at the
    IMU-propagated body pose of the first keyframe); ``scale`` is the
    first pair's recovered scale factor.
    """

    status: str
    keyframe_times: list
    poses: list
    velocities: list
    scale: float | None
    selected: HomographySolution | None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status == STATUS_INITIALIZED:
            if self.scale is None or self.scale <= 0.0:
                raise ValueError("initialized result requires scale > 0")

    @property
    def initialized(self) -> bool:
        return self.status == STATUS_INITIALIZED

    def to_json_dict(self) -> dict:
        d = {
            "schema_version": 1,
            "status": self.status,
            "scale": self.scale,
            "keyframes": [
                {
                    "t": t,
                    "q_wxyz": [float(v) for v in pose.rotation.quat],
                    "t_xyz": [float(v) for v in pose.translation],
                    "v_xyz": [float(v) for v in vel],
                }
                for t, pose, vel in zip(self.keyframe_times, self.poses, self.velocities)
            ],
            "diagnostics": self.diagnostics,
        }
        if self.selected is not None:
            d["selected"] = {
                "q_wxyz": [float(v) for v in self.selected.rotation.quat],
                "t_bar": [float(v) for v in self.selected.t_bar],
                "n": [float(v) for v in self.selected.n],
                "normal_indeterminate": self.selected.normal_indeterminate,
            }
        return d


def _imu_only_states(anchor: NavState, window: KeyframeWindow, imu_samples,
                     gravity) -> tuple[list, list, list]:
    """IMU-propagated body pose and velocity at every keyframe time."""
    times, poses, vels = [], [], []
    nav = anchor
    for kf in window.keyframes:
        if kf.t > nav.t + 1e-9:
            nav = imu_mod.propagate(
                nav, imu_mod.slice_between(imu_samples, nav.t, kf.t), gravity)
        times.append(kf.t)
        poses.append(nav.pose)
        vels.append(nav.velocity.copy())
    return times, poses, vels


def run_initialization(
    window: KeyframeWindow,
    imu_samples,
    rig: CameraRig,
    config: PipelineConfig | None = None,
    seed: int = 0,
) -> InitializationResult:
    """Execute the full pipeline on a gathered keyframe window.

    ``imu_samples`` must span from a stationary prefix (where the world
    frame is anchored and the prior normal is [0, 0, 1]) through the last
    keyframe.  Any stage failure raises :class:`PipelineError` naming the
    stage; an inadequate feature count falls back to an IMU-only result.
    """
    cfg = config or PipelineConfig()
    rng = np.random.default_rng(seed)
    t_start = time.perf_counter()
    timings: dict[str, float] = {}

    if len(window.keyframes) < 2:
        raise PipelineError("window", "need at least two keyframes")
    if not imu_samples:
        raise PipelineError("imu", "empty IMU stream")

    gravity = np.asarray(cfg.gravity, dtype=np.float64)
    if not imu_mod.is_stationary(
            imu_samples, float(np.linalg.norm(gravity)),
            cfg.stationary_window_s, cfg.stationary_accel_tol,
            cfg.stationary_gyro_tol):
        raise PipelineError("stationarity", "stream does not start at rest")

    # IMU-only anchor at the first keyframe (the height-gate instant)
    t0 = imu_samples[0].t
    nav = imu_mod.nav_state_at_rest(t0, cfg.gyro_bias, cfg.accel_bias)
    kf0 = window.keyframes[0]
    pre = imu_mod.slice_between(imu_samples, t0, kf0.t)
    anchor = imu_mod.propagate(nav, pre, gravity) if len(pre) >= 2 else nav
    if abs(anchor.t - kf0.t) > 0.5 / max(cfg.imu_rate_hint, 1.0):
        raise PipelineError("imu", "IMU stream does not reach the first keyframe")
    timings["anchor_s"] = time.perf_counter() - t_start

    # feature gate
    counts = [len(kf.observations) for kf in window.keyframes]
    if min(counts) < cfg.min_features:
        times, poses, vels = _imu_only_states(anchor, window, imu_samples, gravity)
        return InitializationResult(
            STATUS_IMU_ONLY, times, poses, vels, None, None,
            {"feature_counts": counts, "min_features": cfg.min_features,
             "timings": timings})

    # prior normal chained from the stationary instant to the first keyframe
    prior = PriorNormal(np.array([0.0, 0.0, 1.0]), t0)
    if len(pre) >= 2:
        r_pre = imu_mod.integrate_camera_rotation(pre, cfg.gyro_bias, rig.T_c_b)
        prior = imu_mod.propagate_normal(prior, r_pre, kf0.t)

    diag: dict = {
        "feature_counts": counts,
        "deviation_mode": cfg.deviation_mode,
        "pairs": [],
        "selection_margins": [],
        "pnp_inlier_counts": [],
        "gn_iterations": [],
        "scales": [],
        "indicator_values": [],
    }

    nav_prev = anchor
    poses: list[Pose] = [anchor.pose]
    velocities: list[np.ndarray] = []
    first_scale: float | None = None
    first_selection: HomographySolution | None = None

    for m in range(len(window.keyframes) - 1):
        kf_i, kf_j = window.keyframes[m], window.keyframes[m + 1]
        pair_imu = imu_mod.slice_between(window.imu, kf_i.t, kf_j.t)
        if len(pair_imu) < 2:
            raise PipelineError("imu", f"no IMU coverage for pair {m}")

        # prior normal into the current camera frame
        r_cam = imu_mod.integrate_camera_rotation(pair_imu, cfg.gyro_bias, rig.T_c_b)
        prior = imu_mod.propagate_normal(prior, r_cam, kf_j.t)

        # homography from the current view onto the previous one
        shared = window.shared_features(m, m + 1)
        corrs = [
            Correspondence(kf_j.observations[f].norm_l, kf_i.observations[f].norm_l, f)
            for f in shared
        ]
        if len(corrs) < 4:
            raise PipelineError("homography", f"only {len(corrs)} correspondences in pair {m}")
        t_stage = time.perf_counter()
        try:
            h_est, inlier_mask = estimate(
                corrs, threshold=cfg.ransac_threshold,
                confidence=cfg.ransac_confidence,
                max_iters=cfg.ransac_max_iters, seed=rng)
        except PlanarInitError as exc:
            raise PipelineError("homography", str(exc)) from exc
        timings[f"homography_{m}_s"] = time.perf_counter() - t_stage
        diag["indicator_values"].extend(indicator(h_est, c) for c in corrs)

        candidates = decompose(h_est)
        if len(candidates) == 1 and candidates[0].normal_indeterminate:
            times, p_imu, v_imu = _imu_only_states(anchor, window, imu_samples, gravity)
            diag["timings"] = timings
            diag["pure_rotation_pair"] = m
            return InitializationResult(
                STATUS_PURE_ROTATION, times, p_imu, v_imu, None, candidates[0], diag)
        inlier_corrs = [c for c, keep in zip(corrs, inlier_mask) if keep]
        try:
            survivors = filter_positive_depth(candidates, inlier_corrs)
        except InconsistentDataError as exc:
            raise PipelineError("cheirality", str(exc)) from exc

        selection = select_solution(prior, survivors)
        sel = selection.solution
        diag["selection_margins"].append(selection.margin)

        # For vertical take-off t is nearly parallel to n; the four-way
        # decomposition then splits one double root into two candidates that
        # straddle the truth by O(sqrt(noise)).  With the gyro rotation in
        # hand, t_bar n^T = H - R is a well-conditioned rank-1 fit, so the
        # pose chain uses that extraction; selection output is unchanged.
        rel_rot = r_cam.inverse() if cfg.attitude_source == "gyro" else sel.rotation
        if cfg.attitude_source == "gyro":
            t_bar = _rank1_translation(h_est, rel_rot, prior)
        else:
            t_bar = sel.t_bar

        # IMU prediction across the pair (velocity prior for the refinement)
        nav_imu = imu_mod.propagate(nav_prev, pair_imu, gravity)

        # stereo points at the previous keyframe, in the window world frame
        cam_prev = nav_prev.pose @ rig.T_c_b
        pnp_pairs = []
        pnp_fids = []
        for c in inlier_corrs:
            obs_prev = kf_i.observations[c.feature_id]
            try:
                sp = triangulate_stereo(obs_prev.uv_l, obs_prev.uv_r, rig,
                                        cfg.min_disparity_px)
            except InvalidDisparityError:
                continue
            if not sp.reliable:
                continue
            pnp_pairs.append((cam_prev.apply(sp.point),
                              kf_j.observations[c.feature_id].norm_l))
            pnp_fids.append(c.feature_id)
        if len(pnp_pairs) < 4:
            raise PipelineError("pnp", f"only {len(pnp_pairs)} usable stereo points in pair {m}")
        t_stage = time.perf_counter()
        try:
            t_pnp, pnp_mask = solve_pnp(
                pnp_pairs, rng, threshold=cfg.pnp_ransac_threshold,
                confidence=cfg.ransac_confidence, max_iters=cfg.pnp_ransac_max_iters)
        except PlanarInitError as exc:
            raise PipelineError("pnp", str(exc)) from exc
        timings[f"pnp_{m}_s"] = time.perf_counter() - t_stage
        diag["pnp_inlier_counts"].append(int(pnp_mask.sum()))

        try:
            t_hat = metric_alignment(t_pnp, nav_prev.pose, rig)
            s = recover_scale(t_bar, t_hat)
        except DegenerateTranslationError as exc:
            times, p_imu, v_imu = _imu_only_states(anchor, window, imu_samples, gravity)
            diag["timings"] = timings
            diag["pure_rotation_pair"] = m
            return InitializationResult(
                STATUS_PURE_ROTATION, times, p_imu, v_imu, None, sel, diag)
        if s <= 0.0:
            raise PipelineError("scale", f"backwards scale {s:.6g} in pair {m}")

        if cfg.deviation_mode == "dynamic":
            t_pnp = _weighted_pnp_refit(
                t_pnp, pnp_pairs, pnp_mask, pnp_fids, kf_j, rig, cfg)
            t_hat = metric_alignment(t_pnp, nav_prev.pose, rig)
            s = recover_scale(t_bar, t_hat)
            if s <= 0.0:
                raise PipelineError("scale", f"backwards scale {s:.6g} in pair {m}")
        diag["scales"].append(s)

        # chain the metric pose: T_cj^w = T_ci^w o (R, s t_bar)
        rel = Pose(rel_rot, s * t_bar, "c", "c")
        cam_curr = cam_prev @ rel
        body_curr = cam_curr @ rig.T_c_b.invert()

        # velocity from the motion field (forward homography = inverse estimate)
        t_stage = time.perf_counter()
        try:
            refinement = refine_body_velocity(
                window, h_est.inverse(), nav_prev.velocity, rig, pair=m,
                R_w_b=nav_prev.pose.rotation.inverse(), gyro_bias=cfg.gyro_bias,
                config=cfg, feature_ids=pnp_fids)
        except PlanarInitError as exc:
            raise PipelineError("velocity", str(exc)) from exc
        timings[f"velocity_{m}_s"] = time.perf_counter() - t_stage
        diag["gn_iterations"].append(refinement.iterations)
        velocities.append(refinement.velocity)

        nav_prev = NavState(kf_j.t, body_curr, refinement.velocity,
                            nav_imu.gyro_bias, nav_imu.accel_bias)
        poses.append(body_curr)
        diag["pairs"].append({
            "pair": m,
            "selection_margin": selection.margin,
            "selection_distances": list(selection.distances),
            "scale": s,
            "t_hat_norm": float(np.linalg.norm(t_hat)),
            "pnp_inliers": int(pnp_mask.sum()),
            "gn_iterations": refinement.iterations,
            "gn_cost": refinement.cost,
            "correspondences": len(corrs),
            "homography_inliers": int(np.sum(inlier_mask)),
        })
        if m == 0:
            first_scale = s
            first_selection = sel

    velocities.append(velocities[-1])  # last keyframe: hold the last refined value
    vals = np.asarray(diag.pop("indicator_values"))
    diag["indicator_percentiles"] = {
        "p50": float(np.percentile(vals, 50)),
        "p95": float(np.percentile(vals, 95)),
        "p100": float(np.max(vals)),
    }
    timings["total_s"] = time.perf_counter() - t_start
    diag["timings"] = timings
    return InitializationResult(
        STATUS_INITIALIZED,
        [kf.t for kf in window.keyframes],
        poses, velocities, first_scale, first_selection, diag)


def _rank1_translation(h_est: Homography, rel_rot: Rotation,
                       prior: PriorNormal) -> np.ndarray:
    """Best rank-1 factor t_bar of (H - R), signed so the normal faces the prior."""
    residual = h_est.matrix - rel_rot.matrix()
    u, s, vt = np.linalg.svd(residual)
    t_bar = s[0] * u[:, 0]
    if float(vt[0] @ prior.n) < 0.0:
        t_bar = -t_bar
    return t_bar


def _weighted_pnp_refit(t_pnp: Pose, pnp_pairs, pnp_mask, pnp_fids, kf_j,
                        rig: CameraRig, cfg: PipelineConfig) -> Pose:
    """Re-refine the PnP pose with dynamic inverse-deviation weights.

    Each inlier's stereo deviation at the current keyframe is computed
    against the depth its world point takes under the current pose
    estimate, so the weight reflects the feature's own measurement
    quality rather than its momentary disparity.
    """
    idx = np.flatnonzero(pnp_mask)
    if len(idx) < 4:
        return t_pnp
    pts = np.array([pnp_pairs[k][0] for k in idx])
    obs = np.array([pnp_pairs[k][1] for k in idx])
    # camera-frame depths under the current PnP pose
    inv = t_pnp.invert()
    weights = np.empty(len(idx))
    for row, k in enumerate(idx):
        fid = pnp_fids[k]
        o = kf_j.observations[fid]
        z_pred = float(inv.apply(pnp_pairs[k][0])[2])
        if z_pred <= 0.0:
            weights[row] = weight_from_sigma(cfg.fixed_deviation_px, cfg)
            continue
        dev = stereo_deviation(o.uv_l, o.uv_r, rig, z_pred, fid, kf_j.index)
        weights[row] = weight(dev, cfg.deviation_floor_px)
    r_wc = t_pnp.rotation.inverse().matrix()
    t_wc = -r_wc @ t_pnp.translation
    r, t, _ = refine_pose(pts, obs, r_wc, t_wc, weights)
    r_cw = r.T
    return Pose(Rotation.from_matrix(r_cw), -r_cw @ t, "c", "w")


def weight_from_sigma(sigma_px: float, cfg: PipelineConfig) -> float:
    s = max(sigma_px, cfg.deviation_floor_px)
    return 1.0 / (s * s)
