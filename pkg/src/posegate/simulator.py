"""Desk-scale driving scenario simulator.

Generates everything the filtering pipeline consumes: a planar ground-truth
trajectory from a kinematic bicycle model, per-frame integrated IMU samples,
noisy pose measurements with configurable outliers, and projected lead-vehicle
detections with keypoint descriptors.  Logs are deterministic per seed.

The world is planar (z = 0, roll = pitch = 0) with the body frame x forward,
y left, z up.  Frames are sampled every ``frame_spacing_m`` of travel with a
minimum rate when nearly stationary.  Lead vehicles ride the same path as the
ego vehicle, offset in arc length by their (possibly drifting) gap, and are
rendered as a fixed grid of feature points on a vertical rear face projected
through a pinhole camera mounted on the ego body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import constraint as constraint_mod
from . import geometry
from .constraint import VehicleDetection
from .eskf import ImuSample
from .geometry import Pose6DoF

# Piecewise-linear profile: constant value or (time, value) nodes.
Profile = Union[float, Sequence[tuple[float, float]]]

FINE_STEP = 1e-3          # internal integration step [s]
CAMERA_HEIGHT = 1.2       # camera mounting above the road [m]
VEHICLE_WIDTH = 1.8       # rear-face width [m]
VEHICLE_Z_RANGE = (0.3, 1.5)   # rear-face height band above road [m]
VEHICLE_GRID = (4, 3)     # feature points across (width, height)
DESCRIPTOR_DIM = 128
DESCRIPTOR_NOISE = 0.05   # per-frame perturbation of persistent descriptors
MASK_FILL = 0.6           # mask pixel count as a fraction of bbox area
MIN_VISIBLE_POINTS = 4    # fewer projected points than this drops the detection


def eval_profile(profile: Profile, t) -> np.ndarray:
    """Evaluate a constant or piecewise-linear (time, value) profile at t."""
    t = np.asarray(t, dtype=float)
    if np.isscalar(profile) or isinstance(profile, (int, float)):
        return np.full(t.shape, float(profile))
    nodes = np.asarray(profile, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise ValueError("profile nodes must be (time, value) pairs")
    return np.interp(t, nodes[:, 0], nodes[:, 1])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics; optical axis along body x, image y down."""

    fu: float = 800.0
    fv: float = 800.0
    cu: float = 512.0
    cv: float = 384.0
    width: int = 1024
    height: int = 768

    def to_dict(self) -> dict:
        return {"fu": self.fu, "fv": self.fv, "cu": self.cu, "cv": self.cv,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(**d)


@dataclass(frozen=True)
class LeadVehicleSpec:
    """A vehicle ahead on the same path.

    ``relative_speed`` is the rate of change of the arc-length gap (positive
    pulls away); ``lateral_offset`` shifts it left of the path centerline.
    """

    initial_gap: float
    relative_speed: Profile = 0.0
    lateral_offset: float = 0.0


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement, outlier and IMU noise configuration."""

    sigma_pnp_t: float = 0.0       # translation noise per axis [m]
    sigma_pnp_r_deg: float = 0.0   # rotation noise about a random axis [deg]
    outlier_rate: float = 0.0
    outlier_range: tuple[float, float] = (5.0, 20.0)   # planar displacement [m]
    sigma_imu_a: float = 0.0       # accel noise [m/s^2]
    sigma_imu_w: float = 0.0       # gyro noise [rad/s]

    def __post_init__(self):
        if min(self.sigma_pnp_t, self.sigma_pnp_r_deg,
               self.sigma_imu_a, self.sigma_imu_w) < 0.0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier rate must be within [0, 1]")
        if self.outlier_range[0] > self.outlier_range[1]:
            raise ValueError("outlier range must be (lo, hi) with lo <= hi")


_KINDS = ("straight", "curve", "lane-change", "stop-and-go", "mixed")


@dataclass(frozen=True)
class Scenario:
    """Full description of one simulated drive."""

    kind: str
    duration: float
    speed: Profile
    curvature: Profile = 0.0
    leads: tuple[LeadVehicleSpec, ...] = ()
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    frame_spacing_m: float = 1.5
    min_frame_rate_hz: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.frame_spacing_m <= 0.0 or self.min_frame_rate_hz <= 0.0:
            raise ValueError("frame spacing and minimum rate must be positive")
        object.__setattr__(self, "leads", tuple(self.leads))

    def to_dict(self) -> dict:
        def profile_dict(p):
            if np.isscalar(p) or isinstance(p, (int, float)):
                return float(p)
            return [[float(t), float(v)] for t, v in p]

        return {
            "kind": self.kind,
            "duration": self.duration,
            "speed": profile_dict(self.speed),
            "curvature": profile_dict(self.curvature),
            "leads": [{"initial_gap": l.initial_gap,
                       "relative_speed": profile_dict(l.relative_speed),
                       "lateral_offset": l.lateral_offset} for l in self.leads],
            "camera": self.camera.to_dict(),
            "noise": {
                "sigma_pnp_t": self.noise.sigma_pnp_t,
                "sigma_pnp_r_deg": self.noise.sigma_pnp_r_deg,
                "outlier_rate": self.noise.outlier_rate,
                "outlier_range": list(self.noise.outlier_range),
                "sigma_imu_a": self.noise.sigma_imu_a,
                "sigma_imu_w": self.noise.sigma_imu_w,
            },
            "seed": self.seed,
            "frame_spacing_m": self.frame_spacing_m,
            "min_frame_rate_hz": self.min_frame_rate_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        def profile_from(p):
            if isinstance(p, (int, float)):
                return float(p)
            return [(float(t), float(v)) for t, v in p]

        noise = d.get("noise", {})
        return cls(
            kind=d["kind"],
            duration=float(d["duration"]),
            speed=profile_from(d["speed"]),
            curvature=profile_from(d.get("curvature", 0.0)),
            leads=tuple(LeadVehicleSpec(float(l["initial_gap"]),
                                        profile_from(l.get("relative_speed", 0.0)),
                                        float(l.get("lateral_offset", 0.0)))
                        for l in d.get("leads", [])),
            camera=CameraModel.from_dict(d["camera"]) if "camera" in d else CameraModel(),
            noise=NoiseSpec(
                sigma_pnp_t=float(noise.get("sigma_pnp_t", 0.0)),
                sigma_pnp_r_deg=float(noise.get("sigma_pnp_r_deg", 0.0)),
                outlier_rate=float(noise.get("outlier_rate", 0.0)),
                outlier_range=tuple(noise.get("outlier_range", (5.0, 20.0))),
                sigma_imu_a=float(noise.get("sigma_imu_a", 0.0)),
                sigma_imu_w=float(noise.get("sigma_imu_w", 0.0)),
            ),
            seed=int(d.get("seed", 0)),
            frame_spacing_m=float(d.get("frame_spacing_m", 1.5)),
            min_frame_rate_hz=float(d.get("min_frame_rate_hz", 1.0)),
        )


@dataclass(frozen=True)
class FrameRecord:
    """One camera-rate tick of the simulated sensor suite."""

    frame_id: int
    t: float
    imu: ImuSample
    meas: Optional[Pose6DoF]
    detections: tuple[VehicleDetection, ...]
    gt: Optional[Pose6DoF] = None
    gt_v: Optional[np.ndarray] = None
    gt_constrained: Optional[bool] = None


@dataclass(frozen=True)
class _PathTable:
    """Fine-grid planar path: time, position, heading, speed, arc length."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yaw: np.ndarray
    v: np.ndarray
    s: np.ndarray

    def pose_at_arc(self, s_query) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interpolated (x, y, yaw) at the given arc lengths."""
        s_query = np.clip(s_query, self.s[0], self.s[-1])
        return (np.interp(s_query, self.s, self.x),
                np.interp(s_query, self.s, self.y),
                np.interp(s_query, self.s, self.yaw))


def _lead_horizon(sc: Scenario) -> float:
    """Extra integration time so lead vehicles stay on the computed path."""
    if not sc.leads:
        return 0.0
    t_grid = np.arange(0.0, sc.duration + FINE_STEP, FINE_STEP)
    max_gap = 0.0
    for lead in sc.leads:
        rel = eval_profile(lead.relative_speed, t_grid)
        gap = lead.initial_gap + cumulative_trapezoid(rel, t_grid, initial=0.0)
        max_gap = max(max_gap, float(np.max(np.abs(gap))))
    v_end = max(float(eval_profile(sc.speed, sc.duration)), 1.0)
    return max_gap / v_end + 3.0


def _build_path(sc: Scenario) -> _PathTable:
    horizon = sc.duration + _lead_horizon(sc)
    t = np.arange(0.0, horizon + FINE_STEP, FINE_STEP)
    v = np.maximum(eval_profile(sc.speed, t), 0.0)
    kappa = eval_profile(sc.curvature, t)
    yaw = cumulative_trapezoid(v * kappa, t, initial=0.0)
    x = cumulative_trapezoid(v * np.cos(yaw), t, initial=0.0)
    y = cumulative_trapezoid(v * np.sin(yaw), t, initial=0.0)
    s = cumulative_trapezoid(v, t, initial=0.0)
    return _PathTable(t, x, y, yaw, v, s)


def _frame_indices(path: _PathTable, sc: Scenario) -> list[int]:
    """Grid indices of camera frames: every frame_spacing_m, at least min rate."""
    max_dt = 1.0 / sc.min_frame_rate_hz
    indices = [0]
    i = 0
    n = len(path.t)
    while True:
        target_s = path.s[i] + sc.frame_spacing_m
        target_t = path.t[i] + max_dt
        j_s = int(np.searchsorted(path.s, target_s - 1e-12))
        j_t = int(np.searchsorted(path.t, target_t - 1e-12))
        j = max(min(j_s, j_t), i + 1)
        if j >= n or path.t[j] > sc.duration + 1e-12:
            break
        indices.append(j)
        i = j
    return indices


def _pose_at_index(path: _PathTable, i: int) -> tuple[Pose6DoF, np.ndarray]:
    q = geometry.quat_from_rotvec([0.0, 0.0, path.yaw[i]])
    pose = Pose6DoF(np.array([path.x[i], path.y[i], 0.0]), q)
    vel = path.v[i] * np.array([math.cos(path.yaw[i]), math.sin(path.yaw[i]), 0.0])
    return pose, vel


def generate_trajectory(sc: Scenario) -> list[tuple[float, Pose6DoF, np.ndarray]]:
    """Ground-truth (t, pose, velocity) at camera instants."""
    path = _build_path(sc)
    out = []
    for i in _frame_indices(path, sc):
        pose, vel = _pose_at_index(path, i)
        out.append((float(path.t[i]), pose, vel))
    return out


def _rngs(sc: Scenario) -> tuple[np.random.Generator, ...]:
    """Independent measurement / IMU / scene streams derived from the seed."""
    seqs = np.random.SeedSequence(sc.seed).spawn(3)
    return tuple(np.random.default_rng(s) for s in seqs)


def synth_imu(traj, sc: Scenario,
              rng: Optional[np.random.Generator] = None) -> list[ImuSample]:
    """Per-frame integrated IMU: interval-average body rates plus noise.

    Sample k covers the interval from frame k-1 to frame k, expressed in the
    body frame at k-1, so that feeding it to the filter's prediction step
    reproduces the trajectory exactly on constant-acceleration segments.
    Frame 0 gets a zero sample.
    """
    if rng is None:
        rng = _rngs(sc)[1]
    samples = [ImuSample(np.zeros(3), np.zeros(3))]
    for (t0, pose0, v0), (t1, pose1, v1) in zip(traj, traj[1:]):
        dt = t1 - t0
        R0 = geometry.quat_to_rotmat(pose0.q)
        accel = R0.T @ (v1 - v0) / dt
        dq = geometry.quat_multiply(geometry.quat_conjugate(pose0.q), pose1.q)
        rate = geometry.quat_to_rotvec(dq) / dt
        accel = accel + rng.normal(0.0, sc.noise.sigma_imu_a, 3)
        rate = rate + rng.normal(0.0, sc.noise.sigma_imu_w, 3)
        samples.append(ImuSample(accel, rate))
    return samples


def synth_measurements(traj, sc: Scenario,
                       rng: Optional[np.random.Generator] = None) -> list[Pose6DoF]:
    """Ground truth corrupted by Gaussian pose noise and planar outliers."""
    if rng is None:
        rng = _rngs(sc)[0]
    noise = sc.noise
    out = []
    for _, pose, _ in traj:
        p = pose.p + rng.normal(0.0, noise.sigma_pnp_t, 3)
        axis = rng.normal(size=3)
        axis_norm = np.linalg.norm(axis)
        axis = axis / axis_norm if axis_norm > 0 else np.array([0.0, 0.0, 1.0])
        angle = math.radians(rng.normal(0.0, noise.sigma_pnp_r_deg))
        q = geometry.quat_multiply(geometry.quat_from_rotvec(axis * angle), pose.q)
        if rng.random() < noise.outlier_rate:
            magnitude = rng.uniform(*noise.outlier_range)
            heading = rng.uniform(0.0, 2.0 * math.pi)
            p = p + magnitude * np.array([math.cos(heading), math.sin(heading), 0.0])
        out.append(Pose6DoF(p, q))
    return out


def _vehicle_grid_points() -> np.ndarray:
    """Feature points on the rear face, in the lead vehicle's body frame."""
    ny, nz = VEHICLE_GRID
    ys = np.linspace(-VEHICLE_WIDTH / 2.0, VEHICLE_WIDTH / 2.0, ny)
    zs = np.linspace(VEHICLE_Z_RANGE[0], VEHICLE_Z_RANGE[1], nz)
    return np.array([[0.0, y, z] for z in zs for y in ys])


def _project_leads(traj, sc: Scenario, path: Optional[_PathTable] = None):
    """Noiseless projected keypoints per frame per lead.

    Returns a list over frames of dicts {lead_index: (visible_grid_indices,
    keypoints (n, 2))} for leads with at least MIN_VISIBLE_POINTS in view.
    """
    if path is None:
        path = _build_path(sc)
    cam = sc.camera
    grid = _vehicle_grid_points()
    t_frames = np.array([t for t, _, _ in traj])
    s_frames = np.interp(t_frames, path.t, path.s)

    # Arc-length gap of each lead at every frame (relative speed integrated).
    gaps = []
    for lead in sc.leads:
        rel = eval_profile(lead.relative_speed, path.t)
        gap_fine = lead.initial_gap + cumulative_trapezoid(rel, path.t, initial=0.0)
        gaps.append(np.interp(t_frames, path.t, gap_fine))

    per_frame = []
    for k, (t, pose, _) in enumerate(traj):
        R_ego = geometry.quat_to_rotmat(pose.q)
        visible: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for li, lead in enumerate(sc.leads):
            lx, ly, lyaw = path.pose_at_arc(s_frames[k] + gaps[li][k])
            left = np.array([-math.sin(lyaw), math.cos(lyaw), 0.0])
            center = np.array([lx, ly, 0.0]) + lead.lateral_offset * left
            R_lead = geometry.quat_to_rotmat(
                geometry.quat_from_rotvec([0.0, 0.0, float(lyaw)]))
            world = center + grid @ R_lead.T
            body = (world - pose.p) @ R_ego
            z_c = body[:, 0]
            u = cam.cu - cam.fu * body[:, 1] / z_c
            v = cam.cv - cam.fv * (body[:, 2] - CAMERA_HEIGHT) / z_c
            ok = (z_c > 0.5) & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
            if np.count_nonzero(ok) >= MIN_VISIBLE_POINTS:
                idx = np.flatnonzero(ok)
                visible[li] = (idx, np.column_stack([u[idx], v[idx]]))
        per_frame.append(visible)
    return per_frame


def _bbox_of(points: np.ndarray) -> tuple[float, float, float, float]:
    return (float(points[:, 0].min()), float(points[:, 1].min()),
            float(points[:, 0].max()), float(points[:, 1].max()))


def synth_scene(traj, sc: Scenario, rng: Optional[np.random.Generator] = None,
                _path: Optional[_PathTable] = None) -> list[list[VehicleDetection]]:
    """Per-frame detections of the configured lead vehicles.

    Each lead carries a persistent random unit descriptor per grid point; every
    frame re-draws it with a small perturbation and renormalizes, so identity
    is recoverable but not trivial.
    """
    if rng is None:
        rng = _rngs(sc)[2]
    n_points = len(_vehicle_grid_points())
    base = rng.normal(size=(len(sc.leads), n_points, DESCRIPTOR_DIM))
    base /= np.linalg.norm(base, axis=2, keepdims=True)

    detections: list[list[VehicleDetection]] = []
    for visible in _project_leads(traj, sc, _path):
        frame_dets = []
        for li in sorted(visible):
            idx, kp = visible[li]
            noisy = base[li, idx] + rng.normal(0.0, DESCRIPTOR_NOISE,
                                               (len(idx), DESCRIPTOR_DIM))
            bbox = _bbox_of(kp)
            area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1])
            if area <= 0.0:
                continue
            frame_dets.append(VehicleDetection.create(
                det_id=len(frame_dets), bbox=bbox,
                mask_area=int(round(area * MASK_FILL)),
                keypoints=kp, descriptors=noisy))
        detections.append(frame_dets)
    return detections


def constraint_truth(traj, sc: Scenario,
                     _path: Optional[_PathTable] = None) -> list[bool]:
    """Ground-truth lock-on label per frame.

    A frame is truly constrained when some lead, visible in it and the
    previous frame, moves less than the bounding-box-scaled lock-on threshold
    in the image plane under perfect (identity) keypoint correspondence.
    """
    per_frame = _project_leads(traj, sc, _path)
    labels = [False]
    for prev, curr in zip(per_frame, per_frame[1:]):
        locked = False
        for li, (idx_c, kp_c) in curr.items():
            if li not in prev:
                continue
            idx_p, kp_p = prev[li]
            common, pi, ci = np.intersect1d(idx_p, idx_c, return_indices=True)
            if len(common) == 0:
                continue
            shift = float(np.mean(np.linalg.norm(kp_p[pi] - kp_c[ci], axis=1)))
            bbox = _bbox_of(kp_c)
            area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1])
            if area > 0.0 and shift < constraint_mod.tau(area):
                locked = True
                break
        labels.append(locked)
    return labels


def build_frames(sc: Scenario) -> list[FrameRecord]:
    """Assemble the full per-frame log for a scenario (deterministic per seed)."""
    rng_meas, rng_imu, rng_scene = _rngs(sc)
    path = _build_path(sc)
    traj = generate_trajectory(sc)
    imu = synth_imu(traj, sc, rng_imu)
    meas = synth_measurements(traj, sc, rng_meas)
    dets = synth_scene(traj, sc, rng_scene, _path=path)
    truth = constraint_truth(traj, sc, _path=path)
    frames = []
    for k, (t, pose, vel) in enumerate(traj):
        frames.append(FrameRecord(
            frame_id=k, t=t, imu=imu[k], meas=meas[k],
            detections=tuple(dets[k]), gt=pose, gt_v=vel,
            gt_constrained=truth[k]))
    return frames


# ---------------------------------------------------------------------------
# Preset scenarios
# ---------------------------------------------------------------------------

def _sinusoid_profile(amplitude: float, period: float, start: float,
                      end: float, step: float = 0.25) -> list[tuple[float, float]]:
    nodes = [(0.0, 0.0), (max(start - step, 0.0), 0.0)]
    for t in np.arange(start, end + step, step):
        nodes.append((float(t), amplitude * math.sin(2.0 * math.pi * (t - start) / period)))
    return nodes


def _default_noise() -> NoiseSpec:
    return NoiseSpec(sigma_pnp_t=0.15, sigma_pnp_r_deg=0.5,
                     outlier_rate=0.10, outlier_range=(5.0, 20.0),
                     sigma_imu_a=0.05, sigma_imu_w=0.005)


def _preset_highway(seed: int) -> Scenario:
    return Scenario(kind="straight", duration=12.0, speed=15.0, curvature=0.0,
                    leads=(LeadVehicleSpec(initial_gap=20.0),),
                    noise=_default_noise(), seed=seed)


def _preset_campus_curves(seed: int) -> Scenario:
    # Curvature keeps oscillating past the nominal duration so the lead
    # vehicle ahead of the ego never runs onto a straight extension.
    curvature = _sinusoid_profile(amplitude=0.02, period=4.0, start=0.0, end=32.0)
    return Scenario(kind="curve", duration=24.0, speed=10.0, curvature=curvature,
                    leads=(LeadVehicleSpec(initial_gap=20.0),),
                    noise=_default_noise(), seed=seed)


def _preset_mixed(seed: int) -> Scenario:
    # Straight, lock-on-friendly first half; curvy second half.
    curvature = _sinusoid_profile(amplitude=0.015, period=5.0, start=16.0, end=40.0)
    speed = [(0.0, 12.0), (12.0, 12.0), (15.0, 15.0), (34.0, 15.0)]
    noise = NoiseSpec(sigma_pnp_t=0.25, sigma_pnp_r_deg=0.5,
                      outlier_rate=0.10, outlier_range=(5.0, 20.0),
                      sigma_imu_a=0.05, sigma_imu_w=0.005)
    return Scenario(kind="mixed", duration=34.0, speed=speed, curvature=curvature,
                    leads=(LeadVehicleSpec(initial_gap=18.0),),
                    noise=noise, seed=seed)


def _preset_stop_and_go(seed: int) -> Scenario:
    speed = [(0.0, 8.0), (5.0, 8.0), (7.0, 0.0), (10.0, 0.0), (12.0, 8.0), (20.0, 8.0)]
    return Scenario(kind="stop-and-go", duration=20.0, speed=speed, curvature=0.0,
                    leads=(), noise=_default_noise(), seed=seed)


def _preset_no_vehicles(seed: int) -> Scenario:
    return Scenario(kind="straight", duration=12.0, speed=15.0, curvature=0.0,
                    leads=(), noise=_default_noise(), seed=seed)


PRESETS = {
    "highway": _preset_highway,
    "campus-curves": _preset_campus_curves,
    "mixed": _preset_mixed,
    "stop-and-go": _preset_stop_and_go,
    "no-vehicles": _preset_no_vehicles,
}


def preset_scenario(name: str, seed: int = 0) -> Scenario:
    """Build a named preset scenario with the given seed."""
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choices: {sorted(PRESETS)}") from None
