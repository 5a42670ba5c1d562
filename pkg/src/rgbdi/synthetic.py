"""Analytic scenes, C2 camera trajectories and a ground-truthed RGB-D + IMU generator.

Scenes are textured planes (bounded rectangles), oriented boxes and spheres.
Depth is obtained by exact ray casting; intensity by sampling a smooth solid
texture (a sum of sinusoids of the world point) on the first surface hit.
IMU readings are the analytic angular velocity and specific force of the
trajectory, so a noise-free sequence can be integrated back to the ground truth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import yaml
from scipy.interpolate import CubicSpline

from .frames import Frame, ImuSample, SequenceConfig, write_imu, write_trajectory
from .geometry import CameraIntrinsics, Pose, quaternion_to_rotation

log = logging.getLogger(__name__)

FAST_ANGULAR_RATE = 1.0  # rad/s
FAST_LINEAR_RATE = 1.0  # m/s


class NonDifferentiableTrajectory(ValueError):
    pass


# --------------------------------------------------------------------------
# texture and primitives


@dataclass
class SolidTexture:
    """``mean + sum_j amp_j sin(k_j . X + phase_j)``, clipped to [0, 255].

    With ``gain > 0`` the sum ``s`` is passed through ``A tanh(gain s / A)``
    (``A`` the headroom around the mean), which sharpens level lines into
    blob-like edges and corners while staying smooth.
    """

    mean: float = 128.0
    wavevectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gain: float = 0.0

    @classmethod
    def random(cls, seed: int, components: int = 8, wavelength=(0.08, 0.25), contrast: float = 110.0, mean=128.0,
               gain: float = 0.0):
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(components, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        lam = rng.uniform(*wavelength, size=components)
        k = dirs * (2 * np.pi / lam)[:, None]
        amps = rng.uniform(0.5, 1.0, size=components)
        amps *= contrast / amps.sum()
        return cls(mean, k, amps, rng.uniform(0, 2 * np.pi, size=components), gain)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        val = np.zeros(points.shape[:-1], dtype=float)
        for k, a, ph in zip(self.wavevectors, self.amplitudes, self.phases):
            val += a * np.sin(points @ k + ph)
        if self.gain > 0:
            A = max(1.0, min(self.mean, 255.0 - self.mean))
            val = A * np.tanh(self.gain * val / A)
        return np.clip(self.mean + val, 0.0, 255.0)


@dataclass
class Plane:
    """Rectangle centred at ``center`` spanned by unit ``axis_u``/``axis_v``."""

    center: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_u: float
    half_v: float
    texture: SolidTexture

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.axis_u = np.asarray(self.axis_u, float) / np.linalg.norm(self.axis_u)
        self.axis_v = np.asarray(self.axis_v, float)
        self.axis_v = self.axis_v - (self.axis_v @ self.axis_u) * self.axis_u
        self.axis_v /= np.linalg.norm(self.axis_v)
        self.normal = np.cross(self.axis_u, self.axis_v)

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((self.center - origin) @ self.normal) / denom
        X = origin + s[:, None] * dirs
        rel = X - self.center
        inside = (np.abs(rel @ self.axis_u) <= self.half_u) & (np.abs(rel @ self.axis_v) <= self.half_v)
        ok = inside & (np.abs(denom) > 1e-12) & (s > 0)
        return np.where(ok, s, np.inf)


@dataclass
class Box:
    center: np.ndarray
    half_sizes: np.ndarray
    texture: SolidTexture
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.half_sizes = np.asarray(self.half_sizes, float)
        self.rotation = np.asarray(self.rotation, float)

    def intersect(self, origin, dirs):
        o = (origin - self.center) @ self.rotation
        d = dirs @ self.rotation
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half_sizes - o) * inv
            t2 = (self.half_sizes - o) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmax > 0)
        s = np.where(tmin > 0, tmin, tmax)
        return np.where(hit, s, np.inf)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    texture: SolidTexture

    def __post_init__(self):
        self.center = np.asarray(self.center, float)

    def intersect(self, origin, dirs):
        oc = origin - self.center
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        s1 = (-b - sq) / (2 * a)
        s2 = (-b + sq) / (2 * a)
        s = np.where(s1 > 0, s1, s2)
        return np.where((disc >= 0) & (s > 0), s, np.inf)


@dataclass
class Scene:
    primitives: list
    background: float = 0.0


def render(scene: Scene, pose: Pose, intrinsics: CameraIntrinsics, offset=(0.0, 0.0), shade: bool = True):
    """Exact (intensity, depth) images; depth is z in the camera frame, 0 where nothing is hit.

    ``offset`` shifts every sample ray by a sub-pixel amount (for supersampling).
    With ``shade`` false the intensity image is left at the background level.
    """
    K = intrinsics
    u, v = np.meshgrid(np.arange(K.width, dtype=float) + offset[0], np.arange(K.height, dtype=float) + offset[1])
    d_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs = d_cam @ pose.rotation.T
    origin = pose.translation
    best = np.full(len(dirs), np.inf)
    owner = np.full(len(dirs), -1)
    for i, prim in enumerate(scene.primitives):
        s = prim.intersect(origin, dirs)
        closer = s < best
        best[closer] = s[closer]
        owner[closer] = i
    intensity = np.full(len(dirs), float(scene.background))
    for i, prim in enumerate(scene.primitives if shade else ()):
        m = owner == i
        if np.any(m):
            intensity[m] = prim.texture(origin + best[m, None] * dirs[m])
    depth = np.where(np.isfinite(best), best, 0.0)
    return intensity.reshape(K.height, K.width), depth.reshape(K.height, K.width)


# --------------------------------------------------------------------------
# trajectories


class HarmonicChannel:
    """``offset + rate * t + sum_j amp_j sin(2 pi freq_j t + phase_j)``."""

    def __init__(self, offset=0.0, rate=0.0, terms=()):
        self.offset = float(offset)
        self.rate = float(rate)
        self.terms = [tuple(map(float, term)) for term in terms]

    def __call__(self, t, order=0):
        t = np.asarray(t, dtype=float)
        if order == 0:
            out = self.offset + self.rate * t
        elif order == 1:
            out = self.rate + 0.0 * t
        else:
            out = 0.0 * t
        for amp, freq, phase in self.terms:
            w = 2 * np.pi * freq
            arg = w * t + phase
            # d^n/dt^n sin(arg) = w^n sin(arg + n pi/2)
            out = out + amp * w**order * np.sin(arg + order * np.pi / 2)
        return out


class SplineChannel:
    def __init__(self, times, values):
        self.spline = CubicSpline(times, values, bc_type="not-a-knot")

    def __call__(self, t, order=0):
        return self.spline(t, order)


class Trajectory:
    """Camera-to-world pose ``R0 @ Rz(a) Ry(b) Rx(c)``, position ``p(t)``.

    Each of the six channels (x, y, z, a, b, c) is a C2 scalar function with
    analytic first and second derivatives, so angular velocity, angular
    acceleration and linear acceleration are exact.
    """

    def __init__(self, position: Sequence, angles: Sequence, base_rotation=None):
        if len(position) != 3 or len(angles) != 3:
            raise ValueError("need three position and three angle channels")
        self.position = list(position)
        self.angles = list(angles)
        self.R0 = np.eye(3) if base_rotation is None else np.asarray(base_rotation, float)

    def _ang(self, t, order):
        return [np.asarray(ch(t, order), dtype=float) for ch in self.angles]

    def _rotation(self, t):
        a, b, c = self._ang(t, 0)
        ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
        # Rz(a) Ry(b) Rx(c), written out so that t may be an array
        R = np.stack([
            np.stack([ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc], -1),
            np.stack([sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc], -1),
            np.stack([-sb, cb * sc, cb * cc], -1),
        ], -2)
        return self.R0 @ R

    def pose(self, t) -> Pose:
        return Pose(self._rotation(float(t)), [float(ch(t, 0)) for ch in self.position])

    def velocity(self, t):
        return np.stack([np.asarray(ch(t, 1), dtype=float) for ch in self.position], -1)

    def acceleration(self, t):
        return np.stack([np.asarray(ch(t, 2), dtype=float) for ch in self.position], -1)

    def angular_velocity(self, t):
        """Body-frame angular velocity; ``t`` may be a scalar or an array."""
        a, b, c = self._ang(t, 0)
        da, db, dc = self._ang(t, 1)
        sb, cb, sc, cc = np.sin(b), np.cos(b), np.sin(c), np.cos(c)
        return np.stack([dc - sb * da, cc * db + sc * cb * da, -sc * db + cc * cb * da], -1)

    def angular_acceleration(self, t):
        a, b, c = self._ang(t, 0)
        da, db, dc = self._ang(t, 1)
        dda, ddb, ddc = self._ang(t, 2)
        sb, cb, sc, cc = np.sin(b), np.cos(b), np.sin(c), np.cos(c)
        return np.stack([
            ddc - sb * dda - cb * db * da,
            cc * ddb - sc * dc * db + sc * cb * dda + cc * dc * cb * da - sc * sb * db * da,
            -sc * ddb - cc * dc * db + cc * cb * dda - sc * dc * cb * da - cc * sb * db * da,
        ], -1)

    def imu(self, t, extrinsic: Pose, gravity):
        """Ideal (accel, gyro) of an IMU with ``X_cam = Phi @ X_imu``; ``t`` may be an array."""
        R = self._rotation(t)
        w = self.angular_velocity(t)
        dw = self.angular_acceleration(t)
        Phi_R, Phi_t = extrinsic.rotation, extrinsic.translation
        lever = np.cross(dw, Phi_t) + np.cross(w, np.cross(w, Phi_t))
        a_imu = self.acceleration(t) + (R @ lever[..., None])[..., 0]
        R_wi = R @ Phi_R
        accel = (np.swapaxes(R_wi, -1, -2) @ (a_imu - np.asarray(gravity, float))[..., None])[..., 0]
        gyro = w @ Phi_R
        return accel, gyro

    def imu_velocity(self, t, extrinsic: Pose):
        """World velocity of the IMU origin."""
        lever = np.cross(self.angular_velocity(t), extrinsic.translation)
        return self.velocity(t) + (self._rotation(t) @ lever[..., None])[..., 0]


def _channel_from_dict(d):
    if isinstance(d, (int, float)):
        return HarmonicChannel(offset=d)
    d = dict(d)
    kind = d.pop("kind", "harmonic")
    if kind == "harmonic":
        return HarmonicChannel(d.get("offset", 0.0), d.get("rate", 0.0), d.get("terms", ()))
    if kind == "spline":
        times = np.asarray(d["times"], float)
        values = np.asarray(d["values"], float)
        if len(times) < 2 or len(times) != len(values) or np.any(np.diff(times) <= 0):
            raise NonDifferentiableTrajectory("spline keyframes need strictly increasing times")
        return SplineChannel(times, values)
    raise NonDifferentiableTrajectory(f"channel kind {kind!r} is not twice differentiable")


def trajectory_from_dict(d: dict) -> Trajectory:
    """Build a trajectory from ``{position: [ch]*3, angles: [ch]*3, base_rotation_xyzw}``."""
    pos = [_channel_from_dict(c) for c in d["position"]]
    ang = [_channel_from_dict(c) for c in d.get("angles", [0.0, 0.0, 0.0])]
    R0 = None
    if "base_rotation_xyzw" in d:
        R0 = quaternion_to_rotation(d["base_rotation_xyzw"])
    return Trajectory(pos, ang, R0)


def _texture_from_dict(d, default_seed):
    d = dict(d or {})
    return SolidTexture.random(
        d.get("seed", default_seed),
        components=d.get("components", 8),
        wavelength=tuple(d.get("wavelength", (0.08, 0.25))),
        contrast=d.get("contrast", 110.0),
        mean=d.get("mean", 128.0),
        gain=d.get("gain", 0.0),
    )


def scene_from_dict(d: dict) -> Scene:
    prims = []
    for i, p in enumerate(d["primitives"]):
        tex = _texture_from_dict(p.get("texture"), default_seed=1000 + i)
        kind = p["type"]
        if kind == "plane":
            prims.append(Plane(p["center"], p["axis_u"], p["axis_v"], p["half_u"], p["half_v"], tex))
        elif kind == "box":
            R = quaternion_to_rotation(p["rotation_xyzw"]) if "rotation_xyzw" in p else np.eye(3)
            prims.append(Box(p["center"], p["half_sizes"], tex, R))
        elif kind == "sphere":
            prims.append(Sphere(p["center"], p["radius"], tex))
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    return Scene(prims, d.get("background", 0.0))


# --------------------------------------------------------------------------
# sequence generation


@dataclass
class GeneratorOptions:
    duration: float = 2.0
    start_time: float = 0.0
    blur_samples: int = 1
    supersample: int = 2  # n x n intensity samples per pixel (box filter), shared with the blur samples; depth is sampled at the centre
    exposure: float = 0.0  # seconds the shutter stays open before the frame time
    accel_noise_std: float = 0.0
    gyro_noise_std: float = 0.0
    intensity_noise_std: float = 0.0
    seed: int = 0


@dataclass
class SyntheticSequence:
    frames: list
    imu: list
    poses: list  # ground-truth camera-to-world poses, world = scene frame
    config: SequenceConfig  # gravity and initial velocity expressed in the first camera frame
    peak_angular_rate: float
    peak_linear_rate: float

    @property
    def label(self) -> str:
        return self.config.label


def classify_motion(peak_angular_rate: float, peak_linear_rate: float) -> str:
    fast = peak_angular_rate > FAST_ANGULAR_RATE or peak_linear_rate > FAST_LINEAR_RATE
    return "fast" if fast else "slow"


def synthesize(scene: Scene, trajectory: Trajectory, config: SequenceConfig, options: GeneratorOptions) -> SyntheticSequence:
    """Render frames and IMU samples in memory."""
    rng = np.random.default_rng(options.seed)
    K = config.intrinsics
    n_frames = int(np.floor(options.duration * config.camera_rate + 1e-9)) + 1
    n_imu = int(np.floor(options.duration * config.imu_rate + 1e-9)) + 1
    frame_times = [options.start_time + k / config.camera_rate for k in range(n_frames)]
    imu_times = [options.start_time + j / config.imu_rate for j in range(n_imu)]

    n = max(1, int(options.supersample))
    sub = (np.arange(n) + 0.5) / n - 0.5
    offsets = [(du, dv) for dv in sub for du in sub]
    frames, poses = [], []
    for k, t in enumerate(frame_times):
        pose = trajectory.pose(t)
        depth = render(scene, pose, K, shade=False)[1]
        shutter = [t]
        if options.blur_samples > 1 and options.exposure > 0:
            shutter = list(np.linspace(t - options.exposure, t, options.blur_samples))
        # one render per (shutter time, sub-pixel offset) pair, cycling the shorter list
        count = max(len(shutter), len(offsets))
        intensity = np.zeros(depth.shape)
        for j in range(count):
            intensity += render(scene, trajectory.pose(shutter[j % len(shutter)]), K, offsets[j % len(offsets)])[0]
        intensity /= count
        if options.intensity_noise_std > 0:
            intensity = np.clip(intensity + rng.normal(0, options.intensity_noise_std, intensity.shape), 0, 255)
        frames.append(Frame(t, intensity, depth, index=k))
        poses.append(pose)

    t_imu = np.asarray(imu_times)
    accel, gyro = trajectory.imu(t_imu, config.imu_extrinsic, config.gravity_world)
    peak_w = float(np.max(np.linalg.norm(trajectory.angular_velocity(t_imu), axis=-1)))
    peak_v = float(np.max(np.linalg.norm(trajectory.velocity(t_imu), axis=-1)))
    if options.accel_noise_std > 0:
        accel = accel + rng.normal(0, options.accel_noise_std, accel.shape)
    if options.gyro_noise_std > 0:
        gyro = gyro + rng.normal(0, options.gyro_noise_std, gyro.shape)
    imu = [ImuSample(float(t), accel[j], gyro[j]) for j, t in enumerate(imu_times)]

    R0 = poses[0].rotation
    local = SequenceConfig(
        intrinsics=K,
        imu_extrinsic=config.imu_extrinsic,
        gravity_world=R0.T @ np.asarray(config.gravity_world, float),
        imu_rate=config.imu_rate,
        camera_rate=config.camera_rate,
        initial_velocity=R0.T @ trajectory.imu_velocity(frame_times[0], config.imu_extrinsic),
        label=classify_motion(peak_w, peak_v),
    )
    return SyntheticSequence(frames, imu, poses, local, peak_w, peak_v)


def write_sequence(seq: SyntheticSequence, out_dir) -> Path:
    """Write the TUM layout plus ``sequence.yaml`` and ``groundtruth.txt``."""
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    K = seq.config.intrinsics
    rgb_lines, depth_lines = ["# timestamp filename\n"], ["# timestamp filename\n"]
    for f in seq.frames:
        name = f"{f.index:06d}.png"
        gray = np.clip(np.round(f.intensity), 0, 255).astype(np.uint8)
        cv2.imwrite(str(out / "rgb" / name), gray)
        raw = np.clip(np.round(f.depth * K.depth_scale), 0, 65535).astype(np.uint16)
        cv2.imwrite(str(out / "depth" / name), raw)
        rgb_lines.append(f"{f.timestamp!r} rgb/{name}\n")
        depth_lines.append(f"{f.timestamp!r} depth/{name}\n")
    (out / "rgb.txt").write_text("".join(rgb_lines))
    (out / "depth.txt").write_text("".join(depth_lines))
    write_imu(out / "imu.txt", seq.imu)
    write_trajectory(out / "groundtruth.txt", [f.timestamp for f in seq.frames], seq.poses)
    seq.config.save(out / "sequence.yaml")
    meta = {
        "label": seq.label,
        "peak_angular_rate": seq.peak_angular_rate,
        "peak_linear_rate": seq.peak_linear_rate,
        "frames": len(seq.frames),
    }
    (out / "metadata.yaml").write_text(yaml.safe_dump(meta, sort_keys=False))
    return out


def generate_synthetic_sequence(scene: Scene, trajectory: Trajectory, config: SequenceConfig, out_dir, options: GeneratorOptions | None = None) -> SyntheticSequence:
    seq = synthesize(scene, trajectory, config, options or GeneratorOptions())
    write_sequence(seq, out_dir)
    log.info("wrote %d frames (%s motion) to %s", len(seq.frames), seq.label, out_dir)
    return seq


def load_scene_config(path) -> dict:
    """Scene/trajectory/camera spec, see ``docs/config.md``."""
    with open(path) as f:
        return yaml.safe_load(f)


def generate_from_config(spec: dict, out_dir, seed: int | None = None) -> SyntheticSequence:
    known = {"scene", "trajectory", "camera", "generator"}
    unknown = set(spec) - known
    if unknown:
        raise ValueError(f"unknown keys in scene config: {sorted(unknown)}")
    scene = scene_from_dict(spec["scene"])
    traj = trajectory_from_dict(spec["trajectory"])
    cam = dict(spec["camera"])
    seq_cfg = SequenceConfig.from_dict(cam)
    gen = GeneratorOptions(**spec.get("generator", {}))
    if seed is not None:
        gen.seed = seed
    return generate_synthetic_sequence(scene, traj, seq_cfg, out_dir, gen)
