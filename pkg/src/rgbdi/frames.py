"""RGB-D frames, IMU samples and the TUM-style sequence layout on disk."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import cv2
import numpy as np
import yaml

from .geometry import CameraIntrinsics, Pose, quaternion_to_rotation, rotation_to_quaternion

log = logging.getLogger(__name__)

ASSOCIATION_WINDOW = 0.02


class SequenceError(Exception):
    pass


class MissingFile(SequenceError):
    pass


class MalformedLine(SequenceError):
    def __init__(self, path, lineno, line):
        super().__init__(f"{path}:{lineno}: cannot parse {line!r}")
        self.path = path
        self.lineno = lineno


@dataclass
class Frame:
    timestamp: float
    intensity: np.ndarray
    depth: np.ndarray
    index: int = 0

    def __post_init__(self):
        if self.intensity.shape != self.depth.shape:
            raise ValueError("intensity and depth sizes differ")


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass
class SequenceConfig:
    intrinsics: CameraIntrinsics
    imu_extrinsic: Pose = field(default_factory=Pose.identity)
    gravity_world: np.ndarray = field(default_factory=lambda: np.array([0.0, 9.81, 0.0]))
    imu_rate: float = 200.0
    camera_rate: float = 30.0
    initial_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    label: str = ""

    def __post_init__(self):
        self.gravity_world = np.asarray(self.gravity_world, dtype=float)
        self.initial_velocity = np.asarray(self.initial_velocity, dtype=float)
        if not self.imu_rate > self.camera_rate:
            raise ValueError("imu_rate must exceed camera_rate")

    def to_dict(self) -> dict:
        K = self.intrinsics
        q = rotation_to_quaternion(self.imu_extrinsic.rotation)
        return {
            "intrinsics": {
                "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                "width": K.width, "height": K.height, "depth_scale": K.depth_scale,
            },
            "imu_extrinsic": {
                "translation": [float(x) for x in self.imu_extrinsic.translation],
                "quaternion_xyzw": [float(x) for x in q],
            },
            "gravity_world": [float(x) for x in self.gravity_world],
            "imu_rate": float(self.imu_rate),
            "camera_rate": float(self.camera_rate),
            "initial_velocity": [float(x) for x in self.initial_velocity],
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceConfig":
        ext = d.get("imu_extrinsic") or {}
        R = quaternion_to_rotation(ext.get("quaternion_xyzw", [0, 0, 0, 1]))
        return cls(
            intrinsics=CameraIntrinsics(**d["intrinsics"]),
            imu_extrinsic=Pose(R, ext.get("translation", [0, 0, 0])),
            gravity_world=d.get("gravity_world", [0.0, 9.81, 0.0]),
            imu_rate=d.get("imu_rate", 200.0),
            camera_rate=d.get("camera_rate", 30.0),
            initial_velocity=d.get("initial_velocity", [0.0, 0.0, 0.0]),
            label=d.get("label", ""),
        )

    @classmethod
    def load(cls, path) -> "SequenceConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def save(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


Event = Union[Frame, ImuSample]


def _read_table(path: Path, min_cols: int):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) < min_cols:
                raise MalformedLine(path, lineno, line.rstrip("\n"))
            try:
                t = float(parts[0])
            except ValueError:
                raise MalformedLine(path, lineno, line.rstrip("\n")) from None
            rows.append((lineno, t, parts[1:]))
    return rows


def _read_numeric(path: Path, ncols: int):
    out = []
    for lineno, t, rest in _read_table(path, ncols + 1):
        try:
            out.append((t, np.array([float(x) for x in rest[:ncols]])))
        except ValueError:
            raise MalformedLine(path, lineno, " ".join([str(t), *rest])) from None
    return out


def associate(a_times, b_times, window: float = ASSOCIATION_WINDOW):
    """Greedy one-to-one nearest-timestamp matching; returns index pairs."""
    a_times = np.asarray(a_times)
    b_times = np.asarray(b_times)
    if len(a_times) == 0 or len(b_times) == 0:
        return []
    cand = []
    for i, t in enumerate(a_times):
        j = int(np.argmin(np.abs(b_times - t)))
        for jj in (j - 1, j, j + 1):
            if 0 <= jj < len(b_times):
                dt = abs(b_times[jj] - t)
                if dt <= window + 1e-12:
                    cand.append((dt, i, jj))
    cand.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Rec.601 luminance from an RGB array; grayscale input passes through."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return image
    return 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]


def read_imu(directory: Path):
    """Samples from imu.txt, or accelerometer.txt + gyroscope.txt; empty list if absent."""
    combined = directory / "imu.txt"
    if combined.exists():
        return [ImuSample(t, v[:3], v[3:6]) for t, v in _read_numeric(combined, 6)]
    acc, gyro = directory / "accelerometer.txt", directory / "gyroscope.txt"
    if acc.exists() and gyro.exists():
        a = _read_numeric(acc, 3)
        g = _read_numeric(gyro, 3)
        pairs = associate([t for t, _ in a], [t for t, _ in g], window=0.5 / 1000.0 + 1e-3)
        return [ImuSample(a[i][0], a[i][1], g[j][1]) for i, j in pairs]
    if acc.exists():
        log.warning("%s has no gyroscope data; IMU samples unavailable", directory)
    else:
        log.warning("%s has no IMU file", directory)
    return []


def load_frames(directory, config: SequenceConfig, window: float = ASSOCIATION_WINDOW) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile(f"{directory} is not a directory")
    for name in ("rgb.txt", "depth.txt"):
        if not (directory / name).exists():
            raise MissingFile(str(directory / name))
    rgb = _read_table(directory / "rgb.txt", 2)
    dep = _read_table(directory / "depth.txt", 2)
    pairs = dict(associate([r[1] for r in rgb], [d[1] for d in dep], window))
    K = config.intrinsics
    frames = []
    for i, (_, t, rest) in enumerate(rgb):
        if i not in pairs:
            log.warning("no depth within %.0f ms of rgb frame t=%.6f; dropped", window * 1e3, t)
            continue
        dpath = directory / dep[pairs[i]][2][0]
        cpath = directory / rest[0]
        color = cv2.imread(str(cpath), cv2.IMREAD_UNCHANGED)
        depth_raw = cv2.imread(str(dpath), cv2.IMREAD_UNCHANGED)
        if color is None:
            raise MissingFile(str(cpath))
        if depth_raw is None:
            raise MissingFile(str(dpath))
        if color.ndim == 3:
            color = color[..., ::-1]  # BGR -> RGB
        intensity = to_grayscale(color)
        depth = depth_raw.astype(float) / K.depth_scale
        if intensity.shape != (K.height, K.width):
            raise SequenceError(f"{cpath} has size {intensity.shape}, expected {(K.height, K.width)}")
        frames.append(Frame(t, intensity, depth, index=len(frames)))
    return frames


def load_tum_sequence(directory, config: SequenceConfig, window: float = ASSOCIATION_WINDOW) -> Iterator[Event]:
    """Frames and IMU samples of a TUM-layout directory, merged in time order.

    Frames whose rgb image has no depth image within ``window`` seconds are
    dropped with a warning. At equal timestamps the IMU sample comes first.
    """
    directory = Path(directory)
    frames = load_frames(directory, config, window)
    imu = read_imu(directory)
    events = [(f.timestamp, 1, k, f) for k, f in enumerate(frames)]
    events += [(s.timestamp, 0, k, s) for k, s in enumerate(imu)]
    events.sort(key=lambda e: e[:3])
    for *_, e in events:
        yield e


def write_trajectory(path, timestamps, poses, check: bool = True):
    """TUM trajectory format ``t tx ty tz qx qy qz qw`` with 6 decimals."""
    lines = []
    for t, pose in zip(timestamps, poses):
        if check and not pose.is_valid(1e-6):
            raise ValueError(f"non-orthonormal rotation at t={t}")
        q = rotation_to_quaternion(pose.rotation)
        vals = [t, *pose.translation, *q]
        lines.append(" ".join(f"{v:.6f}" for v in vals))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_trajectory(path):
    rows = _read_numeric(Path(path), 7)
    times = np.array([t for t, _ in rows])
    poses = [Pose(quaternion_to_rotation(v[3:7]), v[:3]) for _, v in rows]
    return times, poses


def write_imu(path, samples):
    with open(path, "w") as f:
        f.write("# timestamp ax ay az gx gy gz\n")
        for s in samples:
            vals = [s.timestamp, *s.accel, *s.gyro]
            f.write(" ".join(repr(float(v)) for v in vals) + "\n")
