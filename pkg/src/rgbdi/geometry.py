"""Pinhole camera model, rigid transforms and depth-image geometry.

Poses map camera coordinates to world coordinates: ``X_w = R @ X_c + t``.
Rotation perturbations are applied on the left (``R <- Exp(dtheta) @ R``) and
translation perturbations additively, matching how the filter composes
increments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonPositiveDepth(ValueError):
    pass


class InvalidDepth(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if not self.depth_scale > 0:
            raise ValueError("depth_scale must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resized by ``factor``."""
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
            self.depth_scale,
        )


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula, with a Taylor expansion near zero."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-12:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * w * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[i] / axis[i]
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class Twist:
    rotational: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translational: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotational", np.asarray(self.rotational, dtype=float).reshape(3))
        object.__setattr__(self, "translational", np.asarray(self.translational, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.rotational)) and np.all(np.isfinite(self.translational))):
            raise ValueError("twist components must be finite")

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotational, self.translational])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.max(np.abs(R.T @ R - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def transform(self, points) -> np.ndarray:
        """Apply the pose to points of shape (3,) or (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def inverse_transform(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.translation) @ self.rotation

    def retract(self, xi) -> "Pose":
        """Apply a 6-vector increment [dtheta, dt]: R <- Exp(dtheta) R, t <- t + dt."""
        xi = np.asarray(xi, dtype=float)
        return Pose(so3_exp(xi[:3]) @ self.rotation, self.translation + xi[3:6])

    def local(self, other: "Pose") -> np.ndarray:
        """Increment taking ``other`` to ``self``; inverse of :meth:`retract`."""
        return np.concatenate(
            [so3_log(self.rotation @ other.rotation.T), self.translation - other.translation]
        )


def exp_map(twist: Twist) -> Pose:
    """Exponential map on SO(3) x R^3: Rodrigues rotation, translation passed through."""
    return Pose(so3_exp(twist.rotational), twist.translational.copy())


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose(Rt, -Rt @ a.translation)


def project(intrinsics: CameraIntrinsics, point_cam) -> np.ndarray:
    """Pinhole projection of camera-frame points, shape (3,) or (N, 3)."""
    p = np.asarray(point_cam, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point behind or on the camera plane")
    u = intrinsics.fx * p[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * p[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def unproject(intrinsics: CameraIntrinsics, pixel, depth) -> np.ndarray:
    pixel = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise InvalidDepth("depth must be positive")
    x = (pixel[..., 0] - intrinsics.cx) * d / intrinsics.fx
    y = (pixel[..., 1] - intrinsics.cy) * d / intrinsics.fy
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


def projection_jacobian(intrinsics: CameraIntrinsics, points) -> np.ndarray:
    """d(u, v)/d(x, y, z) for camera-frame points; shape (N, 2, 3)."""
    p = np.atleast_2d(points)
    inv_z = 1.0 / p[:, 2]
    J = np.zeros((len(p), 2, 3))
    J[:, 0, 0] = intrinsics.fx * inv_z
    J[:, 0, 2] = -intrinsics.fx * p[:, 0] * inv_z**2
    J[:, 1, 1] = intrinsics.fy * inv_z
    J[:, 1, 2] = -intrinsics.fy * p[:, 1] * inv_z**2
    return J


def backproject_depth(depth: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point for every pixel; invalid (<= 0) depths give z = 0 rows."""
    h, w = depth.shape
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    x = (u - intrinsics.cx) * depth / intrinsics.fx
    y = (v - intrinsics.cy) * depth / intrinsics.fy
    return np.stack([x, y, depth], axis=-1)


def compute_normals(depth: np.ndarray, intrinsics: CameraIntrinsics, edge_ratio: float | None = 0.1):
    """Per-pixel unit normals (camera frame) facing the camera, plus a validity mask.

    Tangents are central differences of back-projected neighbours; a pixel is
    invalid when it or any of its four neighbours lacks depth, and on the
    image border. With ``edge_ratio`` set, a neighbour whose depth differs by
    more than that fraction of the pixel's depth also invalidates it: such a
    pixel sits on a depth discontinuity, its tangents span two surfaces and
    its colour mixes both.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise ValueError("depth image does not match intrinsics")
    pts = backproject_depth(depth, intrinsics)
    normals = np.zeros_like(pts)
    valid = np.zeros(depth.shape, dtype=bool)

    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    ok = (
        (depth[1:-1, 1:-1] > 0)
        & (depth[1:-1, 2:] > 0)
        & (depth[1:-1, :-2] > 0)
        & (depth[2:, 1:-1] > 0)
        & (depth[:-2, 1:-1] > 0)
    )
    if edge_ratio is not None:
        c = depth[1:-1, 1:-1]
        for nb in (depth[1:-1, 2:], depth[1:-1, :-2], depth[2:, 1:-1], depth[:-2, 1:-1]):
            ok &= np.abs(nb - c) <= edge_ratio * c
    norm = np.linalg.norm(n, axis=-1)
    ok &= norm > 0
    n = np.where(ok[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    facing = np.sum(n * pts[1:-1, 1:-1], axis=-1) > 0
    n[facing] *= -1.0
    normals[1:-1, 1:-1] = n
    valid[1:-1, 1:-1] = ok
    return normals, valid


def rotation_to_quaternion(R) -> np.ndarray:
    """(qx, qy, qz, qw) with qw >= 0."""
    from scipy.spatial.transform import Rotation

    q = Rotation.from_matrix(R).as_quat()
    return -q if q[3] < 0 else q


def quaternion_to_rotation(q) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix()
