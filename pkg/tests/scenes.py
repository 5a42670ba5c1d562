"""Analytic fusion fixtures shared by the TSDF tests and the acceptance suite."""
import numpy as np

from rgbdi.frames import Frame
from rgbdi.geometry import CameraIntrinsics, Pose
from rgbdi.synthetic import Scene, SolidTexture, Sphere, render
from rgbdi.tsdf import TsdfVolume, integrate

K = CameraIntrinsics(120.0, 120.0, 79.5, 59.5, 160, 120)
SPHERE_RADIUS = 1.0
SPHERE_SCENE = Scene([Sphere([0, 0, 0], SPHERE_RADIUS, SolidTexture.random(1))])


def look_at(eye, target=(0.0, 0.0, 0.0)) -> Pose:
    """Camera-to-world pose at ``eye`` looking at ``target`` (x right, y down, z forward)."""
    eye = np.asarray(eye, float)
    z = np.asarray(target, float) - eye
    z /= np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def fibonacci_views(n=20, distance=3.0):
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5**0.5) * k
    eyes = distance * np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], axis=1)
    return [look_at(e) for e in eyes]


def fused_sphere(voxel_size=0.02, views=20):
    vol = TsdfVolume.from_bounds([-1.3] * 3, [1.3] * 3, voxel_size)
    for i, pose in enumerate(fibonacci_views(views)):
        _, depth = render(SPHERE_SCENE, pose, K)
        integrate(vol, Frame(0.0, depth * 0, depth, i), pose, K)
    return vol


def sphere_depth(pose: Pose):
    return render(SPHERE_SCENE, pose, K)[1]
