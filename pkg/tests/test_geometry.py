import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rgbdi.geometry import (CameraIntrinsics, InvalidDepth, NonPositiveDepth, Pose, Twist, compose,
                            compute_normals, exp_map, inverse, orthonormalize, project, quaternion_to_rotation,
                            rotation_to_quaternion, skew, so3_exp, so3_log, unproject)
from strategies import expm_series, poses, rotation_vec, small_intrinsics, tum_intrinsics


K = tum_intrinsics()


def test_project_examples():
    assert np.allclose(project(K, [0, 0, 1]), [320, 240])
    assert np.allclose(project(K, [1, 0, 2]), [570, 240])


def test_unproject_examples():
    assert np.allclose(unproject(K, [320, 240], 2.0), [0, 0, 2])
    assert np.allclose(unproject(K, [570, 240], 2.0), [1, 0, 2])


def test_depth_errors():
    with pytest.raises(NonPositiveDepth):
        project(K, [0, 0, 0])
    with pytest.raises(NonPositiveDepth):
        project(K, [1, 1, -1])
    with pytest.raises(InvalidDepth):
        unproject(K, [3, 4], 0.0)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1, 1, 0, 0, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(1, 1, 10, 0, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(1, 1, 1, 1, 10, 10, depth_scale=0)


@given(arrays(np.float64, 3, elements=st.floats(-5, 5, allow_nan=False)), st.floats(0.1, 20))
def test_project_unproject_round_trip(xy, z):
    p = np.array([xy[0], xy[1], z])
    assert np.allclose(unproject(K, project(K, p), z), p, atol=1e-9)


def test_all_pixel_sweep_round_trip():
    Ks = small_intrinsics()
    u, v = np.meshgrid(np.arange(Ks.width, dtype=float), np.arange(Ks.height, dtype=float))
    px = np.stack([u.ravel(), v.ravel()], axis=1)
    d = np.linspace(0.3, 7.0, len(px))
    back = project(Ks, unproject(Ks, px, d))
    assert np.max(np.abs(back - px)) < 1e-9


def test_exp_map_examples():
    I = exp_map(Twist())
    assert np.array_equal(I.rotation, np.eye(3)) and np.array_equal(I.translation, np.zeros(3))
    R = exp_map(Twist([np.pi / 2, 0, 0])).rotation
    assert np.allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-0.3, 0.3, allow_nan=False)))
def test_exp_map_matches_series(w):
    assert np.max(np.abs(so3_exp(w) - expm_series(skew(w), 20))) < 1e-10


@given(rotation_vec)
def test_exp_is_rotation_and_inverse(w):
    R = so3_exp(w)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-12
    pose = exp_map(Twist(w, w))
    neg = exp_map(Twist(-w, -w))
    assert np.allclose(pose.rotation @ neg.rotation, np.eye(3), atol=1e-10)


@given(arrays(np.float64, 3, elements=st.floats(-3.1, 3.1, allow_nan=False)))
def test_log_inverts_exp(w):
    if np.linalg.norm(w) > np.pi - 1e-3:
        w = w / np.linalg.norm(w) * (np.pi - 1e-3)
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-7)


def test_log_near_pi():
    w = np.array([0.0, np.pi - 1e-6, 0.0])
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-5)


@given(poses())
def test_compose_inverse_identity(a):
    c = compose(a, inverse(a))
    assert np.allclose(c.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(c.translation, 0, atol=1e-12)
    b = compose(Pose.identity(), a)
    assert np.array_equal(b.rotation, a.rotation) and np.array_equal(b.translation, a.translation)


@given(poses(), poses(), poses())
def test_associativity(a, b, c):
    l = compose(compose(a, b), c)
    r = compose(a, compose(b, c))
    assert np.allclose(l.matrix(), r.matrix(), atol=1e-12)


@given(poses(), arrays(np.float64, (5, 3), elements=st.floats(-5, 5, allow_nan=False)))
def test_transform_matches_matrix(pose, pts):
    hom = np.c_[pts, np.ones(5)] @ pose.matrix().T
    assert np.allclose(pose.transform(pts), hom[:, :3], atol=1e-12)
    assert np.allclose(pose.inverse_transform(pose.transform(pts)), pts, atol=1e-9)


@given(poses(), arrays(np.float64, 6, elements=st.floats(-1, 1, allow_nan=False)))
def test_retract_local_round_trip(pose, xi):
    assert np.allclose(pose.retract(xi).local(pose), xi, atol=1e-9)


@given(rotation_vec)
def test_quaternion_round_trip(w):
    R = so3_exp(w)
    q = rotation_to_quaternion(R)
    assert q[3] >= 0
    assert np.allclose(quaternion_to_rotation(q), R, atol=1e-12)


def test_orthonormalize_restores_rotation():
    R = so3_exp([0.3, -0.2, 0.9]) + 1e-4 * np.arange(9).reshape(3, 3)
    Q = orthonormalize(R)
    assert Pose(Q).is_valid(1e-12)


def _plane_depth(Kc, normal, offset):
    """Depth image of the plane n.X = offset (camera frame) seen by ``Kc``."""
    u, v = np.meshgrid(np.arange(Kc.width, dtype=float), np.arange(Kc.height, dtype=float))
    rays = np.stack([(u - Kc.cx) / Kc.fx, (v - Kc.cy) / Kc.fy, np.ones_like(u)], axis=-1)
    return offset / (rays @ normal)


def test_normals_fronto_parallel_plane():
    Ks = small_intrinsics()
    n, ok = compute_normals(np.full((Ks.height, Ks.width), 2.0), Ks)
    assert ok[1:-1, 1:-1].all() and not ok[0].any() and not ok[:, -1].any()
    assert np.max(np.abs(n[ok] - [0, 0, -1])) < 1e-6


def test_normals_tilted_plane():
    Ks = small_intrinsics()
    normal = np.array([np.sin(np.pi / 4), 0.0, -np.cos(np.pi / 4)])  # 45 deg, facing the camera
    depth = _plane_depth(Ks, normal, -2.0)
    n, ok = compute_normals(depth, Ks)
    assert ok.sum() > 0.9 * ok.size
    assert np.max(np.abs(n[ok] - normal)) < 1e-3
    assert np.allclose(np.linalg.norm(n[ok], axis=1), 1.0, atol=1e-9)


def test_normals_hole_neighbours_invalid():
    Ks = small_intrinsics()
    depth = np.full((Ks.height, Ks.width), 2.0)
    depth[50, 60] = 0.0
    _, ok = compute_normals(depth, Ks)
    for du, dv in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]:
        assert not ok[50 + dv, 60 + du]
    assert ok[52, 62]


def test_normals_depth_edge_invalid():
    Ks = small_intrinsics()
    depth = np.full((Ks.height, Ks.width), 3.0)
    depth[:, :80] = 1.5
    _, ok = compute_normals(depth, Ks)
    assert not ok[60, 79] and not ok[60, 80]
    _, ok_all = compute_normals(depth, Ks, edge_ratio=None)
    assert ok_all[60, 79]


@settings(max_examples=30)
@given(st.floats(0.5, 5.0), arrays(np.float64, 2, elements=st.floats(-0.6, 0.6, allow_nan=False)))
def test_normals_unit_and_facing(offset, tilt):
    Ks = small_intrinsics()
    normal = np.array([tilt[0], tilt[1], -1.0])
    normal /= np.linalg.norm(normal)
    depth = _plane_depth(Ks, normal, -offset)
    depth[depth <= 0] = 0
    n, ok = compute_normals(depth, Ks)
    assert np.allclose(np.linalg.norm(n[ok], axis=1), 1.0, atol=1e-9)
    # facing the camera: n . p < 0
    u, v = np.nonzero(ok.T)
    p = unproject(Ks, np.stack([u, v], axis=1).astype(float), depth[v, u])
    assert np.all(np.sum(n[v, u] * p, axis=1) < 0)
