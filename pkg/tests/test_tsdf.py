import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbdi.frames import Frame
from rgbdi.geometry import Pose, so3_exp
from rgbdi.tsdf import EmptySurface, TsdfVolume, extract_mesh, integrate, raycast, read_ply, write_ply
from scenes import K, SPHERE_RADIUS, fused_sphere, look_at, sphere_depth


@pytest.fixture(scope="module")
def sphere():
    return fused_sphere()


def _plane_frame(z=2.0):
    return Frame(0.0, np.zeros((K.height, K.width)), np.full((K.height, K.width), z))


def _plane_volume():
    vol = TsdfVolume.from_bounds([-1.5, -1.2, 1.0], [1.5, 1.2, 3.0], 0.02)
    return integrate(vol, _plane_frame(), Pose.identity(), K)


def test_plane_zero_crossing():
    vol = _plane_volume()
    # along the optical axis column through the volume centre
    c = vol.voxel_centers()
    i = np.argmin(np.abs(c[:, 0, 0, 0]))
    j = np.argmin(np.abs(c[0, :, 0, 1]))
    col = vol.tsdf[i, j]
    zs = c[i, j, :, 2]
    k = np.flatnonzero((col[:-1] > 0) & (col[1:] <= 0))[0]
    zc = zs[k] + (zs[k + 1] - zs[k]) * col[k] / (col[k] - col[k + 1])
    assert abs(zc - 2.0) < vol.voxel_size


def test_integrate_twice_same_values_double_weight():
    vol = _plane_volume()
    t1, w1 = vol.tsdf.copy(), vol.weight.copy()
    integrate(vol, _plane_frame(), Pose.identity(), K)
    assert np.allclose(vol.tsdf, t1, atol=1e-6)
    assert np.array_equal(vol.weight, np.minimum(2 * w1, vol.w_max))


def test_far_behind_surface_untouched():
    vol = _plane_volume()
    c = vol.voxel_centers()
    behind = c[..., 2] > 2.0 + vol.truncation + 1e-6
    assert np.all(vol.weight[behind] == 0)


def test_saturated_reintegration_changes_nothing():
    vol = TsdfVolume.from_bounds([-1, -1, 1.0], [1, 1, 3.0], 0.05, w_max=3)
    for _ in range(3):
        integrate(vol, _plane_frame(), Pose.identity(), K)
    t, w = vol.tsdf.copy(), vol.weight.copy()
    integrate(vol, _plane_frame(), Pose.identity(), K)
    assert np.array_equal(vol.weight, w) and np.allclose(vol.tsdf, t, atol=1e-6)


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1))
def test_bounds_hold_under_random_integration(seed):
    rng = np.random.default_rng(seed)
    vol = TsdfVolume.from_bounds([-1, -1, 0.5], [1, 1, 3.0], 0.05, w_max=4)
    for k in range(6):
        depth = rng.uniform(0.5, 3.5, (K.height, K.width)) * (rng.random((K.height, K.width)) > 0.1)
        pose = Pose(so3_exp(rng.normal(0, 0.1, 3)), rng.normal(0, 0.1, 3))
        integrate(vol, Frame(0.0, depth * 0, depth), pose, K)
    assert np.all(np.abs(vol.tsdf) <= 1.0)
    assert np.all((vol.weight >= 0) & (vol.weight <= vol.w_max))


def test_empty_volume():
    vol = TsdfVolume.from_bounds([-1, -1, 0], [1, 1, 2], 0.1)
    d, n, ok = raycast(vol, Pose.identity(), K)
    assert not ok.any() and np.all(d == 0)
    with pytest.raises(EmptySurface):
        extract_mesh(vol)


def test_raycast_reproduces_input_depth():
    vol = _plane_volume()
    d, n, ok = raycast(vol, Pose.identity(), K)
    good = ok & (np.abs(d - 2.0) < 2 * vol.voxel_size)
    assert good.sum() >= 0.9 * ok.size
    assert np.allclose(n[ok].mean(axis=0), [0, 0, -1], atol=1e-2)


def test_raycast_sparse_pixels_match_dense():
    vol = _plane_volume()
    pose = Pose(so3_exp([0.02, -0.03, 0]), [0.05, 0, 0.1])
    d, n, ok = raycast(vol, pose, K)
    pix = np.array([[10, 10], [80, 60], [150, 100]], float)
    ds, ns, oks = raycast(vol, pose, K, pixels=pix)
    for k, (u, v) in enumerate(pix.astype(int)):
        assert oks[k] == ok[v, u] and abs(ds[k] - d[v, u]) < 1e-12


def sphere_raycast_fraction(vol, pose):
    d, _, ok = raycast(vol, pose, K)
    truth = sphere_depth(pose)
    hit = ok & (truth > 0)
    return float(np.mean(np.abs(d[hit] - truth[hit]) < vol.voxel_size)), int(hit.sum())


def sphere_mesh_rms(vol):
    mesh = extract_mesh(vol)
    r = np.linalg.norm(mesh.vertices, axis=1) - SPHERE_RADIUS
    return float(np.sqrt(np.mean(r * r))), mesh


def test_sphere_raycast_depth(sphere):
    frac, n = sphere_raycast_fraction(sphere, look_at([0.4, -2.5, 1.7]))
    assert n > 1000 and frac >= 0.95


def test_sphere_mesh_accuracy_and_topology(sphere):
    rms, mesh = sphere_mesh_rms(sphere)
    assert rms < sphere.voxel_size
    assert mesh.euler_characteristic() == 2


def test_plane_mesh_normals():
    mesh = extract_mesh(_plane_volume())
    n = mesh.face_normals()
    cos = np.abs(n @ [0, 0, 1.0])
    assert np.all(cos > np.cos(np.deg2rad(5)))


def test_ply_round_trip(tmp_path, sphere):
    mesh = extract_mesh(sphere)
    write_ply(tmp_path / "m.ply", mesh)
    back = read_ply(tmp_path / "m.ply")
    assert np.array_equal(back.faces, mesh.faces)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert (tmp_path / "m.ply").read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")
