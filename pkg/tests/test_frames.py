import logging

import cv2
import numpy as np
import pytest

from rgbdi.frames import (Frame, ImuSample, MalformedLine, MissingFile, SequenceConfig, associate,
                          load_tum_sequence, read_trajectory, to_grayscale, write_imu, write_trajectory)
from rgbdi.geometry import CameraIntrinsics, Pose, so3_exp

K = CameraIntrinsics(20.0, 20.0, 7.5, 5.5, 16, 12)
CFG = SequenceConfig(K)


def _write_fixture(root, rgb_times, depth_times, imu_times=(), rgb=None):
    (root / "rgb").mkdir()
    (root / "depth").mkdir()
    color = np.zeros((12, 16, 3), np.uint8) if rgb is None else rgb
    for k, t in enumerate(rgb_times):
        cv2.imwrite(str(root / "rgb" / f"{k}.png"), color[..., ::-1])
    for k, t in enumerate(depth_times):
        cv2.imwrite(str(root / "depth" / f"{k}.png"), np.full((12, 16), 10000, np.uint16))
    (root / "rgb.txt").write_text("# rgb\n" + "".join(f"{t:.6f} rgb/{k}.png\n" for k, t in enumerate(rgb_times)))
    (root / "depth.txt").write_text("".join(f"{t:.6f} depth/{k}.png\n" for k, t in enumerate(depth_times)))
    write_imu(root / "imu.txt", [ImuSample(t, np.array([0, -9.81, 0]), np.zeros(3)) for t in imu_times])


def test_two_frames_with_imu_in_order(tmp_path):
    imu_t = [0.995 + 0.005 * j for j in range(12)]
    _write_fixture(tmp_path, [1.0, 1.033], [1.0, 1.033], imu_t)
    events = list(load_tum_sequence(tmp_path, CFG))
    frames = [e for e in events if isinstance(e, Frame)]
    assert len(frames) == 2
    times = [e.timestamp for e in events]
    assert times == sorted(times)
    i0, i1 = events.index(frames[0]), events.index(frames[1])
    between = events[i0 + 1:i1]
    assert all(isinstance(e, ImuSample) for e in between)
    # count oracle: samples strictly after 1.000 and at or before 1.033 -> 1.005 ... 1.030
    assert len(between) == sum(1.0 < t < 1.033 for t in imu_t) == 6


def test_ten_imu_samples_between_frames(tmp_path):
    imu_t = [1.0 + 0.003 * (j + 1) for j in range(10)]
    _write_fixture(tmp_path, [1.0, 1.034], [1.0, 1.034], imu_t)
    events = list(load_tum_sequence(tmp_path, CFG))
    kinds = [type(e).__name__ for e in events]
    assert kinds == ["Frame"] + ["ImuSample"] * 10 + ["Frame"]


def test_depth_outside_window_drops_frame(tmp_path, caplog):
    _write_fixture(tmp_path, [1.0, 2.0], [1.030, 2.0], [1.5])
    with caplog.at_level(logging.WARNING):
        frames = [e for e in load_tum_sequence(tmp_path, CFG) if isinstance(e, Frame)]
    assert [f.timestamp for f in frames] == [2.0]
    assert any("dropped" in r.message for r in caplog.records)


def test_grayscale_and_depth_scaling(tmp_path):
    rgb = np.zeros((12, 16, 3), np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 100, 50, 200
    _write_fixture(tmp_path, [0.0], [0.0], [0.0], rgb=rgb)
    frame = next(e for e in load_tum_sequence(tmp_path, CFG) if isinstance(e, Frame))
    assert np.allclose(frame.intensity, 0.299 * 100 + 0.587 * 50 + 0.114 * 200)
    assert np.allclose(frame.depth, 2.0)
    assert np.allclose(to_grayscale(np.full((2, 2, 3), 7.0)), 7.0)


def test_missing_file(tmp_path):
    _write_fixture(tmp_path, [0.0], [0.0])
    (tmp_path / "depth.txt").unlink()
    with pytest.raises(MissingFile):
        list(load_tum_sequence(tmp_path, CFG))
    with pytest.raises(MissingFile):
        list(load_tum_sequence(tmp_path / "nope", CFG))


def test_malformed_line_reports_line_number(tmp_path):
    _write_fixture(tmp_path, [0.0], [0.0])
    (tmp_path / "imu.txt").write_text("# header\n0.0 1 2 3 4 5 6\n0.005 1 2 x 4 5 6\n")
    with pytest.raises(MalformedLine) as exc:
        list(load_tum_sequence(tmp_path, CFG))
    assert exc.value.lineno == 3


def test_split_accelerometer_gyroscope_files(tmp_path):
    _write_fixture(tmp_path, [0.0, 0.1], [0.0, 0.1])
    (tmp_path / "imu.txt").unlink()
    (tmp_path / "accelerometer.txt").write_text("0.01 0 -9.81 0\n0.02 0 -9.81 0\n")
    (tmp_path / "gyroscope.txt").write_text("0.0101 0 0 1\n0.0201 0 0 2\n")
    imu = [e for e in load_tum_sequence(tmp_path, CFG) if isinstance(e, ImuSample)]
    assert [s.gyro[2] for s in imu] == [1.0, 2.0]


def test_association_greedy_one_to_one():
    pairs = associate([0.0, 0.01, 0.05], [0.005, 0.051, 0.5])
    assert pairs == [(0, 0), (2, 1)]
    assert associate([], [1.0]) == []


def test_sequence_config_round_trip(tmp_path):
    cfg = SequenceConfig(K, Pose(so3_exp([0.1, 0.2, 0.3]), [0.01, 0.02, 0.03]), [0, 9.81, 0], 250.0, 25.0,
                         [0.1, 0, 0], "slow")
    cfg.save(tmp_path / "s.yaml")
    back = SequenceConfig.load(tmp_path / "s.yaml")
    assert np.allclose(back.imu_extrinsic.matrix(), cfg.imu_extrinsic.matrix(), atol=1e-12)
    assert back.intrinsics == K and back.label == "slow" and back.imu_rate == 250.0
    with pytest.raises(ValueError):
        SequenceConfig(K, imu_rate=30.0, camera_rate=30.0)


def test_frame_shape_mismatch():
    with pytest.raises(ValueError):
        Frame(0.0, np.zeros((3, 4)), np.zeros((4, 3)))


def test_trajectory_round_trip(tmp_path):
    poses = [Pose(so3_exp([0.1 * k, 0, 0.2]), [k, 2 * k, 0.5]) for k in range(4)]
    write_trajectory(tmp_path / "t.txt", [0.1 * k for k in range(4)], poses)
    times, back = read_trajectory(tmp_path / "t.txt")
    assert np.allclose(times, [0, 0.1, 0.2, 0.3])
    for a, b in zip(poses, back):
        assert np.allclose(a.matrix(), b.matrix(), atol=1e-5)
    bad = Pose(1.1 * np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        write_trajectory(tmp_path / "bad.txt", [0.0], [bad])
