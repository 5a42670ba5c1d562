import json

import numpy as np
import pytest

from rgbdi.config import ConfigError, PipelineConfig, config_from_dict, load_config
from rgbdi.frames import SequenceError, read_trajectory
from rgbdi.metrics import compute_aie
from rgbdi.pipeline import REPORT_SCHEMA_VERSION, format_aie_table, run, track_eval


def _config(seq_dir, tmp_path=None, **toggles):
    cfg = PipelineConfig()
    cfg.sequence.path = str(seq_dir)
    for k, v in toggles.items():
        setattr(cfg.toggles, k, v)
    if tmp_path is not None:
        cfg.output.trajectory = str(tmp_path / "traj.txt")
        cfg.output.report = str(tmp_path / "report.json")
    return cfg


def test_static_sequence_is_exact(sequences):
    rep = run(_config(sequences("static")))
    s = rep.summary
    assert s["ate_rmse"] < 1e-3
    assert all(f["aie"] is None or f["aie"] < 1.0 for f in rep.frames)
    assert s["aie"] < 1.0 and not s["diverged"]


def test_report_schema(sequences, tmp_path):
    cfg = _config(sequences("static", 0.5), tmp_path)
    cfg.output.include_timing = True
    rep = run(cfg)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["schema_version"] == REPORT_SCHEMA_VERSION
    assert len(doc["frames"]) == doc["summary"]["frames"] == len(rep.frames)
    assert len(doc["timing"]) == len(doc["frames"])
    for k, f in enumerate(doc["frames"]):
        assert f["index"] == k
        assert set(f) == {"index", "timestamp", "pose", "aie", "patches", "status", "iterations", "step_norms",
                          "residual_rms"}
        assert len(f["pose"]) == 7
    for key in ("aie", "ate_rmse", "tracked_pairs", "failed_updates", "diverged", "use_imu", "use_deformation",
                "median_frame_time"):
        assert key in doc["summary"]
    times, poses = read_trajectory(tmp_path / "traj.txt")
    assert len(times) == len(rep.frames)
    for p in poses:
        assert np.allclose(p.rotation @ p.rotation.T, np.eye(3), atol=1e-5)


def test_determinism(sequences, tmp_path):
    seq = sequences("slow", 0.5)
    out = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        run(_config(seq, d))
        out.append(((d / "traj.txt").read_bytes(), (d / "report.json").read_bytes()))
    assert out[0] == out[1]


def test_aie_records_match_summary(sequences):
    rep = run(_config(sequences("slow", 0.5)))
    assert rep.summary["aie"] == compute_aie(rep.aie_records)
    assert rep.summary["tracked_pairs"] == len(rep.aie_records)


def test_track_eval_matches_in_process_runs(sequences):
    cfg = _config(sequences("fast", 0.5))
    table = track_eval(cfg)
    for label, flag in (("direct", False), ("deformation", True)):
        assert table[label] == run(_config(sequences("fast", 0.5), use_deformation=flag)).summary["aie"]
    text = format_aie_table("fast", table)
    assert text.splitlines()[0].split() == ["dataset", "direct", "deformation"]
    assert float(text.splitlines()[1].split()[1]) == pytest.approx(table["direct"], abs=1e-4)


def test_mesh_output(sequences, tmp_path):
    cfg = _config(sequences("static", 0.5))
    cfg.output.mesh = str(tmp_path / "mesh.ply")
    run(cfg)
    assert (tmp_path / "mesh.ply").read_bytes().startswith(b"ply")


def test_missing_sequence_raises(tmp_path):
    with pytest.raises(SequenceError):
        run(_config(tmp_path / "nowhere"))


def test_imu_required_when_enabled(sequences, tmp_path):
    seq = sequences("static", 0.5)
    target = tmp_path / "seq"
    target.mkdir()
    for f in seq.iterdir():
        if f.is_dir():
            (target / f.name).symlink_to(f)
        elif f.name != "imu.txt":
            (target / f.name).write_bytes(f.read_bytes())
    (target / "imu.txt").write_text("# no samples\n")
    with pytest.raises(SequenceError):
        run(_config(target))
    run(_config(target, use_imu=False))


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"toggles": {"use_imu": True, "typo": 1}})
    with pytest.raises(ConfigError):
        config_from_dict({"nonsense": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"objective": {"lam": 2.0}})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_relative_path(tmp_path):
    (tmp_path / "c.yaml").write_text("sequence:\n  path: data/seq\ntoggles:\n  use_imu: false\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.sequence.path == str(tmp_path / "data/seq")
    assert cfg.toggles.use_imu is False
    assert cfg.patches.budget == 100 and cfg.maintenance.quality_threshold == 15.0
