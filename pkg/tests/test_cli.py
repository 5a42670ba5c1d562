import json
import subprocess
import sys

import pytest
import yaml

from rgbdi import fixtures
from rgbdi.cli import main
from rgbdi.config import PipelineConfig
from rgbdi.pipeline import run


def _write_config(path, seq_dir, **extra):
    data = {"sequence": {"path": str(seq_dir)}}
    data.update(extra)
    path.write_text(yaml.safe_dump(data))
    return path


def test_eval_ate_self_is_zero(sequences, capsys):
    gt = sequences("static", 0.5) / "groundtruth.txt"
    assert main(["eval-ate", str(gt), str(gt)]) == 0
    assert capsys.readouterr().out.strip() == "0.000000"


def test_eval_ate_no_overlap_is_sequence_error(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("0.0 0 0 0 0 0 0 1\n")
    (tmp_path / "b.txt").write_text("10.0 0 0 0 0 0 0 1\n")
    assert main(["eval-ate", str(tmp_path / "a.txt"), str(tmp_path / "b.txt")]) == 2


def test_run_missing_directory_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", tmp_path / "nowhere")
    assert main(["run", str(cfg)]) == 2
    assert "nowhere" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("toggles:\n  use_imu: true\n  bogus: 3\n")
    assert main(["run", str(tmp_path / "c.yaml")]) == 1
    assert "bogus" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "absent.yaml")]) == 1
    (tmp_path / "broken.yaml").write_text("toggles: [unclosed\n")
    assert main(["run", str(tmp_path / "broken.yaml")]) == 1


def test_run_writes_outputs_and_honours_flags(sequences, tmp_path):
    seq = sequences("static", 0.5)
    cfg = _write_config(tmp_path / "c.yaml", seq)
    args = ["run", str(cfg), "--no-imu", "--no-deformation", "--seed", "3",
            "--report-out", str(tmp_path / "r.json"), "--mesh-out", str(tmp_path / "m.ply"),
            "--trajectory-out", str(tmp_path / "t.txt")]
    assert main(args) == 0
    summary = json.loads((tmp_path / "r.json").read_text())["summary"]
    assert summary["use_imu"] is False and summary["use_deformation"] is False
    assert (tmp_path / "m.ply").exists() and (tmp_path / "t.txt").exists()


def test_synth_writes_sequence(tmp_path):
    spec = tmp_path / "scene.yaml"
    fixtures.dump("static", spec, duration=0.2)
    assert main(["synth", str(spec), str(tmp_path / "out"), "--seed", "5"]) == 0
    assert (tmp_path / "out" / "sequence.yaml").exists()
    assert len((tmp_path / "out" / "rgb.txt").read_text().strip().splitlines()) >= 6


def test_synth_bad_scene_exits_1(tmp_path):
    spec = tmp_path / "scene.yaml"
    spec.write_text("scene: {}\nextra: 1\n")
    assert main(["synth", str(spec), str(tmp_path / "out")]) == 1
    assert main(["synth", str(tmp_path / "missing.yaml"), str(tmp_path / "out")]) == 1


def test_track_eval_table_matches_in_process(sequences, capsys, tmp_path):
    seq = sequences("fast", 0.5)
    cfg_path = _write_config(tmp_path / "c.yaml", seq)
    assert main(["track-eval", str(cfg_path)]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header.split() == ["dataset", "direct", "deformation"]
    _, direct, deform = row.split()
    for value, flag in ((direct, False), (deform, True)):
        cfg = PipelineConfig()
        cfg.sequence.path = str(seq)
        cfg.toggles.use_deformation = flag
        assert float(value) == pytest.approx(run(cfg).summary["aie"], abs=5e-5)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "rgbdi", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "synth", "track-eval", "eval-ate"):
        assert cmd in out.stdout
