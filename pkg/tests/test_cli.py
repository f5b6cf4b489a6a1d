import json
import subprocess
import sys

import pytest

from fusiontrack.cli import main


@pytest.fixture
def scenario(tmp_path):
    cfg = tmp_path / "scenario.cfg"
    cfg.write_text("num_targets = 4\nnum_frames = 40\nseed = 5\np_d = 0.95\nclutter_rate = 0.5\n")
    out = tmp_path / "sim"
    assert main(["simulate", str(cfg), "-o", str(out)]) == 0
    return out


def test_simulate_track_evaluate(scenario, tmp_path, capsys):
    for name in ("detections.txt", "detections.txt.f2d", "detections.txt.f3d", "gt.txt", "tracker.cfg"):
        assert (scenario / name).exists()
    tracks = tmp_path / "tracks.txt"
    assert main(["track", str(scenario / "tracker.cfg"), str(scenario / "detections.txt"), "-o", str(tracks)]) == 0
    assert tracks.read_text().startswith("# fusion-tracker/v1 tracks frames=40")
    capsys.readouterr()
    report = tmp_path / "r.json"
    assert main(["evaluate", str(scenario / "gt.txt"), str(tracks), "--mode", "3d", "--json", str(report)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("mode=3d iou_threshold=0.25: MOTA=")
    assert "range [" in text
    data = json.loads(report.read_text())
    assert data["mota"] > 0.7 and data["buckets"]
    assert main(["evaluate", str(scenario / "gt.txt"), str(tracks), "--mode", "2d", "--iou-threshold", "0.4"]) == 0
    assert capsys.readouterr().out.startswith("mode=2d iou_threshold=0.4:")


def test_track_is_deterministic(scenario, tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    args = [str(scenario / "tracker.cfg"), str(scenario / "detections.txt")]
    assert main(["track", *args, "-o", str(a)]) == 0
    assert main(["track", *args, "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_is_deterministic(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("num_targets = 3\nnum_frames = 20\nseed = 1\n")
    main(["simulate", str(cfg), "-o", str(tmp_path / "x")])
    main(["simulate", str(cfg), "-o", str(tmp_path / "y")])
    for name in ("detections.txt", "detections.txt.f2d", "gt.txt", "tracker.cfg"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_errors_give_nonzero_exit(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_inti = 2\n")
    det = tmp_path / "d.txt"
    det.write_text("")
    assert main(["track", str(bad), str(det), "-o", str(tmp_path / "t.txt")]) == 1
    assert "unknown config key" in capsys.readouterr().err
    assert main(["evaluate", str(tmp_path / "missing.txt"), str(det)]) == 1
    assert main(["simulate", str(bad), "-o", str(tmp_path / "o")]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "fusiontrack", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
    r = subprocess.run([sys.executable, "-m", "fusiontrack", "evaluate", "nope", "nope"], capture_output=True, text=True)
    assert r.returncode != 0 and "error" in r.stderr
