from __future__ import annotations

from lidar_proposals import server
from lidar_proposals.ingest import save_velodyne
from lidar_proposals.scene import to_sensor_frame


def call(tool, *args, **kwargs):
    """Registered tools wrap the plain function in `fn` on newer fastmcp releases."""
    return getattr(tool, "fn", tool)(*args, **kwargs)


def test_help_lists_every_tool():
    text = call(server.help)
    for name in ("describe_config", "detect_file", "evaluate_synthetic"):
        assert f"`{name}(" in text


def test_describe_config_applies_overrides():
    text = call(server.describe_config, ["cluster.h_d=0.4", "clustering=distance"])
    assert "- `cluster.h_d`: 0.4" in text.splitlines()
    assert "- `clustering`: distance" in text.splitlines()
    assert "- `d_o`: 0.26" in text.splitlines()


def test_describe_config_reports_bad_keys():
    assert call(server.describe_config, ["cluster.hd=0.4"]).startswith("Invalid configuration:")


def test_detect_file_table(car_scene, tmp_path):
    cloud, _ = to_sensor_frame(car_scene)
    save_velodyne(tmp_path / "car.bin", cloud)
    text = call(server.detect_file, str(tmp_path / "car.bin"), classify=False)
    lines = text.splitlines()
    assert lines[0].startswith("# car.bin: ") and "detection(s)" in lines[0]
    assert "minimum-points filter off" in text
    assert any(line.startswith("| 0 | unclassified | - |") for line in lines)


def test_detect_file_errors(car_scene, tmp_path):
    assert call(server.detect_file, str(tmp_path / "missing.bin")) == f"File not found: {tmp_path / 'missing.bin'}"
    cloud, _ = to_sensor_frame(car_scene)
    save_velodyne(tmp_path / "car.bin", cloud)
    text = call(server.detect_file, str(tmp_path / "car.bin"), overrides=[f"model_path={tmp_path / 'none.model'}"])
    assert text.startswith("No classifier model at")
    (tmp_path / "broken.bin").write_bytes(b"\x00" * 20)
    assert call(server.detect_file, str(tmp_path / "broken.bin"), classify=False).startswith("Detection failed:")


def test_evaluate_synthetic_report():
    text = call(server.evaluate_synthetic, frames=1, seed=2)
    lines = text.splitlines()
    assert lines[0] == "# Recall on 1 synthetic frame(s), IoU 0.25"
    assert lines[2].startswith("- before filtering: ")
    assert lines[3].startswith("- after filtering: ")
    assert call(server.evaluate_synthetic, frames=0) == "frames must lie in 1..50"
