from __future__ import annotations

import math

import numpy as np
import pytest

from lidar_proposals.core import ObjectClass, PointCloud
from lidar_proposals.errors import CalibrationError, ConfigError, EmptyInputError, FormatError, LabelParseError
from lidar_proposals.ingest import (
    CalibrationSet,
    discover_frames,
    load_calibration,
    load_frame_objects,
    load_labels,
    load_velodyne,
    recover_rings,
    save_calibration,
    save_labels,
    save_velodyne,
)
from lidar_proposals.scene import synthetic_calibration, to_sensor_frame


def test_velodyne_file_layout(tmp_path):
    records = np.array([[1.0, 2.0, 3.0, 0.5], [-4.0, 0.25, -1.5, 0.0]], dtype="<f4")
    path = tmp_path / "000000.bin"
    records.tofile(path)
    cloud = load_velodyne(path)
    assert cloud.xyz.tolist() == [[1.0, 2.0, 3.0], [-4.0, 0.25, -1.5]]
    assert cloud.intensity.tolist() == [0.5, 0.0]

    save_velodyne(tmp_path / "copy.bin", cloud)
    assert (tmp_path / "copy.bin").read_bytes() == path.read_bytes()


def test_velodyne_bad_size(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 20)
    with pytest.raises(FormatError, match="multiple of 16"):
        load_velodyne(path)


def test_velodyne_non_finite_record(tmp_path):
    path = tmp_path / "nan.bin"
    np.array([[0, 0, 0, 0], [np.nan, 0, 0, 0]], dtype="<f4").tofile(path)
    with pytest.raises(FormatError, match="record 1"):
        load_velodyne(path)


def test_empty_velodyne_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert len(load_velodyne(path)) == 0


def test_label_to_sensor_box_identity_calibration(tmp_path):
    path = tmp_path / "label.txt"
    path.write_text(
        "Car 0.00 0 0.00 0 0 0 0 1.50 1.60 3.90 0.00 0.00 10.00 0.00\n"
        "DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10\n",
        encoding="utf-8",
    )
    (obj,) = load_labels(path, CalibrationSet.identity())
    assert obj.cls is ObjectClass.CAR
    assert np.allclose(obj.box.lo, (-1.95, -1.5, 9.2))
    assert np.allclose(obj.box.hi, (1.95, 0.0, 10.8))
    assert obj.dimensions_hwl == (1.5, 1.6, 3.9)


def test_label_parse_error_carries_line(tmp_path):
    path = tmp_path / "label.txt"
    path.write_text("Car 0 0 0 0 0 0 0 1.5 1.6 3.9 0 0 10 0\nPedestrian 0 0\n", encoding="utf-8")
    with pytest.raises(LabelParseError) as info:
        load_labels(path, CalibrationSet.identity())
    assert info.value.line_number == 2


def test_scene_labels_survive_kitti_export(tmp_path, car_scene):
    _, objects = to_sensor_frame(car_scene)
    calib = synthetic_calibration()
    save_labels(tmp_path / "label.txt", objects)
    save_calibration(tmp_path / "calib.txt", calib)
    loaded = load_labels(tmp_path / "label.txt", load_calibration(tmp_path / "calib.txt"))
    assert len(loaded) == len(objects)
    for original, parsed in zip(objects, loaded):
        assert parsed.cls is original.cls
        assert np.allclose(parsed.box.lo, original.box.lo, atol=2e-3)
        assert np.allclose(parsed.box.hi, original.box.hi, atol=2e-3)


def test_recover_rings_quantizes_vertical_angle():
    elevations = np.radians([2.0, -2.0, -6.0, -10.0])
    azimuths = np.radians([-30.0, 0.0, 30.0])
    xyz = np.array(
        [[10 * math.cos(e) * math.cos(a), 10 * math.cos(e) * math.sin(a), 10 * math.sin(e)] for a in azimuths[::-1] for e in elevations]
    )
    cloud = recover_rings(PointCloud(xyz), n_rings=4)
    vertical = np.degrees(np.arctan2(cloud.xyz[:, 2], np.hypot(cloud.xyz[:, 0], cloud.xyz[:, 1])))
    expected = {2.0: 0, -2.0: 1, -6.0: 2, -10.0: 3}
    assert [expected[round(v)] for v in vertical] == cloud.ring.tolist()
    assert cloud.ring.tolist() == sorted(cloud.ring.tolist())
    for ring in range(4):
        bearing = np.arctan2(cloud.xyz[cloud.ring == ring, 1], cloud.xyz[cloud.ring == ring, 0])
        assert np.all(np.diff(bearing) > 0)


def test_recover_rings_empty():
    with pytest.raises(EmptyInputError):
        recover_rings(PointCloud.empty())


def test_recover_rings_rejects_zero_rings():
    with pytest.raises(ConfigError):
        recover_rings(PointCloud(np.ones((2, 3))), n_rings=0)


def test_calibration_bad_number_reports_line(tmp_path):
    path = tmp_path / "calib.txt"
    save_calibration(path, synthetic_calibration())
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[4] = "R0_rect: 1 0 0 0 1 x 0 0 1"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(FormatError, match=r"calib.txt:5:"):
        load_calibration(path)


def test_calibration_wrong_matrix_size(tmp_path):
    path = tmp_path / "calib.txt"
    save_calibration(path, synthetic_calibration())
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[4] = "R0_rect: 1 0 0 0 1 0"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CalibrationError):
        load_calibration(path)


def test_discover_frames_pairs_files(tmp_path):
    save_velodyne(tmp_path / "velodyne" / "000001.bin", PointCloud(np.ones((2, 3))))
    save_velodyne(tmp_path / "velodyne" / "000002.bin", PointCloud(np.ones((2, 3))))
    save_labels(tmp_path / "label_2" / "000001.txt", [])
    frames = discover_frames(tmp_path)
    assert [f.frame_id for f in frames] == ["000001", "000002"]
    assert frames[0].label is not None and frames[1].label is None
    assert load_frame_objects(frames[0]) == []
    assert load_frame_objects(frames[1]) == []


def test_discover_frames_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        discover_frames(tmp_path)
