import csv
import json
import struct

import numpy as np
import pytest

from mfl.particles import ParticleState
from mfl.snapshots import (
    CSV_COLUMNS, SnapshotFormatError, read_grid, read_points, read_trajectory, sha256_file,
    write_csv, write_grid, write_json, write_manifest, write_trajectory,
)
from mfl.vlasov import PhaseGrid, bump_density


def _states(n=5, d=2, count=3, seed=0):
    rng = np.random.default_rng(seed)
    return [ParticleState(rng.normal(size=(n, d)), rng.normal(size=(n, d)), 0.25 * k) for k in range(count)]


def test_trajectory_round_trip_is_bit_exact(tmp_path):
    states = _states()
    path = tmp_path / "t.mfl"
    write_trajectory(path, states, 0.25)
    traj = read_trajectory(path)
    assert traj.dt == 0.25 and len(traj.states) == 3
    for a, b in zip(states, traj.states):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.velocities, b.velocities)
        assert a.time == b.time
    assert np.array_equal(read_points(path), states[-1].phase)


def test_trajectory_header_layout(tmp_path):
    path = tmp_path / "t.mfl"
    write_trajectory(path, _states(n=4, d=3, count=2), 0.5)
    raw = path.read_bytes()
    assert raw[:4] == b"MFL1"
    assert struct.unpack_from("<IQdQ", raw, 4) == (3, 4, 0.5, 2)
    assert len(raw) == 32 + 2 * 2 * 4 * 3 * 8


def test_trajectory_bad_magic_and_size(tmp_path):
    path = tmp_path / "t.mfl"
    write_trajectory(path, _states(), 0.25)
    raw = path.read_bytes()
    bad = tmp_path / "bad.mfl"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SnapshotFormatError, match="magic"):
        read_trajectory(bad)
    bad.write_bytes(raw[:-8])
    with pytest.raises(SnapshotFormatError, match="size"):
        read_trajectory(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(SnapshotFormatError):
        read_trajectory(bad)


def test_trajectory_rejects_mixed_frames(tmp_path):
    with pytest.raises(ValueError):
        write_trajectory(tmp_path / "x.mfl", _states(n=3)[:1] + _states(n=4)[:1], 0.1)
    with pytest.raises(ValueError):
        write_trajectory(tmp_path / "x.mfl", [], 0.1)


def test_grid_round_trip(tmp_path):
    g = PhaseGrid.from_function(bump_density(0, 0, 1.0, 1.0, 4), (-2, 2), (-3, 3), 40, 30)
    g.time = 0.7
    path = tmp_path / "g.mflg"
    write_grid(path, g)
    h = read_grid(path)
    assert np.array_equal(g.values, h.values)
    assert np.allclose(g.x_nodes, h.x_nodes, rtol=0, atol=1e-14)
    assert np.allclose(g.v_nodes, h.v_nodes, rtol=0, atol=1e-14)
    assert h.time == 0.7


def test_grid_format_errors(tmp_path):
    g = PhaseGrid.from_function(bump_density(0, 0, 1.0, 1.0, 4), (-2, 2), (-2, 2), 8, 8)
    path = tmp_path / "g.mflg"
    write_grid(path, g)
    raw = path.read_bytes()
    bad = tmp_path / "bad.mflg"
    bad.write_bytes(raw[:-1])
    with pytest.raises(SnapshotFormatError):
        read_grid(bad)
    bad.write_bytes(raw.replace(b"MFL-GRID1", b"MFL-GRID9"))
    with pytest.raises(SnapshotFormatError):
        read_grid(bad)
    # a trajectory is not a grid and vice versa
    with pytest.raises(SnapshotFormatError):
        read_trajectory(path)


def test_csv_header_and_values(tmp_path):
    rows = [{"study": "s", "N": 4, "replica": 0, "t": 0.1, "metric": "w1", "value": 1 / 3},
            {"study": "s", "N": 8, "replica": 1, "t": 0.0, "metric": "w1", "value": np.float64(0.2)}]
    path = tmp_path / "r.csv"
    write_csv(path, rows)
    with open(path, newline="", encoding="utf-8") as fh:
        back = list(csv.reader(fh))
    assert tuple(back[0]) == CSV_COLUMNS
    assert float(back[1][5]) == 1 / 3 and float(back[2][5]) == 0.2
    assert len(back) == 3


def test_json_non_finite_becomes_null(tmp_path):
    path = tmp_path / "s.json"
    write_json(path, {"a": np.inf, "b": np.arange(2), "c": np.bool_(True), 3: np.int64(7)})
    assert json.loads(path.read_text()) == {"a": None, "b": [0, 1], "c": True, "3": 7}


def test_manifest_digests_and_no_temp_file(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("hello\n")
    m = write_manifest(tmp_path, {"tool": "mfl"}, [f])
    data = json.loads(m.read_text())
    assert data["files"] == {"x.txt": sha256_file(f)}
    assert data["files"]["x.txt"] == "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json", "x.txt"]
