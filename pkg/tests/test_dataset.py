import json

import numpy as np
import pytest
from helpers import TINY

from hypertrav.config import RunConfig
from hypertrav.dataset import (MANIFEST, DatasetSpec, RouteSpec, build_dataset, default_routes,
                               load_dataset, save_dataset)
from hypertrav.errors import DataError, SpecError
from hypertrav.geometry import read_gspc


@pytest.fixture(scope="module")
def built():
    return build_dataset(RunConfig.from_dict(TINY).dataset_spec())


def test_split_counts_and_ids(built):
    ds, _ = built
    train = [r for r in ds.scans if r.split == "train"]
    test = [r for r in ds.scans if r.split == "test"]
    assert len(train) == 8 and len(test) == 3
    assert len({r.scan_id for r in ds.scans}) == len(ds.scans)
    assert len(ds.samples()) == 11


def test_build_is_deterministic(built):
    ds, _ = built
    again, _ = build_dataset(RunConfig.from_dict(TINY).dataset_spec())
    for a, b in zip(ds.scans, again.scans):
        assert a.pose == b.pose
        assert np.array_equal(a.cloud.points, b.cloud.points)


def test_windows_start_at_scan_origin(built):
    ds, _ = built
    for s in ds.samples("train"):
        # the route sample that produced the scan sits at the robot frame origin
        np.testing.assert_allclose(s.window.positions[0], 0.0, atol=1e-9)
        assert s.window.n == 20
        assert s.supervision.positive.any()


def test_round_trip(built, tmp_path):
    ds, world = built
    save_dataset(ds, tmp_path, world)
    back = load_dataset(tmp_path)
    assert back.grid == ds.grid and back.score == ds.score and back.window == ds.window
    assert back.anomalous_ids == ds.anomalous_ids
    for a, b in zip(ds.samples(), back.samples()):
        assert a.scan_id == b.scan_id
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.cloud.labels, b.cloud.labels)
        np.testing.assert_array_equal(a.window.positions, b.window.positions)
        np.testing.assert_array_equal(a.window.taus, b.window.taus)
        np.testing.assert_array_equal(a.truth(), b.truth())
    np.testing.assert_array_equal(read_gspc(tmp_path / "world.gspc").points.astype(np.float32),
                                  world.cloud.points.astype(np.float32))


def test_load_errors(built, tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing")
    ds, _ = built
    path = save_dataset(ds, tmp_path)
    doc = json.loads(path.read_text())
    (tmp_path / MANIFEST).write_text(json.dumps({**doc, "format_version": 99}))
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    doc["scans"][0]["route"] = "nowhere"
    (tmp_path / MANIFEST).write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    del doc["grid"]
    (tmp_path / MANIFEST).write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_default_routes():
    train, test = default_routes((48.0, 48.0), 40, 12, seed=2)
    assert sum(r.n_scans for r in train) == 40 and sum(r.n_scans for r in test) == 12
    for r in train + test:
        assert all(6.0 <= x <= 42.0 and 6.0 <= y <= 42.0 for x, y in r.waypoints)
    # training lanes run along y, test lanes along x
    assert all(r.waypoints[0][0] == r.waypoints[-1][0] for r in train)
    assert all(r.waypoints[0][1] == r.waypoints[-1][1] for r in test)
    assert [r.n_scans for r in default_routes((48.0, 48.0), 10, 2)[1]] == [1, 1]


def test_spec_validation():
    with pytest.raises(SpecError):
        DatasetSpec(profile="hovercraft")
    with pytest.raises(SpecError):
        DatasetSpec(window=0)
    with pytest.raises(SpecError):
        DatasetSpec(train_routes=(RouteSpec(((1.0, 1.0),), 3),))
