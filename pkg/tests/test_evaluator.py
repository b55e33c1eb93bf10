import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypertrav.errors import MissingLabels, ShapeMismatch
from hypertrav.evaluator import (ANOMALOUS, EMPTY, NORMAL, Metrics, aggregate, confusion,
                                 predict_grid, project_labels, score, write_metrics_csv)
from hypertrav.geometry import PointCloud
from hypertrav.hypersphere import Hypersphere
from hypertrav.model import TrainedModel
from hypertrav.nn import NetworkConfig, TravNet
from hypertrav.voxel import GridConfig

GRID = GridConfig(3, 3, 1.0, (0.0, 0.0), 8)
labels3 = st.lists(st.sampled_from([EMPTY, NORMAL, ANOMALOUS]), min_size=9, max_size=9)


def test_project_labels():
    pts = [[0.5, 0.5, 0]] * 99 + [[0.6, 0.4, 1]] + [[1.5, 0.5, 0], [2.5, 2.5, 0]]
    lab = [0] * 99 + [3] + [0, 2]
    out = project_labels(PointCloud(pts, lab), (2, 3), GRID)
    expect = np.full((3, 3), EMPTY)
    expect[0, 0] = ANOMALOUS
    expect[0, 1] = NORMAL
    expect[2, 2] = ANOMALOUS
    np.testing.assert_array_equal(out, expect)
    with pytest.raises(MissingLabels):
        project_labels(PointCloud(pts), (2,), GRID)


def test_score_examples():
    truth = np.full((10, 10), NORMAL)
    truth[:5, :5] = EMPTY
    m = score(truth.copy(), truth)
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0) and m.evaluated_cells == 75

    truth = np.full((20, 10), ANOMALOUS)
    truth.reshape(-1)[:110] = NORMAL
    m = score(np.full((20, 10), NORMAL), truth)
    assert m.recall == 1.0 and m.precision == pytest.approx(0.55)

    pred = np.array([[NORMAL, NORMAL, NORMAL], [ANOMALOUS, ANOMALOUS, EMPTY], [EMPTY, EMPTY, EMPTY]])
    truth = np.array([[NORMAL, NORMAL, ANOMALOUS], [NORMAL, ANOMALOUS, NORMAL], [EMPTY, EMPTY, EMPTY]])
    m = score(pred, truth)
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 1)
    assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3)
    with pytest.raises(ShapeMismatch):
        score(pred, truth[:2])


def test_zero_denominators():
    m = Metrics.from_counts(0, 0, 0, 5)
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


@given(labels3, labels3)
def test_swapping_classes_swaps_counts(p, t):
    pred, truth = np.array(p).reshape(3, 3), np.array(t).reshape(3, 3)
    swap = {EMPTY: EMPTY, NORMAL: ANOMALOUS, ANOMALOUS: NORMAL}
    tp, fp, fn, tn = confusion(pred, truth)
    sp = np.vectorize(swap.get)(pred)
    st_ = np.vectorize(swap.get)(truth)
    assert confusion(sp, st_) == (tn, fn, fp, tp)
    excluded = int(np.sum((pred == EMPTY) | (truth == EMPTY)))
    assert score(pred, truth).evaluated_cells + excluded == 9


@given(labels3, labels3, st.permutations(range(3)), st.permutations(range(3)))
def test_metrics_permutation_invariant(p, t, rows, cols):
    pred, truth = np.array(p).reshape(3, 3), np.array(t).reshape(3, 3)
    a = score(pred, truth)
    b = score(pred[np.ix_(rows, cols)], truth[np.ix_(rows, cols)])
    assert a == b


def test_aggregate_micro_and_macro():
    a = Metrics.from_counts(9, 1, 0, 0)
    b = Metrics.from_counts(1, 1, 1, 0)
    micro = aggregate([a, b])
    assert micro.precision == pytest.approx(10 / 12)
    macro = aggregate([a, b], macro=True)
    assert macro.precision == pytest.approx((0.9 + 0.5) / 2)


def test_predict_grid_brute_force(rng):
    grid = GridConfig(6, 6, 0.5, (0.0, 0.0), 8)
    net = TravNet(NetworkConfig(dtype="float64"))
    pts = np.column_stack([rng.uniform(0, 3, 80), rng.uniform(0, 3, 80), rng.normal(size=80)])
    cloud = PointCloud(pts)
    base = TrainedModel(net, Hypersphere(np.zeros(8), 0.0), grid)
    pred = base.predict_clouds([cloud])[0]
    d = np.linalg.norm(pred.z - pred.z.mean(axis=0), axis=1)
    sphere = Hypersphere(pred.z.mean(axis=0), float(np.median(d)))
    out = predict_grid(TrainedModel(net, sphere, grid), cloud)
    expect = np.full(grid.shape, EMPTY)
    for cell, z in zip(pred.cells, pred.z):
        expect.reshape(-1)[cell] = NORMAL if np.sqrt(((z - sphere.center) ** 2).sum()) <= sphere.radius else ANOMALOUS
    np.testing.assert_array_equal(out, expect)
    # zero radius: every occupied cell off-center is anomalous
    zero = predict_grid(TrainedModel(net, Hypersphere(sphere.center, 0.0), grid), cloud)
    assert set(np.unique(zero)) <= {EMPTY, ANOMALOUS}
    # centered on one cell's latent: that cell is normal
    one = predict_grid(TrainedModel(net, Hypersphere(pred.z[0], 0.0), grid), cloud)
    assert one.reshape(-1)[pred.cells[0]] == NORMAL


def test_metrics_csv(tmp_path):
    write_metrics_csv([("s0", Metrics.from_counts(1, 2, 3, 4))], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "scan_id,precision,recall,f1,tp,fp,fn,tn"
    assert lines[1].startswith("s0,") and lines[1].endswith(",1,2,3,4")
