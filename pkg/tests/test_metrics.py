import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthadapt.core import DepthMap, ImageSample
from depthadapt.datasets import PairedDataset
from depthadapt.metrics import (
    DegeneratePredictionError,
    EvalProtocol,
    MetricsReport,
    delta_accuracy,
    evaluate,
    evaluated_pixels,
    lower_median,
    median_scale,
    report_csv,
    rmse,
)

from oracles import loop_metrics


def dm(a, mask=None):
    return DepthMap(np.asarray(a, np.float32), mask)


def test_perfect_and_uniform_scale():
    g = dm(np.random.default_rng(0).uniform(1, 5, (8, 8)))
    assert delta_accuracy(g, g, 1) == 1.0 and rmse(g, g) == 0.0
    p = dm(g.depths[..., 0] * 1.3)
    assert delta_accuracy(p, g, 1) == 0.0
    assert delta_accuracy(p, g, 2) == 1.0
    assert rmse(dm(g.depths[..., 0] + 2), g) == pytest.approx(2.0, rel=1e-6)


def test_threshold_index_and_empty():
    g = dm(np.ones((2, 2)))
    with pytest.raises(ValueError):
        delta_accuracy(g, g, 4)
    empty = dm(np.ones((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(ValueError):
        rmse(g, empty)
    with pytest.raises(ValueError):
        delta_accuracy(g, dm(np.ones((3, 3))), 1)


def _random_pair(rng, shape=(8, 8)):
    g = rng.uniform(0.5, 10, shape).astype(np.float32)
    p = (g * rng.uniform(0.6, 1.6, shape)).astype(np.float32)
    p[rng.random(shape) < 0.05] = 0.0  # exercises the depth floor
    m = rng.random(shape) < 0.7
    m[0, 0] = True
    return p, g, m


def test_random_maps_match_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, g, m = _random_pair(rng)
        d1, d2, d3, r = loop_metrics([p], [g], [m])
        gm = dm(g, m)
        assert delta_accuracy(dm(p), gm, 1) == pytest.approx(d1, rel=1e-9)
        assert delta_accuracy(dm(p), gm, 2) == pytest.approx(d2, rel=1e-9)
        assert delta_accuracy(dm(p), gm, 3) == pytest.approx(d3, rel=1e-9)
        assert rmse(dm(p), gm) == pytest.approx(r, rel=1e-9)


depth_maps = arrays(np.float32, (6, 6), elements=st.floats(0.0625, 50, width=32))
masks = arrays(np.bool_, (6, 6)).filter(lambda m: m.any())


@given(depth_maps, depth_maps, masks)
def test_delta_monotone_and_symmetric(p, g, m):
    ds = [delta_accuracy(dm(p), dm(g, m), i) for i in (1, 2, 3)]
    assert ds[0] <= ds[1] <= ds[2]
    for i in (1, 2, 3):
        assert delta_accuracy(dm(p, m), dm(g, m), i) == delta_accuracy(dm(g, m), dm(p, m), i)
    assert rmse(dm(p), dm(g, m)) >= 0


@given(depth_maps, depth_maps, masks, depth_maps)
def test_masked_pixels_never_matter(p, g, m, noise):
    perturbed = np.where(m, g, noise * 7)
    p2 = np.where(m, p, noise)
    for i in (1, 2, 3):
        assert delta_accuracy(dm(p), dm(g, m), i) == delta_accuracy(dm(p2), dm(perturbed, m), i)
    assert rmse(dm(p), dm(g, m)) == rmse(dm(p2), dm(perturbed, m))


def test_lower_median():
    assert lower_median(np.array([4.0, 1.0, 3.0, 2.0])) == 2.0
    assert lower_median(np.array([5.0, 1.0, 3.0])) == 3.0


def test_median_scale_cases():
    g = dm(np.random.default_rng(1).uniform(1, 5, (8, 8)))
    scaled = median_scale(dm(g.depths[..., 0] * 2), g)
    assert rmse(scaled, g) == pytest.approx(0.0, abs=1e-6)
    out = median_scale(dm(np.full((4, 4), 4.0)), dm(np.arange(1, 17, dtype=np.float32).reshape(4, 4)))
    assert np.all(out.depths == 8.0)
    with pytest.raises(DegeneratePredictionError):
        median_scale(dm(np.zeros((3, 3))), dm(np.ones((3, 3))))


def _evaluated_median(pred, gt):
    p, _ = evaluated_pixels(pred, gt, 1e-30)
    return lower_median(p)


@settings(max_examples=100)
@given(depth_maps, depth_maps, masks)
def test_median_equality_and_idempotence(p, g, m):
    gt = dm(g, m)
    s = median_scale(dm(p), gt)
    assert _evaluated_median(s, gt) == lower_median(g[m])
    again = median_scale(s, gt)
    assert np.array_equal(again.depths, s.depths)


class _Table:
    """Predicts a stored map per image, keyed by the image's first pixel."""

    def __init__(self, pairs):
        self.maps = {round(float(im[0, 0, 0]), 4): d for im, d in pairs}

    def __call__(self, x):
        return torch.stack([torch.from_numpy(np.array(self.maps[round(float(xi[0, 0, 0]), 4)][None])) for xi in x])


def _set(n=3, shape=(8, 8), seed=0):
    rng = np.random.default_rng(seed)
    items, preds, gts, ms = [], [], [], []
    for i in range(n):
        p, g, m = _random_pair(rng, shape)
        g[0, 1] = 120.0
        m[0, 1] = True
        img = np.full((*shape, 3), (i + 1) / 10, np.float32)
        items.append((ImageSample(img, f"f{i}"), dm(g, m)))
        preds.append(p)
        gts.append(g)
        ms.append(m)
    return PairedDataset(items), preds, gts, ms


def test_evaluate_pools_pixels_like_the_oracle():
    ds, preds, gts, ms = _set()
    table = _Table([(im.pixels, p) for (im, _), p in zip(ds.items, preds)])
    report = evaluate(table, ds, EvalProtocol(max_depth=80.0))
    expected = loop_metrics(preds, gts, ms, max_depth=80.0)
    assert (report.delta1, report.delta2, report.delta3, report.rmse) == pytest.approx(expected, rel=1e-9)
    assert report.n_pixels == sum(int(m.sum()) for m in ms)


def test_evaluate_clips_ground_truth():
    im = ImageSample(np.zeros((2, 2, 3)))
    gt = dm(np.array([[120.0, 10.0], [20.0, 30.0]]))
    ds = PairedDataset([(im, gt)])
    pred = lambda x: torch.tensor([[[[80.0, 10.0], [20.0, 30.0]]]])  # noqa: E731
    report = evaluate(pred, ds, EvalProtocol(max_depth=80.0))
    assert report.rmse == 0.0 and report.delta1 == 1.0


def test_perfect_oracle_and_per_image_option():
    ds, _, gts, _ = _set()
    oracle = _Table([(im.pixels, d.depths[..., 0]) for im, d in ds.items])
    r = evaluate(oracle, ds, EvalProtocol())
    assert (r.delta1, r.delta2, r.delta3, r.rmse) == (1.0, 1.0, 1.0, 0.0)
    assert evaluate(oracle, ds, EvalProtocol(per_image_average=True, median_scaling=True)).rmse == 0.0


def test_median_scaled_evaluation_is_per_sample():
    ds, _, _, _ = _set(n=2)
    factors = [2.0, 0.5]
    pred = _Table([(im.pixels, d.depths[..., 0] * f) for (im, d), f in zip(ds.items, factors)])
    assert evaluate(pred, ds, EvalProtocol(median_scaling=True)).delta1 == 1.0
    assert evaluate(pred, ds, EvalProtocol(median_scaling=False)).delta1 < 0.1


def test_evaluate_errors_name_the_sample():
    im = ImageSample(np.zeros((2, 2, 3)), "frame-7")
    ds = PairedDataset([(im, dm(np.ones((2, 2))))])
    with pytest.raises(ValueError, match="frame-7"):
        evaluate(lambda x: torch.zeros(1, 1, 2, 2), ds, EvalProtocol(median_scaling=True))
    with pytest.raises(ValueError):
        evaluate(lambda x: x, [], EvalProtocol())


def test_crops_restrict_pixels():
    g = np.ones((100, 100), np.float32)
    p = g.copy()
    p[:20] = 50  # top rows fall outside both crops
    assert delta_accuracy(dm(p), dm(g), 1, EvalProtocol(crop="eigen")) == 1.0
    assert delta_accuracy(dm(p), dm(g), 1, EvalProtocol(crop="garg")) == 1.0
    assert delta_accuracy(dm(p), dm(g), 1) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        EvalProtocol(crop="bogus")
    with pytest.raises(ValueError):
        EvalProtocol(min_depth_floor=0.0)


def test_report_row_and_csv():
    r = MetricsReport(0.5, 0.75, 0.9, 1.25, 10, EvalProtocol(median_scaling=True))
    row = r.row(arch="lightweight", resolution="224x224", training_data="source")
    assert list(row) == ["arch", "resolution", "training_data", "median_scaling", "delta1", "delta2", "delta3", "rmse"]
    text = report_csv([row])
    assert text.splitlines()[1] == "lightweight,224x224,source,1,0.500000,0.750000,0.900000,1.250000"
