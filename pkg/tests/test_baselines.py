import numpy as np
import pytest

from nrqi.baselines import (LOWER_BETTER, METRIC_ORIENTATION, RegionSpec, UndefinedCNRError, cnr,
                            entropy, metric_diff_report, tenengrad)
from nrqi.image_io import Image


def two_region_image():
    px = np.zeros((10, 20))
    px[:, :10] = 100.0
    bg = np.where(np.indices((10, 10)).sum(0) % 2 == 0, 40.0, 60.0)
    px[:, 10:] = bg
    return Image(px, value_range="float"), RegionSpec.rects((0, 0, 10, 10), (10, 0, 10, 10))


def test_cnr_constructed():
    img, regions = two_region_image()
    assert abs(cnr(img, regions) - 5.0) < 1e-9


def test_cnr_equal_regions_and_errors():
    px = np.tile([1.0, 3.0], (4, 4))
    assert cnr(Image(px, value_range="float"), RegionSpec.rects((0, 0, 4, 4), (4, 0, 4, 4))) == 0
    flat = Image(np.full((4, 8), 2.0), value_range="float")
    with pytest.raises(UndefinedCNRError):
        cnr(flat, RegionSpec.rects((0, 0, 4, 4), (4, 0, 4, 4)))
    with pytest.raises(UndefinedCNRError):
        cnr(flat)
    with pytest.raises(ValueError):
        cnr(flat, RegionSpec.rects((0, 0, 5, 4), (4, 0, 4, 4)))


def test_cnr_auto_mode():
    rng = np.random.default_rng(0)
    px = np.full((32, 32), 0.2) + 0.01 * rng.standard_normal((32, 32))
    px[8:24, 8:24] += 0.5
    assert cnr(Image(np.clip(px, 0, 1))) > 10


def test_tenengrad_constant_and_ramp():
    assert tenengrad(Image(np.full((6, 7), 0.3))) == 0
    ramp = np.tile(np.arange(12.0), (9, 1))
    assert abs(tenengrad(Image(ramp, value_range="float")) - 8.0) < 1e-9


def test_tenengrad_rotation_and_transpose():
    img = np.random.default_rng(1).random((20, 20))
    t = tenengrad(Image(img))
    assert tenengrad(Image(np.rot90(img).copy())) == pytest.approx(t, rel=1e-12)
    assert tenengrad(Image(img.T.copy())) == pytest.approx(t, rel=1e-12)


def test_entropy_constructed():
    assert entropy(Image(np.full((4, 4), 7), value_range="uint8")) == 0
    half = np.array([[3, 3, 200, 200]])
    assert abs(entropy(Image(half, value_range="uint8")) - 1.0) < 1e-9
    uniform = np.arange(256).reshape(16, 16)
    assert abs(entropy(Image(uniform, value_range="uint8")) - 8.0) < 1e-9


def test_entropy_bin_relabel_invariant():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (30, 30))
    relabel = rng.permutation(256)
    a = entropy(Image(img, value_range="uint8"))
    b = entropy(Image(relabel[img], value_range="uint8"))
    assert a == pytest.approx(b, abs=1e-12)


def test_diff_identical_is_zero():
    pre = {"qi": [1.0, 2.0, 3.0], "tenengrad": [0.5, 0.7, 0.1]}
    rep = metric_diff_report(pre, pre)
    for m in rep.metrics:
        assert np.all(m.per_frame_diffs == 0)


def test_diff_lower_better_inverted():
    rep = metric_diff_report({"niqe": [5.0, 6.0]}, {"niqe": [4.0, 5.0]})
    assert METRIC_ORIENTATION["niqe"] == LOWER_BETTER
    assert rep.get("niqe").mean > 0


def test_diff_summary_consistency_and_affine_invariance():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=15), rng.normal(0.5, 1, 15)
    m = metric_diff_report({"cnr": a}, {"cnr": b}).get("cnr")
    assert m.mean == float(np.mean(m.per_frame_diffs)) and m.median == float(np.median(m.per_frame_diffs))
    s = metric_diff_report({"cnr": 3 * a + 7}, {"cnr": 3 * b + 7}).get("cnr")
    assert np.allclose(s.per_frame_diffs, m.per_frame_diffs, atol=1e-12)


def test_diff_zero_spread_skipped():
    rep = metric_diff_report({"entropy": [2.0, 2.0]}, {"entropy": [2.0, 2.0]})
    assert rep.metrics == [] and rep.skipped == [{"name": "entropy", "reason": "zero_pooled_std"}]


def test_diff_csv_schema(tmp_path):
    rep = metric_diff_report({"qi": [1, 2], "cnr": [3, 4]}, {"qi": [2, 3], "cnr": [3, 5]})
    rep.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "metric,median,mean,std"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["qi", "cnr"]
