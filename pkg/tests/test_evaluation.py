import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctstandard import evaluation as ev
from ctstandard.errors import ShapeError, ValidationError

from oracles import naive_ssim

vec = st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20)


def test_error_rate_examples():
    assert ev.error_rate(85, 100) == 15.0 and not ev.is_reproducible(85, 100)
    assert ev.error_rate(3.0, 3.0) == 0.0
    assert ev.error_rate(1.0, 0.0) >= 1e12 and ev.is_degenerate(0.0)


def test_error_rate_asymmetric():
    assert ev.error_rate(50, 100) != ev.error_rate(100, 50)


def test_ccc_examples():
    assert ev.ccc([1, 2, 3], [1, 2, 3]) == 1.0
    assert ev.ccc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)
    assert ev.ccc([1, 2, 3], [2, 3, 4]) == pytest.approx(4 / 7, abs=1e-12)
    assert ev.ccc([2, 2], [2, 2]) == 1.0
    assert ev.ccc([2, 2], [1, 3]) == 0.0
    with pytest.raises(ValidationError):
        ev.ccc([1, 2], [1, 2, 3])


@given(vec, st.data())
def test_ccc_properties(s, data):
    t = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=len(s), max_size=len(s)))
    c = ev.ccc(s, t)
    assert c == pytest.approx(ev.ccc(t, s), abs=1e-12)
    assert abs(c) <= 1 + 1e-12
    a, b = 2.5, -7.0
    if np.std(s) > 1e-3 and np.std(t) > 1e-3:
        shifted = ev.ccc([a * x + b for x in s], [a * x + b for x in t])
        assert shifted == pytest.approx(c, abs=1e-9)


def test_class_ccc():
    fv = {"GLCM_a": 1.0, "GLCM_b": 2.0, "ID_x": 3.0}
    assert ev.class_ccc(fv, dict(fv), "GLCM") == 1.0
    with pytest.raises(ValidationError):
        ev.class_ccc(fv, fv, "ID")
    with pytest.raises(ValidationError):
        ev.class_ccc({"GLCM_a": 1.0}, fv, "GLCM")


def test_psnr_and_ssim_basics():
    rng = np.random.default_rng(0)
    x = rng.random((16, 16))
    assert ev.psnr(x, x) == math.inf and ev.ssim(x, x) == 1.0
    zeros, ones = np.zeros((16, 16)), np.ones((16, 16))
    assert ev.psnr(zeros, ones) == 0.0
    with pytest.raises(ShapeError):
        ev.ssim(x, x[:8])


def test_ssim_oracle_and_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(5):
        x, y = rng.random((24, 24)), rng.random((24, 24))
        assert ev.ssim(x, y) == pytest.approx(naive_ssim(x, y), abs=1e-9)
        assert ev.ssim(x, y) == pytest.approx(ev.ssim(y, x), abs=1e-12)
        assert ev.ssim(x, y) <= 1.0


def _fv(vals):
    return {f"{c}_{i}": v for c in ("GOH", "GLCM", "GLRLM", "ID", "IH", "NID") for i, v in enumerate(vals)}


def test_repro_curve_identical():
    fv = _fv([1.0, 2.0, 3.0])
    r = ev.repro_curve([(fv, dict(fv))])
    assert all(c == r.total for t, c in zip(r.thresholds, r.counts) if t > 0)
    assert r.count_at(0.0) == 0
    assert all(m == 1.0 for m, _ in r.class_ccc.values())


def test_repro_curve_monotone_and_averaged():
    t = _fv([10.0, 20.0, 30.0])
    s1 = {k: v * 1.10 for k, v in t.items()}
    s2 = {k: v * 1.30 for k, v in t.items()}
    r = ev.repro_curve([(s1, t), (s2, t)])
    assert np.all(np.diff(r.counts) >= 0)
    # mean error is 20% for every feature
    assert r.count_at(0.20) == 0 and r.count_at(0.21) == r.total


def test_write_report(tmp_path):
    fv = _fv([1.0, 2.0])
    r = ev.repro_curve([(fv, fv)])
    ev.write_report(r, tmp_path)
    assert (tmp_path / "repro_curve.csv").read_text().splitlines()[0] == "threshold,count"
    assert len((tmp_path / "repro_curve.csv").read_text().splitlines()) == 52
    assert (tmp_path / "ccc_by_class.csv").read_text().splitlines()[0] == "class,mean,std"
    assert (tmp_path / "errors.csv").read_text().splitlines()[0] == "feature,mean_error"
