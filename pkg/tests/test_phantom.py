import numpy as np
import pytest

from ctstandard import phantom, radiomics
from ctstandard.errors import ValidationError
from ctstandard.phantom import KernelSpec


def test_identity_kernel():
    img = phantom.gen_ct_phantom(3)[0]
    k = KernelSpec("id", "sharp", 0.5, boost=0.0, noise_hu=0.0)
    assert np.allclose(phantom.apply_kernel(img, k, 0), img, atol=1e-3)


def test_kernel_validation():
    with pytest.raises(ValidationError):
        KernelSpec("x", "smooth", 0.0)
    with pytest.raises(ValidationError):
        KernelSpec("x", "blurry", 0.2)


def test_smooth_lowers_gradient_and_sharp_adds_noise():
    img = phantom.gen_ct_phantom(4)[0]
    smooth = phantom.apply_kernel(img, phantom.SMOOTH_KERNEL, 1)
    sharp = phantom.apply_kernel(img, phantom.SHARP_KERNEL, 1)
    grad = lambda x: np.hypot(*np.gradient(x.astype(np.float64))).mean()
    assert grad(smooth) < grad(img)
    flat = np.zeros((64, 64), np.float32)
    roi = (slice(16, 48), slice(16, 48))
    assert phantom.apply_kernel(flat, phantom.SHARP_KERNEL, 2)[roi].std() > \
        phantom.apply_kernel(flat, phantom.SMOOTH_KERNEL, 2)[roi].std()


def test_mean_hu_preserved():
    img = phantom.gen_ct_phantom(5)[0]
    for k in (phantom.SMOOTH_KERNEL, phantom.SHARP_KERNEL):
        assert abs(phantom.apply_kernel(img, k, 3).mean() - img.mean()) <= 5.0


def test_paired_dataset():
    ds = phantom.gen_paired_dataset(0, 10)
    assert len(ds) == 10
    for s in ds:
        assert s.a.shape == s.b.shape == (128, 128)
        assert not np.array_equal(s.a, s.b)
        assert len(s.tumor_rois) == 3 and all(m.sum() >= 16 for m in s.tumor_rois)
    with pytest.raises(ValidationError):
        phantom.gen_paired_dataset(0, 0)


def test_pairing_is_nontrivial():
    ds = phantom.gen_paired_dataset(9, 10)
    hits = []
    for s in ds:
        for m in s.tumor_rois:
            ca = radiomics.extract_features(s.a, m)["GLCM_contrast"]
            cb = radiomics.extract_features(s.b, m)["GLCM_contrast"]
            hits.append(abs(ca - cb) / abs(cb) > 0.05)
    assert np.mean(hits) >= 0.8


def test_masks_align_with_tumor_intensity():
    from scipy import ndimage

    s = phantom.gen_paired_dataset(6, 1)[0]
    for m in s.tumor_rois:
        inner = ndimage.binary_erosion(m, iterations=2)
        for img in (s.a, s.b):
            assert img[inner].mean() > -400  # soft tissue, not lung


def test_determinism():
    a = phantom.gen_paired_dataset(21, 3)
    b = phantom.gen_paired_dataset(21, 3)
    for x, y in zip(a, b):
        assert x.a.tobytes() == y.a.tobytes() and x.b.tobytes() == y.b.tobytes()


def test_dataset_roundtrip(tmp_path):
    ds = phantom.gen_paired_dataset(1, 2)
    path = phantom.write_dataset(ds, tmp_path)
    assert path.endswith("manifest.json")
    back = phantom.read_dataset(tmp_path)
    for x, y in zip(ds, back):
        assert np.array_equal(x.a, y.a) and np.array_equal(x.b, y.b)
        assert all(np.array_equal(m, n) for m, n in zip(x.tumor_rois, y.tumor_rois))


def test_uk_phantom():
    m = phantom.gen_uk_phantom(192)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert 0.05 <= m.mean() <= 0.30
    assert np.array_equal(m, phantom.gen_uk_phantom(192))


def test_speckle_identity_and_validation():
    flow = phantom.gen_uk_phantom(64)
    stack = phantom.simulate_gated_speckle(flow, 3, depth_blur=0, speckle_shape=None, read_noise=0)
    assert all(np.array_equal(f, flow) for f in stack)
    with pytest.raises(ValidationError):
        phantom.simulate_gated_speckle(flow, 0)


def test_gate_averaging_reduces_residual():
    flow = 0.2 + 0.8 * phantom.gen_uk_phantom(96)
    stack = phantom.simulate_gated_speckle(flow, 80, depth_blur=0, seed=2)
    res = lambda n: ((stack[:n].mean(0) - flow) ** 2).mean()
    assert res(80) < res(10)
    again = phantom.simulate_gated_speckle(flow, 80, depth_blur=0, seed=2)
    assert np.array_equal(stack, again)


def test_flow_gain_lowers_contrast_in_flow():
    flow = np.zeros((64, 64))
    flow[:, 32:] = 1.0
    flow += 0.2
    stack = phantom.simulate_gated_speckle(flow, 20, depth_blur=0, read_noise=0, flow_gain=4.0)
    k = stack.std(axis=0) / stack.mean(axis=0)
    assert k[:, 40:].mean() < k[:, :24].mean()
