import numpy as np
import pytest

from pyrabow.dataset import GrayImage, write_pgm
from pyrabow.features import (
    DenseGridSpec,
    FeatureError,
    Keypoint,
    dense_keypoints,
    extract_dense,
    extract_paths,
    image_gradients,
    read_descriptor_cache,
    sift_descriptor,
    write_descriptor_cache,
)


def test_grid_100x100_step10_patch16():
    kps = dense_keypoints(100, 100, DenseGridSpec(step=10, patch=16))
    assert len(kps) == 81
    expected = np.arange(8, 89, 10)
    np.testing.assert_array_equal(np.unique(kps[:, 0]), expected)
    np.testing.assert_array_equal(np.unique(kps[:, 1]), expected)
    # row-major: x varies fastest
    assert kps[1, 0] == 18 and kps[1, 1] == 8


def test_grid_too_small_is_empty():
    assert dense_keypoints(10, 10, DenseGridSpec(patch=16)).shape == (0, 3)


def test_grid_multiscale_is_union():
    spec = DenseGridSpec(step=8, patch=16, scales=(1.0, 2.0))
    one = dense_keypoints(200, 200, DenseGridSpec(8, 16, (1.0,)))
    two = dense_keypoints(200, 200, DenseGridSpec(8, 16, (2.0,)))
    both = dense_keypoints(200, 200, spec)
    assert len(both) == len(one) + len(two)
    assert (both[: len(one), 2] == 1.0).all() and (both[len(one):, 2] == 2.0).all()


def test_grid_spec_validation():
    with pytest.raises(FeatureError):
        DenseGridSpec(step=0)
    with pytest.raises(FeatureError):
        DenseGridSpec(scales=())


def test_constant_image_zero_gradient():
    g = image_gradients(GrayImage(np.full((12, 9), 0.4)))
    assert np.all(g.magnitude == 0)


def test_ramp_gradient():
    w = 20
    img = np.tile(np.arange(w) / w, (15, 1))
    g = image_gradients(GrayImage(img))
    inner = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(g.magnitude[inner], 1.0 / w, atol=1e-12)
    ori = g.orientation[inner]
    assert np.all(np.minimum(ori, 2 * np.pi - ori) < 1e-9)


def test_gradient_rejects_thin_image():
    with pytest.raises(FeatureError):
        image_gradients(GrayImage(np.zeros((1, 5))))


def test_constant_patch_zero_descriptor():
    g = image_gradients(GrayImage(np.full((32, 32), 0.7)))
    assert np.all(sift_descriptor(g, Keypoint(16, 16, 1.0), 16) == 0)


def test_descriptor_unit_norm_and_clip(rng):
    g = image_gradients(GrayImage(rng.random((40, 40))))
    for x, y in [(8, 8), (20, 17), (31, 32)]:
        d = sift_descriptor(g, Keypoint(x, y, 1.0), 16)
        assert d.shape == (128,)
        assert abs(np.linalg.norm(d) - 1.0) < 1e-6
        assert d.min() >= 0


def test_clip_then_renorm_procedure(rng):
    from pyrabow._native import _fallback

    raw = rng.random((5, 128)) ** 8  # heavy-tailed so clipping bites
    out = _fallback._normalize_descriptors(raw.copy())
    for h, d in zip(raw, out):
        clipped = np.minimum(h / np.linalg.norm(h), 0.2)
        assert clipped.max() <= 0.2 + 1e-6
        assert (h / np.linalg.norm(h)).max() > 0.2
        np.testing.assert_allclose(d, clipped / np.linalg.norm(clipped), atol=1e-12)
        assert abs(np.linalg.norm(d) - 1.0) < 1e-6


def test_patch_outside_image_errors():
    g = image_gradients(GrayImage(np.zeros((20, 20))))
    with pytest.raises(FeatureError):
        sift_descriptor(g, Keypoint(3, 10, 1.0), 16)


def _flip_permutation():
    # cell (row i, col j) -> (i, 3 - j); orientation bin b -> (4 - b) mod 8
    perm = np.empty(128, dtype=np.int64)
    for i in range(4):
        for j in range(4):
            for b in range(8):
                perm[(i * 4 + j) * 8 + b] = (i * 4 + (3 - j)) * 8 + (4 - b) % 8
    return perm


def test_horizontal_flip_permutes_descriptor(rng):
    patch = rng.random((16, 16))
    d = sift_descriptor(image_gradients(GrayImage(patch)), Keypoint(8, 8, 1.0), 16)
    f = sift_descriptor(image_gradients(GrayImage(patch[:, ::-1].copy())), Keypoint(8, 8, 1.0), 16)
    np.testing.assert_allclose(f[_flip_permutation()], d, atol=1e-9)


def test_descriptor_brightness_and_contrast_invariance(rng):
    img = rng.random((24, 24))
    a = sift_descriptor(image_gradients(GrayImage(img)), Keypoint(12, 12, 1.0), 16)
    b = sift_descriptor(image_gradients(GrayImage(0.5 * img + 0.2)), Keypoint(12, 12, 1.0), 16)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_extract_dense_counts_and_determinism(rng):
    img = GrayImage(rng.random((100, 100)))
    spec = DenseGridSpec(step=10, patch=16)
    a = extract_dense(img, spec)
    b = extract_dense(img, spec)
    assert a.descriptors.shape == (81, 128)
    assert a.descriptors.tobytes() == b.descriptors.tobytes()
    empty = extract_dense(GrayImage(rng.random((10, 10))), spec)
    assert len(empty) == 0 and empty.descriptors.shape == (0, 128)


def test_extract_dense_matches_per_keypoint(rng):
    img = GrayImage(rng.random((50, 60)))
    spec = DenseGridSpec(step=9, patch=16, scales=(1.0, 1.5))
    out = extract_dense(img, spec)
    g = image_gradients(img)
    for row, d in zip(out.keypoints[::7], out.descriptors[::7]):
        kp = Keypoint(*row)
        np.testing.assert_allclose(sift_descriptor(g, kp, spec.patch_size(kp.scale)), d, atol=1e-15)


def test_descriptor_cache_roundtrip(tmp_path, rng):
    paths = []
    for i in range(3):
        p = tmp_path / f"{i}.pgm"
        write_pgm(p, rng.random((40 + 8 * i, 48)))
        paths.append(str(p))
    spec = DenseGridSpec(step=8, patch=16)
    serial = extract_paths(paths, spec, threads=1)
    threaded = extract_paths(paths, spec, threads=3)
    for a, b in zip(serial, threaded):
        assert a.descriptors.tobytes() == b.descriptors.tobytes()
    cache = tmp_path / "d.bvwd"
    write_descriptor_cache(cache, list(enumerate(serial)), spec)
    assert cache.read_bytes()[:4] == b"BVWD"
    back = read_descriptor_cache(cache)
    for i, d in enumerate(serial):
        assert (back[i].width, back[i].height) == (d.width, d.height)
        assert back[i].descriptors.tobytes() == d.descriptors.tobytes()
        assert back[i].keypoints.tobytes() == d.keypoints.tobytes()
