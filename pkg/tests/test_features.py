import numpy as np
import pytest

from dronesr.errors import InvalidInputError
from dronesr.features import (SiftParams, compute_descriptors,
                              detect_and_describe, detect_keypoints,
                              match_descriptors)
from dronesr.imgcore import Image

from conftest import texture


def _blob(h, w, cy, cx, sigma):
    yy, xx = np.mgrid[0:h, 0:w]
    return Image(np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2)
                        / (2 * sigma**2))[None])


# ---------------------------------------------------------- detect_keypoints

def test_detect_constant_image_empty():
    assert detect_keypoints(Image(np.full((1, 64, 64), 0.5))) == []


def test_detect_too_small():
    with pytest.raises(InvalidInputError):
        detect_keypoints(Image(np.zeros((1, 16, 16))))


def test_detect_gaussian_blob_center():
    img = _blob(128, 128, 64.0, 64.0, 3.0)
    kps = detect_keypoints(img)
    assert kps, "no keypoints on a clear blob"
    d = min(np.hypot(kp.x - 64.0, kp.y - 64.0) for kp in kps)
    assert d < 2.0


def test_detect_rotation_count_stability(tex):
    img = Image(tex(96, 96, seed=9).data[:1])
    rot = Image(np.rot90(img.data[0]).copy()[None])
    n1 = len(detect_keypoints(img))
    n2 = len(detect_keypoints(rot))
    assert n1 > 0
    assert abs(n1 - n2) <= 0.1 * max(n1, n2)


def test_detect_determinism(tex):
    img = Image(tex(80, 80, seed=10).data[:1])
    a = detect_keypoints(img)
    b = detect_keypoints(img)
    assert a == b


def test_detect_bounds_and_scale(tex):
    img = Image(tex(72, 90, seed=11).data[:1])
    for kp in detect_keypoints(img):
        assert 0 <= kp.x < 90 and 0 <= kp.y < 72
        assert kp.scale > 0


def test_detect_translation_equivariance(tex):
    img = Image(tex(96, 96, seed=12).data[:1])
    dy, dx = 4, 7
    shifted = Image(np.roll(img.data[0], (dy, dx), axis=(0, 1))[None])
    kps = detect_keypoints(img)
    kps_s = detect_keypoints(shifted)
    interior = [k for k in kps if 20 < k.x < 70 and 20 < k.y < 70]
    assert interior
    matched = 0
    for k in interior:
        best = min(np.hypot(s.x - k.x - dx, s.y - k.y - dy) for s in kps_s)
        matched += best <= 0.5
    assert matched >= 0.8 * len(interior)


# ------------------------------------------------------- compute_descriptors

def test_descriptor_unit_norm(tex):
    img = Image(tex(96, 96, seed=13).data[:1])
    kps, descs = detect_and_describe(img)
    assert len(kps) == descs.shape[0] and descs.shape[1] == 128
    np.testing.assert_allclose(np.linalg.norm(descs, axis=1), 1.0, atol=1e-6)


def test_descriptor_determinism(tex):
    img = Image(tex(96, 96, seed=14).data[:1])
    kps = detect_keypoints(img)
    d1, k1 = compute_descriptors(img, kps)
    d2, k2 = compute_descriptors(img, kps)
    assert k1 == k2
    np.testing.assert_array_equal(d1, d2)


def test_descriptor_brightness_shift_invariance(tex):
    base = Image(tex(96, 96, seed=15).data[:1] * 0.6)
    bright = Image(base.data + 0.1)
    kps = detect_keypoints(base)
    d1, k1 = compute_descriptors(base, kps)
    d2, k2 = compute_descriptors(bright, kps)
    assert k1 == k2
    dist = np.linalg.norm(d1 - d2, axis=1)
    assert dist.max() < 0.1


# --------------------------------------------------------- match_descriptors

def test_match_self(tex):
    img = Image(tex(96, 96, seed=16).data[:1])
    _, descs = detect_and_describe(img)
    assert descs.shape[0] >= 5
    matches = match_descriptors(descs, descs, ratio=0.75)
    for m in matches:
        assert m.src_idx == m.dst_idx
        assert m.distance < 1e-6  # zero up to expanded-form roundoff
    # all-but-near-duplicate descriptors self-match
    assert len(matches) >= 0.5 * descs.shape[0]


def test_match_random_descriptors_rare(rng):
    a = rng.normal(size=(100, 128))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = rng.normal(size=(100, 128))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    matches = match_descriptors(a, b, ratio=0.75)
    assert len(matches) < 10


def test_match_recovers_shuffle(rng):
    descs = rng.normal(size=(50, 128))
    descs /= np.linalg.norm(descs, axis=1, keepdims=True)
    perm = rng.permutation(50)
    matches = match_descriptors(descs, descs[perm], ratio=0.9)
    assert len(matches) == 50
    for m in matches:
        assert perm[m.dst_idx] == m.src_idx


def test_match_empty_inputs():
    assert match_descriptors(np.zeros((0, 128)), np.zeros((5, 128))) == []
    assert match_descriptors(np.zeros((5, 128)), np.zeros((0, 128))) == []


def test_match_bad_ratio(rng):
    d = rng.normal(size=(4, 128))
    with pytest.raises(InvalidInputError):
        match_descriptors(d, d, ratio=1.5)
