import numpy as np
import pytest

from dronesr.errors import InvalidInputError, UndefinedCorrelationError
from dronesr.imgcore import Image
from dronesr.metrics import ncc, psnr_y, ssim_y

from conftest import texture


def _gray(arr):
    return Image(np.asarray(arr)[None])


# -------------------------------------------------------------------- PSNR

def test_psnr_exact_match(tex):
    img = tex(32, 32)
    res = psnr_y(img, img)
    assert res.exact_match
    assert res.db == 100.0


def test_psnr_uniform_unit_difference():
    a = _gray(np.full((40, 40), 100.0 / 255.0))
    b = _gray(np.full((40, 40), 101.0 / 255.0))
    assert abs(psnr_y(a, b).db - 48.1308) < 1e-3


def test_psnr_gaussian_noise_sigma5(rng):
    ref = np.full((256, 256), 128.0 / 255.0)
    noisy = ref + rng.normal(0, 5.0, ref.shape) / 255.0
    db = psnr_y(_gray(noisy), _gray(ref), border_shave=0).db
    assert abs(db - 34.15) < 0.1


def test_psnr_shape_mismatch(tex):
    with pytest.raises(InvalidInputError):
        psnr_y(tex(16, 16), tex(16, 17))


def test_psnr_shave_invariance(tex):
    a, b = tex(48, 48, seed=1), tex(48, 48, seed=2)
    direct = psnr_y(a, b, border_shave=6).db
    pre = Image(a.data[:, 2:-2, 2:-2]), Image(b.data[:, 2:-2, 2:-2])
    assert abs(psnr_y(*pre, border_shave=4).db - direct) < 1e-12


# -------------------------------------------------------------------- SSIM

def test_ssim_self_is_one(tex):
    img = tex(40, 40)
    assert abs(ssim_y(img, img) - 1.0) < 1e-9


def test_ssim_symmetric(tex):
    a, b = tex(40, 40, seed=1), tex(40, 40, seed=2)
    assert abs(ssim_y(a, b) - ssim_y(b, a)) < 1e-12


def test_ssim_inverted_binary_negative(rng):
    pat = (rng.uniform(0, 1, (48, 48)) > 0.5).astype(float)
    assert ssim_y(_gray(1.0 - pat), _gray(pat), border_shave=0) < 0.0


def test_ssim_tiny_noise_high(rng, tex):
    ref = tex(64, 64, seed=4)
    noisy = Image(np.clip(ref.data + rng.normal(0, 1.0 / 255.0, ref.data.shape),
                          0, 1))
    assert ssim_y(noisy, ref) > 0.98


def test_ssim_too_small():
    with pytest.raises(InvalidInputError):
        ssim_y(_gray(np.zeros((8, 8))), _gray(np.zeros((8, 8))), border_shave=0)


# --------------------------------------------------------------------- NCC

def test_ncc_self(tex):
    y = Image(tex(20, 20).data[:1])
    assert abs(ncc(y, y) - 1.0) < 1e-12


def test_ncc_negated_plus_constant(tex):
    a = Image(tex(20, 20).data[:1])
    b = Image(np.clip(-a.data + 1.0, 0, 1))
    assert abs(ncc(a, b) + 1.0) < 1e-12


def test_ncc_independent_noise(rng):
    hits = 0
    for _ in range(20):
        a = Image(rng.uniform(0, 1, (1, 180, 180)))
        b = Image(rng.uniform(0, 1, (1, 180, 180)))
        hits += abs(ncc(a, b)) < 0.05
    assert hits == 20


def test_ncc_affine_invariance(tex, rng):
    a = Image(tex(24, 24).data[:1])
    b = Image(rng.uniform(0, 1, (1, 24, 24)))
    scaled = Image(np.clip(0.5 * a.data + 0.2, 0, 1))
    assert abs(ncc(a, b) - ncc(scaled, b)) < 1e-10


def test_ncc_zero_variance():
    with pytest.raises(UndefinedCorrelationError):
        ncc(Image(np.full((1, 8, 8), 0.5)), Image(np.zeros((1, 8, 8))))
