import json
from pathlib import Path

import numpy as np
import pytest

from dronesr.analysis import radial_psd
from dronesr.errors import InvalidInputError
from dronesr.geometry import Homography, apply_homography
from dronesr.imgio import read_image
from dronesr.registration import load_manifest
from dronesr.synth import (SynthSpec, generate_dataset, load_ground_truth,
                           multiscale_texture, sigma_for_altitude)


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


# ---------------------------------------------------------------- SynthSpec

def test_spec_rejects_bad_hr_size():
    with pytest.raises(InvalidInputError):
        SynthSpec(hr_size=(700, 1024))


def test_spec_rejects_unknown_altitude():
    with pytest.raises(InvalidInputError):
        SynthSpec(altitudes=(10, 60))


def test_spec_rejects_bad_sigma_order():
    with pytest.raises(InvalidInputError):
        SynthSpec(sigma_min=2.0, sigma_max=1.0)


def test_sigma_for_altitude_monotone():
    spec = SynthSpec(sigma_min=0.5, sigma_max=2.0)
    sigmas = [sigma_for_altitude(spec, a) for a in spec.altitudes]
    assert sigmas[0] == 0.5 and sigmas[-1] == 2.0
    assert all(b > a for a, b in zip(sigmas, sigmas[1:]))


# --------------------------------------------------------- multiscale_texture

def test_texture_range_and_determinism():
    a = multiscale_texture(64, 64, np.random.default_rng(7))
    b = multiscale_texture(64, 64, np.random.default_rng(7))
    assert a.data.min() == 0.0 and a.data.max() == 1.0
    np.testing.assert_array_equal(a.data, b.data)


# ------------------------------------------------------------ generate_dataset

def test_dataset_deterministic(tmp_path):
    spec = SynthSpec(n_scenes=1, altitudes=(10, 140), hr_size=(400, 500),
                     margin=100, noise_std=0.01, raw=True, seed=11)
    generate_dataset(spec, tmp_path / "a")
    generate_dataset(spec, tmp_path / "b")
    ta, tb = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert ta.keys() == tb.keys() and len(ta) > 0
    for name in ta:
        # manifest rows embed the output directory; normalize it away
        va = ta[name].replace(str(tmp_path / "a").encode(), b"ROOT")
        vb = tb[name].replace(str(tmp_path / "b").encode(), b"ROOT")
        assert va == vb, name


def test_dataset_layout_and_manifest(tmp_path):
    spec = SynthSpec(n_scenes=2, altitudes=(10, 80), hr_size=(400, 500),
                     margin=100, seed=1)
    manifest_path, gt_path = generate_dataset(spec, tmp_path)
    scenes = load_manifest(manifest_path)
    assert len(scenes) == 4  # 2 scenes x 2 altitudes
    for sc in scenes:
        assert Path(sc.hr_path).exists()
        assert len(sc.lr_burst_paths) == 7
        assert all(Path(p).exists() for p in sc.lr_burst_paths)
    gt = load_ground_truth(gt_path)
    assert set(gt["scenes"]) == {"scene_000", "scene_001"}


def test_zero_jitter_zero_blur_identity_geometry(tmp_path):
    spec = SynthSpec(n_scenes=1, altitudes=(10,), hr_size=(400, 500),
                     margin=100, jitter_px=0.0, jitter_persp=0.0,
                     sigma_min=0.0, sigma_max=0.0, color_drift=0.0,
                     cheap_burst=False, seed=2)
    manifest_path, gt_path = generate_dataset(spec, tmp_path)
    gt = load_ground_truth(gt_path)
    scene = gt["scenes"]["scene_000"]
    hy, hx = scene["hr_origin"]
    s = 50.0 / 9.0
    expected = np.array([[s, 0.0, 0.5 * s - 0.5 - hx],
                         [0.0, s, 0.5 * s - 0.5 - hy],
                         [0.0, 0.0, 1.0]])
    for h in scene["altitudes"]["10"]["lr_to_hr"]:
        m = np.array(h)
        m /= m[2, 2]
        # zero jitter leaves only the exact scale + HR-crop shift
        np.testing.assert_allclose(m[0, 0], s, atol=1e-9)
        np.testing.assert_allclose(m[:2, 2], expected[:2, 2], atol=1e-6)
        np.testing.assert_allclose(m[2, :2], 0.0, atol=1e-12)


def test_ground_truth_maps_lr_onto_hr(tmp_path):
    """Sampling the LR frame through the stored homography matches the HR crop."""
    spec = SynthSpec(n_scenes=1, altitudes=(10,), hr_size=(400, 500),
                     margin=100, jitter_px=0.0, jitter_persp=0.0,
                     sigma_min=0.0, sigma_max=0.0, color_drift=0.0,
                     cheap_burst=False, seed=4)
    manifest_path, gt_path = generate_dataset(spec, tmp_path)
    scene = load_manifest(manifest_path)[0]
    gt = load_ground_truth(gt_path)
    h = Homography(np.array(
        gt["scenes"][scene.scene_id]["altitudes"]["10"]["lr_to_hr"][0]))
    lr = read_image(scene.lr_burst_paths[0])
    hr = read_image(scene.hr_path)
    # LR grid points that land strictly inside the HR frame
    ys, xs = np.mgrid[10:60:10, 10:80:10]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    proj = apply_homography(h, pts)
    inside = ((proj[:, 0] > 10) & (proj[:, 0] < hr.width - 10)
              & (proj[:, 1] > 10) & (proj[:, 1] < hr.height - 10))
    assert inside.sum() >= 10
    # the LR pixel is a x50/9 bicubic average around the projected HR point;
    # on smooth texture it stays within a tight band of the HR value there
    lr_vals = lr.data[0, pts[inside, 1].astype(int), pts[inside, 0].astype(int)]
    hr_vals = hr.data[0, np.round(proj[inside, 1]).astype(int),
                      np.round(proj[inside, 0]).astype(int)]
    assert np.corrcoef(lr_vals, hr_vals)[0, 1] > 0.95


def test_psd_ordered_by_altitude(tmp_path):
    spec = SynthSpec(n_scenes=2, altitudes=(10, 140), hr_size=(400, 500),
                     margin=100, sigma_min=0.5, sigma_max=3.0, seed=6)
    manifest_path, _ = generate_dataset(spec, tmp_path)
    scenes = load_manifest(manifest_path)
    by_alt = {}
    for sc in scenes:
        by_alt.setdefault(sc.altitude, []).append(
            read_image(sc.lr_burst_paths[0]))
    p_low = radial_psd(by_alt[10])
    p_high = radial_psd(by_alt[140])
    sel = p_low.bin_centers > 0.1
    assert np.all(p_high.log_power[sel] < p_low.log_power[sel])


def test_corrupt_patches_recorded(tmp_path):
    spec = SynthSpec(n_scenes=1, altitudes=(10,), hr_size=(400, 500),
                     margin=100, corrupt_patches=2, seed=8)
    manifest_path, gt_path = generate_dataset(spec, tmp_path)
    gt = load_ground_truth(gt_path)
    rects = gt["scenes"]["scene_000"]["altitudes"]["10"]["corrupt_rects"]
    assert len(rects) == 2
    scene = load_manifest(manifest_path)[0]
    lr = read_image(scene.lr_burst_paths[0])
    for cy, cx, ch, cw in rects:
        block = lr.data[:, cy:cy + ch, cx:cx + cw]
        assert block.std(axis=(1, 2)).max() < 1e-6  # flat stamped occluder


def test_cheap_burst_frames_share_content(tmp_path):
    spec = SynthSpec(n_scenes=1, altitudes=(10,), hr_size=(400, 500),
                     margin=100, cheap_burst=True, seed=9)
    manifest_path, gt_path = generate_dataset(spec, tmp_path)
    scene = load_manifest(manifest_path)[0]
    gt = load_ground_truth(gt_path)
    homs = gt["scenes"]["scene_000"]["altitudes"]["10"]["lr_to_hr"]
    f0 = read_image(scene.lr_burst_paths[0])
    h0 = np.array(homs[0])
    for k in (1, 3, 6):
        fk = read_image(scene.lr_burst_paths[k])
        hk = np.array(homs[k])
        # frame k is frame 0 shifted by an integer (dy, dx); the homographies
        # differ by exactly that translation: hk = h0 @ T(dx, dy)
        t = np.linalg.inv(h0) @ hk
        t /= t[2, 2]
        dy, dx = t[1, 2], t[0, 2]
        assert abs(dy - round(dy)) < 1e-9 and abs(dx - round(dx)) < 1e-9
        dy, dx = int(round(dy)), int(round(dx))
        h, w = f0.data.shape[1:]
        y0s, y1s = max(0, dy), min(h, h + dy)
        x0s, x1s = max(0, dx), min(w, w + dx)
        np.testing.assert_allclose(
            fk.data[:, y0s - dy:y1s - dy, x0s - dx:x1s - dx],
            f0.data[:, y0s:y1s, x0s:x1s], atol=1.0 / 255.0)
