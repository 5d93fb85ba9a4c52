"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

The report lines are written with capture disabled so they reach the real
stdout and appear once per criterion in any run log.
"""

import os
import sys
import time

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from dronesr.aanet import (NetworkConfig, Sample, aafcnn_forward, forward_batch,
                           gradient_check, init_dab_params, init_params, train)
from dronesr.aanet import layers as L
from dronesr.aanet.model import (_dab_forward, _dab_backward, _dal_forward,
                                 _dal_backward, _encode_forward,
                                 _encode_backward, backward_batch,
                                 upsample_head_forward, upsample_head_backward)
from dronesr.analysis import estimate_blur_kernel, radial_psd
from dronesr.geometry import (Homography, apply_homography, ransac_homography,
                              symmetric_transfer_error)
from dronesr.imgcore import Image, resize_bicubic
from dronesr.imgio import read_image
from dronesr.metrics import psnr_y, ssim_y
from dronesr.registration import (RegistrationConfig, extract_patches,
                                  load_manifest, match_fov)
from dronesr.registration import _affine
from dronesr.features import SiftParams
from dronesr.synth import SynthSpec, generate_dataset, load_ground_truth, multiscale_texture


_CAPTURE = None


@pytest.fixture(autouse=True)
def _grab_capture(capfd):
    global _CAPTURE
    _CAPTURE = capfd
    yield
    _CAPTURE = None


def _emit(line):
    if _CAPTURE is not None:
        with _CAPTURE.disabled():
            sys.stdout.write(line)
            sys.stdout.flush()
    else:
        sys.stdout.write(line)


def _report(n, ok, detail):
    line = f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}\n"
    _emit(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. geometry oracle: 50 seeded outlier-contaminated problems

def _random_homography(rng):
    theta = rng.uniform(-0.3, 0.3)
    s = rng.uniform(0.8, 1.25)
    tx, ty = rng.uniform(-20, 20, 2)
    px, py = rng.uniform(-1e-4, 1e-4, 2)
    c, sn = np.cos(theta), np.sin(theta)
    return Homography(np.array([[s * c, -s * sn, tx],
                                [s * sn, s * c, ty],
                                [px, py, 1.0]]))


def test_acceptance_1_ransac_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(50):
        rng = np.random.default_rng(1000 + trial)
        h_true = _random_homography(rng)
        src = rng.uniform(0, 200, (100, 2))
        dst = apply_homography(h_true, src)
        dst += rng.normal(0, 0.3, dst.shape)
        out = rng.choice(100, 50, replace=False)
        dst[out] = rng.uniform(0, 200, (50, 2))
        h_est, mask = ransac_homography(src, dst, inlier_thresh_px=2.0,
                                        seed=trial)
        clean = np.setdiff1d(np.arange(100), out)
        err = symmetric_transfer_error(
            h_est, src[clean], apply_homography(h_true, src[clean])).mean()
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    ok = worst < 0.5 and elapsed < 5.0
    _report(1, ok, f"worst mean transfer error {worst:.3f} px over 50 problems, "
                   f"{elapsed:.2f} s (< 0.5 px, < 5 s)")


# ---------------------------------------------------------------------------
# 2. end-to-end registration oracle on the synthetic dataset

@pytest.fixture(scope="module")
def big_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_synth")
    spec = SynthSpec(n_scenes=10, hr_size=(1500, 2000), noise_std=0.002, seed=7)
    manifest_path, gt_path = generate_dataset(spec, out)
    return load_manifest(manifest_path), load_ground_truth(gt_path)


def test_acceptance_2_registration_oracle(big_dataset):
    scenes, gt = big_dataset
    cfg = RegistrationConfig(
        fov_size=(270, 360), patch=90, stride=90, refine_margin_px=25,
        patch_sift=SiftParams(max_keypoints=1000, max_octaves=3,
                              contrast_thresh=0.01))
    assert len(scenes) == 100  # 10 scenes x 10 altitudes
    t0 = time.perf_counter()
    residuals = []
    n_valid = n_total = 0
    q = 500  # HR patch side for a 90-px LR patch
    corners = np.array([[0.0, 0.0], [q - 1.0, 0.0], [q - 1.0, q - 1.0],
                        [0.0, q - 1.0]])
    s = 90.0 / q
    for scene in scenes:
        lr = read_image(scene.lr_burst_paths[0])
        hr = read_image(scene.hr_path)
        pair = match_fov(lr, hr, cfg)
        # scale exactness: x50/9 by integer arithmetic
        assert pair.lr_fov.width * 50 == 9 * hr.width
        assert pair.lr_fov.height * 50 == 9 * hr.height
        h_true = Homography(np.array(
            gt["scenes"][scene.scene_id]["altitudes"][str(scene.altitude)]
              ["lr_to_hr"][0])).compose(pair.fov_to_lr)
        for pp in extract_patches(pair, cfg):
            n_total += 1
            n_valid += pp.valid
            top, left = pp.origin
            up_to_fov = _affine(s, s, left + 0.5 * s - 0.5, top + 0.5 * s - 0.5)
            ref = h_true.compose(up_to_fov)
            err = np.linalg.norm(
                apply_homography(pp.local_homography, corners)
                - apply_homography(ref, corners), axis=1).mean()
            residuals.append(err)
    elapsed = time.perf_counter() - t0
    mean_residual = float(np.mean(residuals))
    valid_frac = n_valid / n_total
    ok = mean_residual < 0.5 and valid_frac >= 0.95 and elapsed < 600.0
    _report(2, ok, f"mean residual {mean_residual:.3f} px at HR scale, "
                   f"{valid_frac:.1%} of {n_total} patches pass NCC >= 0.9, "
                   f"{elapsed:.0f} s (< 0.5 px, >= 95%, < 600 s)")


# ---------------------------------------------------------------------------
# 3. blur-kernel estimation oracle

def _blur_pairs(sigma, n=4, size=128, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        hr = Image(rng.uniform(0, 1, (1, size, size)))
        lr = Image(np.clip(gaussian_filter(hr.data[0], sigma, mode="wrap"),
                           0, 1)[None])
        pairs.append((lr, hr))
    return pairs


def test_acceptance_3_kernel_estimation():
    t0 = time.perf_counter()
    k15 = estimate_blur_kernel(_blur_pairs(1.5))
    k30 = estimate_blur_kernel(_blur_pairs(3.0))
    ax = np.arange(k15.support) - k15.support // 2
    g = np.exp(-(ax**2) / (2 * 1.5**2))
    truth = np.outer(g, g)
    truth /= truth.sum()
    rel = np.linalg.norm(k15.weights - truth) / np.linalg.norm(truth)
    m15, m30 = k15.second_moment(), k30.second_moment()
    elapsed = time.perf_counter() - t0
    ok = rel < 0.05 and m30 > m15 and elapsed < 60.0
    _report(3, ok, f"sigma=1.5 kernel rel L2 error {rel:.4f} (< 0.05), "
                   f"second moment {m15:.2f} -> {m30:.2f} for sigma 1.5 -> 3.0, "
                   f"{elapsed:.1f} s (< 60 s)")


# ---------------------------------------------------------------------------
# 4. PSD ordering by altitude + white-noise flatness

def test_acceptance_4_psd_ordering():
    rng = np.random.default_rng(0)
    base = [rng.standard_normal((256, 256)) for _ in range(10)]
    curves = []
    # blur grows with altitude; the ladder stays above the window-leakage floor
    for sigma in (0.5, 1.0, 1.5):
        imgs = [Image(np.clip(0.5 + 0.15 * gaussian_filter(b, sigma, mode="wrap"),
                              0, 1)[None]) for b in base]
        curves.append(radial_psd(imgs))
    sel = curves[0].bin_centers > 0.1
    ordered = all(np.all(hi.log_power[sel] < lo.log_power[sel])
                  for lo, hi in zip(curves, curves[1:]))
    noise = [Image(rng.uniform(0, 1, (1, 512, 512))) for _ in range(50)]
    power = 10.0 ** radial_psd(noise).log_power[1:]
    flat_ratio = float(power.max() / power.min())
    ok = ordered and flat_ratio < 1.5
    _report(4, ok, f"PSD curves pointwise ordered by altitude for f > 0.1: "
                   f"{ordered}; white-noise flatness ratio {flat_ratio:.3f} (< 1.5)")


# ---------------------------------------------------------------------------
# 5. metric fidelity

def test_acceptance_5_metric_fidelity():
    a = Image(np.full((1, 40, 40), 100.0 / 255.0))
    b = Image(np.full((1, 40, 40), 101.0 / 255.0))
    uniform_db = psnr_y(a, b).db
    rng = np.random.default_rng(0)
    ref = np.full((256, 256), 128.0 / 255.0)
    noisy = ref + rng.normal(0, 5.0, ref.shape) / 255.0
    noise_db = psnr_y(Image(noisy[None]), Image(ref[None]), border_shave=0).db
    rng2 = np.random.default_rng(1)
    x = Image(rng2.uniform(0, 1, (3, 48, 48)))
    y = Image(rng2.uniform(0, 1, (3, 48, 48)))
    self_dev = abs(ssim_y(x, x) - 1.0)
    sym_dev = abs(ssim_y(x, y) - ssim_y(y, x))
    ok = (abs(uniform_db - 48.1308) < 1e-3 and abs(noise_db - 34.15) < 0.1
          and self_dev < 1e-9 and sym_dev < 1e-12)
    _report(5, ok, f"uniform-diff PSNR {uniform_db:.4f} dB (48.1308 +/- 1e-3), "
                   f"sigma=5 noise {noise_db:.2f} dB (34.15 +/- 0.1), "
                   f"ssim self-dev {self_dev:.1e}, symmetry dev {sym_dev:.1e}")


# ---------------------------------------------------------------------------
# 6. gradient checks: every layer plus the full network at 8x8

def _projection_check(make_loss, params, n_coords=50, tol=1e-4, atol=1e-10):
    res = gradient_check(make_loss, params, n_coords=n_coords, tol=tol,
                         atol=atol)
    return res


def test_acceptance_6_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    failures = []

    def check(name, loss_fn, params, **kw):
        res = _projection_check(loss_fn, params, **kw)
        if not res.ok:
            failures.append(f"{name}: {res.report()}")

    # fc
    x = rng.normal(size=(2, 5))
    r = rng.normal(size=(2, 4))
    p = {"w": rng.normal(size=(4, 5)), "b": rng.normal(size=4)}

    def fc_loss(p):
        out, cache = L.fc_forward(x, p["w"], p["b"])
        _, gw, gb = L.fc_backward(r, cache)
        return float((out * r).sum()), {"w": gw, "b": gb}
    check("fc", fc_loss, p)

    # conv2d
    xc = rng.normal(size=(1, 3, 6, 6))
    rc = rng.normal(size=(1, 4, 6, 6))
    pc = {"w": rng.normal(size=(4, 3, 3, 3)) * 0.2, "b": rng.normal(size=4) * 0.2}

    def conv_loss(p):
        out, cache = L.conv2d_forward(xc, p["w"], p["b"])
        _, gw, gb = L.conv2d_backward(rc, cache)
        return float((out * rc).sum()), {"w": gw, "b": gb}
    check("conv2d", conv_loss, pc)

    # depth-wise conv with predicted kernels: gradients into feature + kernels
    rd = rng.normal(size=(1, 3, 5, 5))
    pd = {"x": rng.normal(size=(1, 3, 5, 5)), "k": rng.normal(size=(1, 3, 3, 3))}

    def dw_loss(p):
        out, cache = L.depthwise_forward(p["x"], p["k"])
        gx, gk = L.depthwise_backward(rd, cache)
        return float((out * rd).sum()), {"x": gx, "k": gk}
    check("depthwise", dw_loss, pd)

    # channel attention: gradients into feature + weights
    ra = rng.normal(size=(1, 3, 4, 4))
    pa = {"x": rng.normal(size=(1, 3, 4, 4)), "w": rng.uniform(0.2, 0.8, (1, 3))}

    def att_loss(p):
        out, cache = L.scale_forward(p["x"], p["w"])
        gx, gw = L.scale_backward(ra, cache)
        return float((out * ra).sum()), {"x": gx, "w": gw}
    check("attention", att_loss, pa)

    # activations (inputs away from kinks by construction)
    for name, fwd, bwd in (("relu", L.relu_forward, L.relu_backward),
                           ("sigmoid", L.sigmoid_forward, L.sigmoid_backward)):
        rv = rng.normal(size=(3, 7))
        pv = {"x": rng.normal(size=(3, 7))}

        def act_loss(p, fwd=fwd, bwd=bwd, rv=rv):
            out, cache = fwd(p["x"])
            return float((out * rv).sum()), {"x": bwd(rv, cache)}
        check(name, act_loss, pv)

    rl = rng.normal(size=(3, 7))
    pl = {"x": rng.normal(size=(3, 7))}

    def leaky_loss(p):
        out, cache = L.leaky_relu_forward(p["x"])
        return float((out * rl).sum()), {"x": L.leaky_relu_backward(rl, cache)}
    check("leaky_relu", leaky_loss, pl)

    # bicubic tensor resize
    rr = rng.normal(size=(1, 2, 11, 13))
    pr = {"x": rng.normal(size=(1, 2, 5, 6))}

    def resize_loss(p):
        out, cache = L.resize_tensor_forward(p["x"], 11, 13)
        return float((out * rr).sum()), {"x": L.resize_tensor_backward(rr, cache)}
    check("resize", resize_loss, pr)

    # upsample head
    ru = rng.normal(size=(1, 2, 12, 12))
    pu = {"x": rng.normal(size=(1, 2, 4, 4)), "w": rng.normal(size=(2, 2, 3, 3)) * 0.2,
          "b": rng.normal(size=2) * 0.2}

    def head_loss(p):
        out, cache = upsample_head_forward(p["x"], p["w"], p["b"], 3.0)
        gx, gw, gb = upsample_head_backward(ru, cache)
        return float((out * ru).sum()), {"x": gx, "w": gw, "b": gb}
    check("upsample_head", head_loss, pu)

    cfg = NetworkConfig(channels=6, hidden_layers=3, embedding_dim=8)

    # altitude encoder
    pe = init_params(cfg, seed=1, weight_scale=0.3)
    re_ = rng.normal(size=(1, 8))

    def enc_loss(p):
        e, cache = _encode_forward([80.0], p, cfg)
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        _encode_backward(re_, cache, grads)
        return float((e * re_).sum()), grads
    check("encoder", enc_loss, pe)

    # DAL: gradients into params, feature held fixed
    feat = rng.normal(size=(1, 6, 5, 5))
    emb = rng.normal(size=(1, 8))
    rdal = rng.normal(size=(1, 6, 5, 5))
    pdal = init_params(cfg, seed=2, weight_scale=0.3)

    def dal_loss(p):
        out, cache = _dal_forward(feat, emb, p, "dal0.")
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        _dal_backward(rdal, cache, p, "dal0.", grads)
        return float((out * rdal).sum()), grads
    check("dal", dal_loss, pdal)

    # DAB
    pdab = init_dab_params(cfg, seed=3, weight_scale=0.3)
    rdab = rng.normal(size=(1, 6, 5, 5))

    def dab_loss(p):
        out, cache = _dab_forward(feat, emb, p)
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        _dab_backward(rdab, cache, p, grads)
        return float((out * rdab).sum()), grads
    check("dab", dab_loss, pdab)

    # full AA-FCNN at 8x8 (quadratic loss; atol is the FD noise floor of a
    # loss reduced over ~23k pixels -- rel tol still binds above ~1e-4)
    pnet = init_params(cfg, seed=10, zero_final=False, weight_scale=0.05)
    lr8 = rng.uniform(0, 1, (1, 3, 8, 8))
    hr8 = rng.uniform(0, 1, (1, 3) + cfg.out_size(8, 8))

    def net_loss(p):
        out, caches = forward_batch(lr8, [80.0], p, cfg)
        d = out - hr8
        return float(0.5 * np.mean(d * d)), backward_batch(d / d.size, caches, p)
    check("aafcnn", net_loss, pnet, n_coords=200, atol=1e-8)

    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120.0
    _report(6, ok, f"all layers + full network pass FD checks at rel tol 1e-4, "
                   f"{elapsed:.1f} s (< 120 s)"
                   + ("" if not failures else "; FAILURES: " + "; ".join(failures)))


# ---------------------------------------------------------------------------
# 7. conditioning efficacy: altitude model vs frozen-code ablation

ALTS = (10.0, 80.0, 140.0)
SIGMA = {10.0: 1.0, 80.0: 3.0, 140.0: 5.0}  # HR-scale blur per altitude


def _altitude_blur_samples(n_per_alt, seed):
    rng = np.random.default_rng(seed)
    out = []
    for alt in ALTS:
        for _ in range(n_per_alt):
            hr = multiscale_texture(100, 100, rng).data
            blurred = np.stack([gaussian_filter(c, SIGMA[alt], mode="nearest")
                                for c in hr])
            lr = resize_bicubic(Image(blurred), 18, 18).data
            out.append(Sample(lr=np.clip(lr, 0, 1), hr=hr, altitude=alt))
    return out


def test_acceptance_7_conditioning_efficacy():
    t0 = time.perf_counter()
    train_s = _altitude_blur_samples(8, seed=1)
    val_s = _altitude_blur_samples(2, seed=2)
    results = {}
    stores = {}
    for mode in ("altitude", "none"):
        cfg = NetworkConfig(channels=8, hidden_layers=2, conditioning=mode)
        r = train(train_s, cfg, seed=0, steps=2000, batch_size=8, lr=1e-4,
                  val_samples=val_s, val_every=2000, init_seed=0)
        results[mode] = float(np.mean(list(r.history[-1][2].values())))
        stores[mode] = (r.store.params, cfg)
    gain = results["altitude"] - results["none"]
    # ablation outputs must be bit-identical across supplied altitudes
    params, cfg = stores["none"]
    probe = Image(val_s[0].lr)
    outs = [aafcnn_forward(probe, a, params, cfg).data for a in ALTS]
    identical = all(np.array_equal(outs[0], o) for o in outs[1:])
    elapsed = time.perf_counter() - t0
    ok = gain >= 0.15 and identical and elapsed < 1800.0
    _report(7, ok, f"altitude-conditioned val PSNR {results['altitude']:.3f} dB vs "
                   f"ablation {results['none']:.3f} dB, gain {gain:.3f} dB "
                   f"(>= 0.15); ablation bit-identical across altitudes: "
                   f"{identical}; {elapsed:.0f} s (< 1800 s)")


# ---------------------------------------------------------------------------
# 8. zero-residual initialization reproduces the bicubic baseline exactly

def test_acceptance_8_zero_residual_baseline():
    rng = np.random.default_rng(0)
    cfg = NetworkConfig(channels=6, hidden_layers=3, embedding_dim=8)
    params = init_params(cfg, seed=0)  # final conv zero
    lr = Image(rng.uniform(0, 1, (3, 18, 18)))
    hr = Image(rng.uniform(0, 1, (3, 100, 100)))
    out = aafcnn_forward(lr, 80.0, params, cfg)
    baseline = Image(np.clip(resize_bicubic(lr, 100, 100).data, 0, 1))
    delta = psnr_y(out, hr).db - psnr_y(baseline, hr).db
    ok = delta == 0.0
    _report(8, ok, f"PSNR delta vs bicubic baseline {delta:+.1e} dB (exactly 0)")


# ---------------------------------------------------------------------------
# 9. optional real-data check

def test_acceptance_9_real_data_bicubic_baseline():
    data_dir = os.environ.get("DSRF_REAL_DATA", "")
    if not data_dir or not os.path.isdir(data_dir):
        _emit("\nACCEPTANCE 9: SKIP - real dataset not present "
              "(set DSRF_REAL_DATA to a registered-patch tree)\n")
        pytest.skip("real dataset not available")
    import json
    from pathlib import Path
    psnrs, ssims = [], []
    for meta_path in sorted(Path(data_dir).rglob("meta_*.json")):
        meta = json.loads(meta_path.read_text())
        if meta.get("altitude") != 10 or not meta.get("valid", True):
            continue
        idx = meta_path.stem.split("_")[-1]
        lr = read_image(meta_path.parent / f"lr_{idx}.png")
        hr = read_image(meta_path.parent / f"hr_{idx}.png")
        up = Image(np.clip(resize_bicubic(lr, hr.height, hr.width).data, 0, 1))
        psnrs.append(psnr_y(up, hr, border_shave=6).db)
        ssims.append(ssim_y(up, hr, border_shave=6))
    assert psnrs, "no valid altitude-10 patches found"
    p, s = float(np.mean(psnrs)), float(np.mean(ssims))
    ok = abs(p - 23.24) < 0.10 and abs(s - 0.7156) < 0.005
    _report(9, ok, f"bicubic baseline at 10 m: {p:.2f} dB / {s:.4f} "
                   f"(23.24 +/- 0.10 dB, 0.7156 +/- 0.005)")
