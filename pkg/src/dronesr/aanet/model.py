"""Altitude-aware residual CNN for fractional-scale super-resolution.

A pre-upsampling FCNN (bicubic to the target size, then a 3x3 conv stack
learning the residual) conditioned on flight altitude: a two-FC encoder turns
altitude/80 into an embedding, and altitude-aware layers between consecutive
hidden convs predict per-channel depth-wise kernels (branch A) and sigmoid
channel-attention weights (branch B) from that embedding.

Parameters live in a flat {name: ndarray} dict; every forward has a matching
backward so the whole network trains without an autodiff framework.
"""

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidInputError
from ..imgcore import Image
from . import layers as L

ALTITUDE_NORM = 80.0
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class NetworkConfig:
    channels: int = 128
    hidden_layers: int = 8
    dal_kernel: int = 3
    embedding_dim: int = 64
    scale_num: int = 50
    scale_den: int = 9
    conditioning: str = "altitude"  # "altitude" | "none" (frozen constant-1 code)

    def __post_init__(self):
        if min(self.channels, self.hidden_layers, self.embedding_dim,
               self.scale_num, self.scale_den) < 1:
            raise InvalidInputError("network sizes must be positive")
        if self.dal_kernel != 3:
            raise InvalidInputError("only 3x3 depth-wise kernels are supported")
        if self.conditioning not in ("altitude", "none"):
            raise InvalidInputError(f"unknown conditioning {self.conditioning!r}")

    @property
    def scale(self):
        return self.scale_num / self.scale_den

    @property
    def n_dal(self):
        return self.hidden_layers - 1

    def out_size(self, h, w):
        return (int(round(h * self.scale)), int(round(w * self.scale)))


def config_hash(config: NetworkConfig) -> str:
    return hashlib.sha256(
        json.dumps(asdict(config), sort_keys=True).encode()).hexdigest()


def _he(rng, shape, fan_in, scale=None):
    std = scale if scale is not None else np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, shape)


def init_params(config: NetworkConfig, seed: int = 0, weight_scale=None,
                zero_final: bool = True) -> dict:
    """Seeded parameter dict. The final conv is zero by default so a fresh
    network reproduces the bicubic upsample exactly. `weight_scale` overrides
    the He std everywhere (used by gradient checks, which want small params)."""
    rng = np.random.default_rng(seed)
    c, e = config.channels, config.embedding_dim
    p = {}

    def w(name, shape, fan_in):
        p[name + ".w"] = _he(rng, shape, fan_in, weight_scale)
        p[name + ".b"] = np.zeros(shape[0])

    w("enc.fc1", (e, 1), 1)
    w("enc.fc2", (e, e), e)
    w("conv_in", (c, 3, 3, 3), 3 * 9)
    for i in range(config.hidden_layers):
        w(f"hidden{i}", (c, c, 3, 3), c * 9)
    for i in range(config.n_dal):
        w(f"dal{i}.a_fc1", (e, e), e)
        w(f"dal{i}.a_fc2", (9 * c, e), e)
        w(f"dal{i}.conv1x1", (c, c, 1, 1), c)
        w(f"dal{i}.b_fc1", (e, e), e)
        w(f"dal{i}.b_fc2", (c, e), e)
    w("conv_out", (3, c, 3, 3), c * 9)
    if zero_final:
        p["conv_out.w"] = np.zeros_like(p["conv_out.w"])
    return p


# ---------------------------------------------------------------------------
# altitude encoder

def _encode_forward(altitudes, params, config):
    alt = np.atleast_1d(np.asarray(altitudes, dtype=np.float64))
    if config.conditioning == "none":
        s = np.ones((alt.shape[0], 1))
    else:
        if np.any(alt <= 0):
            raise InvalidInputError(f"altitude must be positive, got {alt}")
        s = (alt / ALTITUDE_NORM)[:, None]
    h1, c1 = L.fc_forward(s, params["enc.fc1.w"], params["enc.fc1.b"])
    h1r, cr = L.relu_forward(h1)
    e, c2 = L.fc_forward(h1r, params["enc.fc2.w"], params["enc.fc2.b"])
    return e, (c1, cr, c2)


def _encode_backward(ge, cache, grads):
    c1, cr, c2 = cache
    gh1r, gw2, gb2 = L.fc_backward(ge, c2)
    grads["enc.fc2.w"] += gw2
    grads["enc.fc2.b"] += gb2
    gh1 = L.relu_backward(gh1r, cr)
    _, gw1, gb1 = L.fc_backward(gh1, c1)
    grads["enc.fc1.w"] += gw1
    grads["enc.fc1.b"] += gb1


def encode_altitude(altitude_m, params, config: NetworkConfig = NetworkConfig()):
    """Embed a flight altitude (meters): FC2(relu(FC1(altitude/80)))."""
    e, _ = _encode_forward([altitude_m], params, config)
    return e[0]


# ---------------------------------------------------------------------------
# altitude-aware layer (DAL) and block (DAB)

def _dal_forward(feat, e, params, prefix):
    c = feat.shape[1]
    if params[prefix + "b_fc2.w"].shape[0] != c:
        raise InvalidInputError(
            f"dal {prefix!r}: params sized for {params[prefix + 'b_fc2.w'].shape[0]} "
            f"channels, features have {c}")
    # branch A: embedding -> per-channel 3x3 depth-wise kernels -> 1x1 conv
    a1, ca1 = L.fc_forward(e, params[prefix + "a_fc1.w"], params[prefix + "a_fc1.b"])
    a1r, car = L.relu_forward(a1)
    kflat, ca2 = L.fc_forward(a1r, params[prefix + "a_fc2.w"], params[prefix + "a_fc2.b"])
    kern = kflat.reshape(feat.shape[0], c, 3, 3)
    d, cd = L.depthwise_forward(feat, kern)
    a_out, c11 = L.conv2d_forward(d, params[prefix + "conv1x1.w"],
                                  params[prefix + "conv1x1.b"])
    # branch B: embedding -> sigmoid channel attention
    b1, cb1 = L.fc_forward(e, params[prefix + "b_fc1.w"], params[prefix + "b_fc1.b"])
    b1r, cbr = L.relu_forward(b1)
    blog, cb2 = L.fc_forward(b1r, params[prefix + "b_fc2.w"], params[prefix + "b_fc2.b"])
    att, cs = L.sigmoid_forward(blog)
    b_out, csc = L.scale_forward(feat, att)
    return a_out + b_out, (ca1, car, ca2, cd, c11, cb1, cbr, cb2, cs, csc)


def _dal_backward(g, cache, params, prefix, grads):
    ca1, car, ca2, cd, c11, cb1, cbr, cb2, cs, csc = cache
    # branch A
    gd, gw11, gb11 = L.conv2d_backward(g, c11)
    grads[prefix + "conv1x1.w"] += gw11
    grads[prefix + "conv1x1.b"] += gb11
    gfeat_a, gk = L.depthwise_backward(gd, cd)
    ga1r, gw2, gb2 = L.fc_backward(gk.reshape(gk.shape[0], -1), ca2)
    grads[prefix + "a_fc2.w"] += gw2
    grads[prefix + "a_fc2.b"] += gb2
    ga1 = L.relu_backward(ga1r, car)
    ge_a, gw1, gb1 = L.fc_backward(ga1, ca1)
    grads[prefix + "a_fc1.w"] += gw1
    grads[prefix + "a_fc1.b"] += gb1
    # branch B
    gfeat_b, gatt = L.scale_backward(g, csc)
    gblog = L.sigmoid_backward(gatt, cs)
    gb1r, gw2b, gb2b = L.fc_backward(gblog, cb2)
    grads[prefix + "b_fc2.w"] += gw2b
    grads[prefix + "b_fc2.b"] += gb2b
    gb1_ = L.relu_backward(gb1r, cbr)
    ge_b, gw1b, gb1b = L.fc_backward(gb1_, cb1)
    grads[prefix + "b_fc1.w"] += gw1b
    grads[prefix + "b_fc1.b"] += gb1b
    return gfeat_a + gfeat_b, ge_a + ge_b


def dal_forward(feat, e, params, prefix: str = "dal0."):
    """Altitude-aware layer: depth-wise-conv branch + channel-attention branch."""
    out, _ = _dal_forward(np.asarray(feat, dtype=np.float64),
                          np.atleast_2d(np.asarray(e, dtype=np.float64)),
                          params, prefix)
    return out


def init_dab_params(config: NetworkConfig, seed: int = 0, weight_scale=None) -> dict:
    """Parameters for a standalone two-DAL block (prefixes dal0., dal1.,
    conv names dab_conv0/dab_conv1)."""
    rng = np.random.default_rng(seed)
    c, e = config.channels, config.embedding_dim
    p = {}

    def w(name, shape, fan_in):
        p[name + ".w"] = _he(rng, shape, fan_in, weight_scale)
        p[name + ".b"] = np.zeros(shape[0])

    for i in range(2):
        w(f"dal{i}.a_fc1", (e, e), e)
        w(f"dal{i}.a_fc2", (9 * c, e), e)
        w(f"dal{i}.conv1x1", (c, c, 1, 1), c)
        w(f"dal{i}.b_fc1", (e, e), e)
        w(f"dal{i}.b_fc2", (c, e), e)
        w(f"dab_conv{i}", (c, c, 3, 3), c * 9)
    return p


def _dab_forward(feat, e, params):
    x, c0 = _dal_forward(feat, e, params, "dal0.")
    x, cc0 = L.conv2d_forward(x, params["dab_conv0.w"], params["dab_conv0.b"])
    x, cr0 = L.relu_forward(x)
    x, c1 = _dal_forward(x, e, params, "dal1.")
    x, cc1 = L.conv2d_forward(x, params["dab_conv1.w"], params["dab_conv1.b"])
    x, cr1 = L.relu_forward(x)
    return x, (c0, cc0, cr0, c1, cc1, cr1)


def _dab_backward(g, cache, params, grads):
    c0, cc0, cr0, c1, cc1, cr1 = cache
    g = L.relu_backward(g, cr1)
    g, gw, gb = L.conv2d_backward(g, cc1)
    grads["dab_conv1.w"] += gw
    grads["dab_conv1.b"] += gb
    g, ge1 = _dal_backward(g, c1, params, "dal1.", grads)
    g = L.relu_backward(g, cr0)
    g, gw, gb = L.conv2d_backward(g, cc0)
    grads["dab_conv0.w"] += gw
    grads["dab_conv0.b"] += gb
    g, ge0 = _dal_backward(g, c0, params, "dal0.", grads)
    return g, ge0 + ge1


def dab_forward(feat, e, params):
    """Altitude-aware block: DAL -> 3x3 conv -> ReLU -> DAL -> 3x3 conv -> ReLU."""
    out, _ = _dab_forward(np.asarray(feat, dtype=np.float64),
                          np.atleast_2d(np.asarray(e, dtype=np.float64)), params)
    return out


# ---------------------------------------------------------------------------
# full network

def forward_batch(lr, altitudes, params, config: NetworkConfig):
    """lr: (batch, 3, h, w) in [0,1]. Returns (out, caches); out is the
    *unclamped* upsample + residual (clamp at the Image-level API / inference)."""
    lr = np.asarray(lr, dtype=np.float64)
    if lr.ndim != 4 or lr.shape[1] != 3:
        raise InvalidInputError(f"expected (batch,3,h,w) input, got {lr.shape}")
    th, tw = config.out_size(lr.shape[2], lr.shape[3])
    up, cup = L.resize_tensor_forward(lr, th, tw)
    up = np.clip(up, 0.0, 1.0)
    e, cenc = _encode_forward(altitudes, params, config)
    x, c_in = L.conv2d_forward(up, params["conv_in.w"], params["conv_in.b"])
    x, r_in = L.relu_forward(x)
    hidden = []
    for i in range(config.hidden_layers):
        dcache = None
        if i > 0:
            x, dcache = _dal_forward(x, e, params, f"dal{i - 1}.")
        x, cc = L.conv2d_forward(x, params[f"hidden{i}.w"], params[f"hidden{i}.b"])
        x, cr = L.relu_forward(x)
        hidden.append((dcache, cc, cr))
    res, c_out = L.conv2d_forward(x, params["conv_out.w"], params["conv_out.b"])
    return up + res, (cup, cenc, c_in, r_in, hidden, c_out, config)


def backward_batch(gout, caches, params):
    """Gradient of a scalar loss wrt all parameters, given d(loss)/d(out)."""
    cup, cenc, c_in, r_in, hidden, c_out, config = caches
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    g, gw, gb = L.conv2d_backward(gout, c_out)
    grads["conv_out.w"] += gw
    grads["conv_out.b"] += gb
    ge = 0.0
    for i in range(config.hidden_layers - 1, -1, -1):
        dcache, cc, cr = hidden[i]
        g = L.relu_backward(g, cr)
        g, gw, gb = L.conv2d_backward(g, cc)
        grads[f"hidden{i}.w"] += gw
        grads[f"hidden{i}.b"] += gb
        if dcache is not None:
            g, ge_i = _dal_backward(g, dcache, params, f"dal{i - 1}.", grads)
            ge = ge + ge_i
    g = L.relu_backward(g, r_in)
    _, gw, gb = L.conv2d_backward(g, c_in)
    grads["conv_in.w"] += gw
    grads["conv_in.b"] += gb
    if isinstance(ge, np.ndarray):
        _encode_backward(ge, cenc, grads)
    return grads


def loss_and_grads(lr, hr, altitudes, params, config: NetworkConfig):
    """Mean-ell1 training objective: forward, loss, full parameter gradients."""
    out, caches = forward_batch(lr, altitudes, params, config)
    hr = np.asarray(hr, dtype=np.float64)
    loss, gout = L.l1_loss(out, hr)
    return loss, backward_batch(gout, caches, params)


def aafcnn_forward(lr: Image, altitude_m, params, config: NetworkConfig) -> Image:
    """Super-resolve one image: bicubic pre-upsample + learned residual, clamped."""
    if lr.channels != 3:
        raise InvalidInputError(f"network expects 3-channel input, got {lr.channels}")
    out, _ = forward_batch(lr.data[None], [altitude_m], params, config)
    return Image(np.clip(out[0], 0.0, 1.0))


def upsample_head_forward(feat, w, b, scale):
    """Fractional-scale head: bicubic tensor upsample -> 3x3 conv -> LeakyReLU."""
    if scale <= 1:
        raise InvalidInputError(f"upsample scale must exceed 1, got {scale}")
    feat = np.asarray(feat, dtype=np.float64)
    th = int(round(feat.shape[2] * scale))
    tw = int(round(feat.shape[3] * scale))
    up, cup = L.resize_tensor_forward(feat, th, tw)
    y, cc = L.conv2d_forward(up, w, b)
    out, cl = L.leaky_relu_forward(y, LEAKY_SLOPE)
    return out, (cup, cc, cl)


def upsample_head_backward(g, cache):
    cup, cc, cl = cache
    g = L.leaky_relu_backward(g, cl)
    g, gw, gb = L.conv2d_backward(g, cc)
    return L.resize_tensor_backward(g, cup), gw, gb


def upsample_head(feat, w, b, scale):
    out, _ = upsample_head_forward(feat, w, b, scale)
    return out
