"""Mini-batch ell1 + ADAM training loop, checkpoint serialization, metrics CSV.

Checkpoint layout (little-endian): magic b"DSRC", uint32 version, uint32
config-JSON length + JSON bytes, uint32 tensor count, then per tensor
uint32 name length, name bytes, uint32 rank, uint32 dims, float32 data.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..imgcore import Image
from ..metrics import psnr_y
from .model import NetworkConfig, forward_batch, init_params, loss_and_grads
from .optim import ParamStore, adam_step

CKPT_MAGIC = b"DSRC"
CKPT_VERSION = 1


@dataclass(frozen=True)
class Sample:
    """One training/validation pair: planar (3,h,w) arrays in [0,1]."""

    lr: np.ndarray
    hr: np.ndarray
    altitude: float


@dataclass
class TrainResult:
    store: ParamStore
    config: NetworkConfig
    history: list = field(default_factory=list)  # (step, loss, {altitude: psnr})


def _validate_psnr(samples, params, config, shave):
    """Mean validation PSNR per altitude (dB)."""
    by_alt = {}
    for s in samples:
        out, _ = forward_batch(s.lr[None], [s.altitude], params, config)
        pred = Image(np.clip(out[0], 0.0, 1.0))
        db = psnr_y(pred, Image(s.hr), border_shave=shave).db
        by_alt.setdefault(s.altitude, []).append(db)
    return {alt: float(np.mean(v)) for alt, v in sorted(by_alt.items())}


def train(samples, config: NetworkConfig, seed: int = 0, steps: int = 2000,
          batch_size: int = 8, lr: float = 1e-4, val_samples=(),
          val_every: int = 0, val_shave: int = 4, metrics_path=None,
          init_seed=None, log=None) -> TrainResult:
    """Deterministic seeded training. Returns the ParamStore plus a history of
    (step, loss, per-altitude validation PSNR) rows; optionally streams them
    to a CSV at metrics_path."""
    samples = list(samples)
    if not samples:
        raise InvalidInputError("empty training set")
    shapes = {(s.lr.shape, s.hr.shape) for s in samples}
    if len(shapes) != 1:
        raise InvalidInputError(f"training samples must share one shape, got {shapes}")
    rng = np.random.default_rng(seed)
    store = ParamStore(init_params(config, seed if init_seed is None else init_seed))
    history = []
    order = []
    csv = open(metrics_path, "w") if metrics_path else None
    if csv:
        csv.write("step,loss,val_psnr_per_altitude\n")
    try:
        for step in range(1, steps + 1):
            while len(order) < batch_size:
                order.extend(rng.permutation(len(samples)).tolist())
            batch = [samples[order.pop(0)] for _ in range(batch_size)]
            lr_b = np.stack([s.lr for s in batch])
            hr_b = np.stack([s.hr for s in batch])
            alts = [s.altitude for s in batch]
            loss, grads = loss_and_grads(lr_b, hr_b, alts, store.params, config)
            adam_step(store, grads, lr)
            val = {}
            if val_samples and val_every and (step % val_every == 0 or step == steps):
                val = _validate_psnr(val_samples, store.params, config, val_shave)
            history.append((step, loss, val))
            if csv:
                vtxt = ";".join(f"{a}:{p:.4f}" for a, p in val.items())
                csv.write(f"{step},{loss:.8f},{vtxt}\n")
            if log and (step % max(1, steps // 20) == 0 or val):
                log(f"step {step}/{steps} loss {loss:.5f}"
                    + (f" val {val}" if val else ""))
    finally:
        if csv:
            csv.close()
    return TrainResult(store=store, config=config, history=history)


def save_checkpoint(path, config: NetworkConfig, params: dict):
    cfg_json = json.dumps(
        {k: getattr(config, k) for k in config.__dataclass_fields__},
        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(cfg_json)))
        f.write(cfg_json)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            nb = name.encode()
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (NetworkConfig, params dict with float64 tensors)."""
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise InvalidInputError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", f.read(4))
        config = NetworkConfig(**json.loads(f.read(clen)))
        (count,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4")
            params[name] = data.reshape(shape).astype(np.float64)
    return config, params
