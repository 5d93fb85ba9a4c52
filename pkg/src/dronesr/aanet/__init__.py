"""Altitude-aware super-resolution network with manual backprop."""

from .model import (ALTITUDE_NORM, NetworkConfig, aafcnn_forward, config_hash,
                    dab_forward, dal_forward, encode_altitude, forward_batch,
                    init_dab_params, init_params, loss_and_grads,
                    upsample_head, upsample_head_forward)
from .layers import l1_loss
from .optim import GradCheckResult, ParamStore, adam_step, gradient_check
from .train import (Sample, TrainResult, load_checkpoint, save_checkpoint,
                    train)

__all__ = [
    "ALTITUDE_NORM", "NetworkConfig", "aafcnn_forward", "config_hash",
    "dab_forward", "dal_forward", "encode_altitude", "forward_batch",
    "init_dab_params", "init_params", "loss_and_grads", "upsample_head",
    "upsample_head_forward", "l1_loss", "GradCheckResult", "ParamStore",
    "adam_step", "gradient_check", "Sample", "TrainResult",
    "load_checkpoint", "save_checkpoint", "train",
]
