from .checkpoint import load_checkpoint, save_checkpoint
from .loss import downsample_gt, multires_loss, total_loss, wce_loss
from .model import (NetArch, NetworkParams, backward, forward, he_init, hflip_augment,
                    init_params, predict, softmax)
from .optim import adam_init, adam_step

__all__ = [
    "NetArch", "NetworkParams", "adam_init", "adam_step", "backward", "downsample_gt",
    "forward", "he_init", "hflip_augment", "init_params", "load_checkpoint", "multires_loss",
    "predict", "save_checkpoint", "softmax", "total_loss", "wce_loss",
]
