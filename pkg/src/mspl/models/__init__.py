from .losses import (
    cross_entropy,
    loss_pretext,
    loss_recon,
    loss_struct,
    loss_struct_cls,
    loss_struct_mse,
    loss_struct_snp,
    loss_total,
    snp_penalty,
)
from .network import VARIANTS, ForwardOutput, ModelConfig, MSPLNet
from .training import Batch, EpochStats, compute_losses, fit, load_checkpoint, save_checkpoint, train_epoch, train_step
