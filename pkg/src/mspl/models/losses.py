"""Reconstruction, pretext, and structure losses and their weighted sum."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ShapeError
from .network import ModelConfig, check_labels


def loss_recon(x, x_hat: Tensor) -> Tensor:
    """Squared error summed over all entries and divided by the batch size."""
    x = ad.as_tensor(x)
    if x.shape != x_hat.shape:
        raise ShapeError(f"loss_recon: shapes {x.shape} and {x_hat.shape} differ")
    return ad.tsum(ad.sqdiff(x, x_hat)) / x.shape[0]


def cross_entropy(logits: Tensor, labels, what: str = "pretext") -> Tensor:
    y = check_labels(labels, logits.shape[1], what)
    if y.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: {logits.shape[0]} rows but {y.shape} labels")
    return -ad.mean(ad.take_rows(ad.log_softmax(logits), y))


def loss_pretext(z: Tensor, y) -> Tensor:
    return cross_entropy(z, y, "pretext")


def loss_struct_cls(z_c: Tensor, c_t) -> Tensor:
    return cross_entropy(z_c, c_t, "cluster")


def _check_square(pd: Tensor, d: np.ndarray) -> None:
    if pd.shape != d.shape or pd.ndim != 2 or pd.shape[0] != pd.shape[1]:
        raise ShapeError(f"structure loss: shapes {pd.shape} and {d.shape} are not matching square matrices")


def loss_struct_mse(pd: Tensor, d) -> Tensor:
    """Mean of ``(pd_ij - d_ij)**2`` over all N**2 ordered pairs."""
    d = np.asarray(d.data if isinstance(d, Tensor) else d, dtype=np.float64)
    _check_square(pd, d)
    return ad.mean(ad.sqdiff(pd, d))


def snp_penalty(x, y, t: float):
    """Pairwise penalty: squared residual when ``y <= t``, else squared hinge ``max(0, t - x)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.where(y <= t, (x - y) ** 2, np.maximum(0.0, t - x) ** 2)


def loss_struct_snp(pd: Tensor, d, t: float) -> Tensor:
    d = np.asarray(d.data if isinstance(d, Tensor) else d, dtype=np.float64)
    _check_square(pd, d)
    if t <= 0:
        raise ValueError("SNP threshold must be positive")
    near = (d <= t).astype(np.float64)
    close_term = ad.sqdiff(pd, d) * near
    far_term = ad.square(ad.relu(t - pd)) * (1.0 - near)
    return ad.mean(close_term + far_term)


def loss_struct(h: Tensor, d, config: ModelConfig) -> Tensor:
    pd = ad.pdist(h)
    if config.struct_loss == "snp":
        return loss_struct_snp(pd, d, config.snp_threshold)
    return loss_struct_mse(pd, d)


def loss_total(components: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """``recon + lambda_pretext * pretext + lambda_struct * struct``.

    ``struct`` is the distance-matching loss for mspl and the cluster-label
    cross-entropy for cluscls; onlycls has no structure term. A zero weight
    drops its term from the graph altogether.
    """
    total = components["recon"]
    if config.lambda_pretext != 0:
        total = total + config.lambda_pretext * components["pretext"]
    if config.variant != "onlycls" and config.lambda_struct != 0:
        total = total + config.lambda_struct * components["struct"]
    return total
