"""Minibatch training and checkpoint serialization."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import Adam, Tensor
from ..errors import DataError
from .losses import loss_pretext, loss_recon, loss_struct, loss_struct_cls, loss_total
from .network import ForwardOutput, ModelConfig, MSPLNet

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MSPLCKPT"


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    d: np.ndarray | None = None
    c_t: np.ndarray | None = None


@dataclass
class EpochStats:
    recon: float
    pretext: float
    struct: float | None
    total: float
    pretext_accuracy: float
    n_batches: int
    n_skipped: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def compute_losses(model: MSPLNet, batch: Batch) -> tuple[Tensor, dict[str, Tensor], ForwardOutput]:
    cfg = model.config
    out = model.forward(batch.x)
    comps = {"recon": loss_recon(batch.x, out.x_hat), "pretext": loss_pretext(out.z, batch.y)}
    if cfg.variant == "mspl":
        if batch.d is None:
            raise DataError("mspl training needs the batch dissimilarity matrix")
        if cfg.lambda_struct != 0:
            comps["struct"] = loss_struct(out.h, batch.d, cfg)
        else:
            with ad.no_grad():
                comps["struct"] = loss_struct(out.h, batch.d, cfg)
    elif cfg.variant == "cluscls":
        if batch.c_t is None:
            raise DataError("cluscls training needs ground-truth cluster labels")
        comps["struct"] = loss_struct_cls(out.z_c, batch.c_t)
    return loss_total(comps, cfg), comps, out


def train_step(model: MSPLNet, optimizer: Adam, batch: Batch) -> tuple[dict[str, float], int]:
    total, comps, out = compute_losses(model, batch)
    optimizer.zero_grad()
    ad.backward(total)
    optimizer.step()
    values = {k: v.item() for k, v in comps.items()}
    values["total"] = total.item()
    correct = int((out.z.data.argmax(axis=1) == batch.y).sum())
    return values, correct


def train_epoch(
    model: MSPLNet,
    x: np.ndarray,
    y: np.ndarray,
    optimizer: Adam,
    batch_size: int,
    rng: np.random.Generator,
    d: np.ndarray | None = None,
    c_t: np.ndarray | None = None,
) -> EpochStats:
    """One shuffled pass; each batch's ``d`` is sliced from the full matrix."""
    n = len(x)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    # a zero struct weight keeps single-sample batches, as onlycls does
    needs_pairs = model.config.variant == "mspl" and model.config.lambda_struct != 0
    if needs_pairs and batch_size < 2:
        raise ValueError("batch_size must be >= 2 when the structure loss is active")
    order = rng.permutation(n)
    sums: dict[str, float] = {}
    correct = seen = batches = skipped = 0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if needs_pairs and len(idx) < 2:
            log.warning("skipping a batch of size %d: the structure loss needs pairs", len(idx))
            skipped += 1
            continue
        batch = Batch(
            x=x[idx],
            y=y[idx],
            d=None if d is None else d[np.ix_(idx, idx)],
            c_t=None if c_t is None else c_t[idx],
        )
        values, hits = train_step(model, optimizer, batch)
        for key, v in values.items():
            sums[key] = sums.get(key, 0.0) + v
        correct += hits
        seen += len(idx)
        batches += 1
    mean = {k: v / batches for k, v in sums.items()} if batches else {}
    return EpochStats(
        recon=mean.get("recon", float("nan")),
        pretext=mean.get("pretext", float("nan")),
        struct=mean.get("struct"),
        total=mean.get("total", float("nan")),
        pretext_accuracy=correct / seen if seen else float("nan"),
        n_batches=batches,
        n_skipped=skipped,
    )


def fit(
    model: MSPLNet,
    x: np.ndarray,
    y: np.ndarray,
    *,
    epochs: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    d: np.ndarray | None = None,
    c_t: np.ndarray | None = None,
) -> list[EpochStats]:
    optimizer = Adam(model.params, lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        stats = train_epoch(model, x, y, optimizer, batch_size, rng, d=d, c_t=c_t)
        log.debug("epoch %d: %s", epoch, stats)
        history.append(stats)
    return history


# ---------------------------------------------------------------- checkpoints
#
# Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
# (config, seed, epoch, parameter names and shapes in declaration order), then
# each parameter as raw little-endian float64 in that order.

def save_checkpoint(model: MSPLNet, path, epoch: int = 0, extra: dict | None = None) -> None:
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "epoch": epoch,
        "params": [{"name": n, "shape": list(p.shape)} for n, p in model.params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[MSPLNet, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an MSPL checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    model = MSPLNet.build(ModelConfig.from_dict(header["config"]), seed=header["seed"])
    offset = 16 + hlen
    for entry in header["params"]:
        p = model.params.get(entry["name"])
        shape = tuple(entry["shape"])
        if p is None or p.shape != shape:
            raise DataError(f"{path}: parameter {entry['name']} {shape} does not match the model")
        nbytes = 8 * int(np.prod(shape))
        p.data[...] = np.frombuffer(raw[offset : offset + nbytes], dtype="<f8").reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, header
