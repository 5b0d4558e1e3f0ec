"""1-D U-Net autoencoder with feature and classification heads."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DataError, NumericalError, ShapeError

VARIANTS = ("mspl", "onlycls", "cluscls")
STRUCT_KINDS = ("mse", "snp")


@dataclass
class ModelConfig:
    input_length: int = 512
    depth: int = 3
    channels: Sequence[int] = (16, 32, 64)
    latent_dim: int = 32
    hidden_dim: int = 256
    kernel_size: int = 3
    num_pretext_classes: int = 2
    num_cluster_classes: int = 0
    lambda_pretext: float = 1.0
    lambda_struct: float = 1.0
    struct_loss: str = "mse"
    snp_threshold: float | None = None
    variant: str = "mspl"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.struct_loss not in STRUCT_KINDS:
            raise ValueError(f"unknown struct_loss {self.struct_loss!r}; expected one of {STRUCT_KINDS}")
        if self.depth < 1 or len(self.channels) != self.depth:
            raise ValueError(f"need one channel width per level: depth={self.depth}, channels={self.channels}")
        if self.lambda_pretext < 0 or self.lambda_struct < 0:
            raise ValueError("loss weights must be nonnegative")
        if (self.struct_loss == "snp") != (self.snp_threshold is not None):
            raise ValueError("snp_threshold is required exactly when struct_loss='snp'")
        if self.snp_threshold is not None and self.snp_threshold <= 0:
            raise ValueError("snp_threshold must be positive")
        if self.variant == "cluscls" and self.num_cluster_classes < 1:
            raise ValueError("cluscls needs num_cluster_classes >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd to keep lengths aligned")
        step = 2**self.depth
        if self.input_length < step or self.input_length % step:
            pad = (-self.input_length) % step
            raise ShapeError(
                f"input_length {self.input_length} must be a positive multiple of 2**depth={step}; "
                f"zero-pad each series by {pad} samples (to {self.input_length + pad})"
            )

    @property
    def bottleneck_length(self) -> int:
        return self.input_length // 2**self.depth

    @property
    def has_struct_loss(self) -> bool:
        return self.variant == "mspl"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ForwardOutput:
    h0: Tensor
    x_hat: Tensor
    h: Tensor
    z: Tensor
    z_c: Tensor | None = None


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MSPLNet:
    config: ModelConfig
    seed: int
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> MSPLNet:
        config.validate()
        net = cls(config, seed)
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        ch = config.channels

        prev = 1
        for i, c in enumerate(ch):
            net._conv(rng, f"enc{i}.conv", prev, c, k)
            net._conv(rng, f"enc{i}.down", c, c, k)
            prev = c
        for i in reversed(range(config.depth)):
            net._conv(rng, f"dec{i}.conv", prev + ch[i], ch[i], k)
            prev = ch[i]
        net._conv(rng, "dec.out", prev, 1, k)

        flat = ch[-1] * config.bottleneck_length
        net._linear(rng, "enc_h.hidden", flat, config.hidden_dim)
        net._linear(rng, "enc_h.out", config.hidden_dim, config.latent_dim)
        net._linear(rng, "cls", config.latent_dim, config.num_pretext_classes)
        # built last so the shared layers initialize identically across variants
        if config.variant == "cluscls":
            net._linear(rng, "cls_c", config.latent_dim + config.num_pretext_classes, config.num_cluster_classes)
        return net

    def _conv(self, rng, name, c_in, c_out, k):
        w = glorot(rng, (c_out, c_in, k), c_in * k, c_out * k)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.params[f"{name}.bias"] = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def _linear(self, rng, name, n_in, n_out):
        w = glorot(rng, (n_in, n_out), n_in, n_out)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.params[f"{name}.bias"] = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias")

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def conv(self, name, x, stride=1):
        pad = self.config.kernel_size // 2
        out = ad.conv1d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], stride=stride, padding=pad)
        return _finite(out, name)

    def linear(self, name, x):
        out = ad.matmul(x, self.params[f"{name}.weight"]) + self.params[f"{name}.bias"]
        return _finite(out, name)

    def encode_x(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        skips = []
        cur = x
        for i in range(self.config.depth):
            cur = ad.relu(self.conv(f"enc{i}.conv", cur))
            skips.append(cur)
            cur = self.conv(f"enc{i}.down", cur, stride=2)
        return cur, skips

    def decode(self, h0: Tensor, skips: list[Tensor]) -> Tensor:
        cur = h0
        for i in reversed(range(self.config.depth)):
            cur = ad.concat([ad.upsample2(cur), skips[i]], axis=-1)
            cur = ad.relu(self.conv(f"dec{i}.conv", cur))
        return self.conv("dec.out", cur)

    def encode_h(self, h0: Tensor) -> Tensor:
        hidden = ad.relu(self.linear("enc_h.hidden", ad.flatten(h0)))
        return self.linear("enc_h.out", hidden)

    def forward(self, x) -> ForwardOutput:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_length:
            raise ShapeError(f"forward: expected (N, {self.config.input_length}) input, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericalError("forward: non-finite values in input batch")
        n, length = x.shape
        h0, skips = self.encode_x(Tensor(x.reshape(n, length, 1)))
        x_hat = ad.reshape(self.decode(h0, skips), (n, length))
        h = self.encode_h(h0)
        z = self.linear("cls", h)
        z_c = None
        if self.config.variant == "cluscls":
            z_c = self.linear("cls_c", ad.concat([h, z], axis=1))
        return ForwardOutput(h0=h0, x_hat=x_hat, h=h, z=z, z_c=z_c)

    def embed(self, x, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """Inference-only features, pretext logits, and cluster logits."""
        hs, zs, zcs = [], [], []
        x = np.asarray(x, dtype=np.float64)
        with ad.no_grad():
            for start in range(0, len(x), batch_size):
                out = self.forward(x[start : start + batch_size])
                hs.append(out.h.data)
                zs.append(out.z.data)
                if out.z_c is not None:
                    zcs.append(out.z_c.data)
        h = np.concatenate(hs) if hs else np.zeros((0, self.config.latent_dim))
        z = np.concatenate(zs) if zs else np.zeros((0, self.config.num_pretext_classes))
        return h, z, (np.concatenate(zcs) if zcs else None)


def _finite(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite activation in layer {layer!r}")
    return t


def check_labels(labels, n_classes: int, what: str) -> np.ndarray:
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        bad = y[(y < 0) | (y >= n_classes)][0]
        raise DataError(f"{what} label {bad} outside [0, {n_classes})")
    return y.astype(np.int64)
