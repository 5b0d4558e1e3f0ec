"""Synth-TS: seasonal + trend + noise series drawn from a grid of 2-D Gaussians.

Each series has a frequency ``f`` and slope ``k`` sampled from one Gaussian of
an ``m x m`` grid over (f, k). The pretext label is the seasonal wave type;
the external dissimilarity is the Euclidean distance between (f, k) pairs and
the ground-truth cluster is the generating grid cell.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset

WAVE_TYPES = ("sine", "triangle")
TRIANGLE_FORMS = ("printed", "continuous")


@dataclass
class SynthConfig:
    m: int = 5
    n: int = 80
    mu0: float = 0.2
    sigma_f: float = 0.4
    sigma_k: float = 0.5
    sigma_n: float = 0.02
    offset: float = 1.0
    duration: float = 2.0
    rate: int = 256
    seed: int = 0
    triangle: str = "printed"

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if min(self.sigma_f, self.sigma_k, self.sigma_n) <= 0:
            raise ValueError("standard deviations must be positive")
        if self.triangle not in TRIANGLE_FORMS:
            raise ValueError(f"triangle must be one of {TRIANGLE_FORMS}")

    @property
    def length(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def n_samples(self) -> int:
        return 2 * self.n * self.m**2


def grid_means(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cell means: ``mu_f[i] = mu0 + 2*i*sqrt(2)*sigma_f``, ``mu_k[j] = (2*j - m)*sqrt(2)*sigma_k``."""
    idx = np.arange(config.m)
    root2 = math.sqrt(2.0)
    mu_f = config.mu0 + 2.0 * idx * root2 * config.sigma_f
    mu_k = (-config.m + 2.0 * idx) * root2 * config.sigma_k
    return mu_f, mu_k


def cell_index(config: SynthConfig, gaussian_id: int) -> tuple[int, int]:
    """Grid cell ``(frequency index, slope index)`` of a Gaussian id."""
    if not 0 <= gaussian_id < config.m**2:
        raise ValueError(f"gaussian_id {gaussian_id} outside [0, {config.m ** 2})")
    return divmod(int(gaussian_id), config.m)


def sample_parameters(config: SynthConfig, gaussian_id: int, rng: np.random.Generator) -> tuple[float, float]:
    i, j = cell_index(config, gaussian_id)
    mu_f, mu_k = grid_means(config)
    f = rng.normal(mu_f[i], config.sigma_f)
    k = rng.normal(mu_k[j], config.sigma_k)
    return float(f), float(k)


def time_grid(config: SynthConfig) -> np.ndarray:
    # half-open [0, duration)
    return np.arange(config.length) / config.rate


def sine_wave(f: float, t: np.ndarray, offset: float = 1.0) -> np.ndarray:
    return np.abs(np.sin(np.pi * f * t)) + offset


def triangle_wave(f: float, t: np.ndarray, offset: float = 1.0, form: str = "printed") -> np.ndarray:
    x = t * f - np.floor(t * f)
    if form == "printed":
        rising = 4.0 * f * x - 1.0 + offset
        falling = -4.0 * f * x + 2.0 + offset
    elif form == "continuous":
        rising = 4.0 * x - 1.0 + offset
        falling = -4.0 * x + 3.0 + offset
    else:
        raise ValueError(f"unknown triangle form {form!r}")
    return np.where(x < 0.5, rising, falling)


def trend(k: float, t: np.ndarray) -> np.ndarray:
    """Rising trends start at 0; falling trends end at 0 on the last time point."""
    if k >= 0:
        return k * t
    return k * (t - t.max())


def seasonal(wave_type: str, f: float, t: np.ndarray, config: SynthConfig) -> np.ndarray:
    if wave_type == "sine":
        return sine_wave(f, t, config.offset)
    if wave_type == "triangle":
        return triangle_wave(f, t, config.offset, config.triangle)
    raise ValueError(f"unknown wave type {wave_type!r}")


def synthesize_series(
    wave_type: str,
    f: float,
    k: float,
    config: SynthConfig,
    rng: np.random.Generator | None = None,
    noise: bool = True,
) -> np.ndarray:
    t = time_grid(config)
    series = seasonal(wave_type, f, t, config) + trend(k, t)
    if noise:
        if rng is None:
            raise ValueError("an rng is required when noise is enabled")
        series = series + rng.normal(0.0, config.sigma_n, size=t.shape)
    return series


def parameter_distances(params: np.ndarray) -> np.ndarray:
    diff = params[:, None, :] - params[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def build_dataset(config: SynthConfig) -> Dataset:
    """All ``2 * n * m**2`` samples, grouped by Gaussian: n sine then n triangle each."""
    rows = []
    waves, fs, ks, cells = [], [], [], []
    index = 0
    for gid in range(config.m**2):
        for wave in WAVE_TYPES:
            for _ in range(config.n):
                rng = sample_rng(config.seed, index)
                f, k = sample_parameters(config, gid, rng)
                rows.append(synthesize_series(wave, f, k, config, rng))
                waves.append(wave)
                fs.append(f)
                ks.append(k)
                cells.append(gid)
                index += 1
    params = np.column_stack([fs, ks])
    y = np.array([WAVE_TYPES.index(w) for w in waves], dtype=np.int64)
    width = max(5, len(str(index)))
    return Dataset(
        ids=[f"s{i:0{width}d}" for i in range(index)],
        x=np.vstack(rows),
        y=y,
        label_names=list(WAVE_TYPES),
        dissim=parameter_distances(params),
        gt=np.array(cells, dtype=np.int64),
        kind="synth",
        extra={"f": params[:, 0], "k": params[:, 1], "gaussian_id": np.array(cells, dtype=np.int64)},
        manifest={"generator": "synth_ts", "synth_config": asdict(config)},
    )
