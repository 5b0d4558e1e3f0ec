"""Experiment configuration: a JSON file whose fields CLI flags may override."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..amr_data import AMR_GT_THRESHOLD, SNP_GT_THRESHOLD
from ..models.network import VARIANTS

SCHEMES = ("thr", "num")
GT_SOURCES = ("auto", "generator", "derive", "file")

UPPER_BOUNDS = {"snp": 20.0, "amr": 33.0}
GT_THRESHOLDS = {"snp": SNP_GT_THRESHOLD, "amr": AMR_GT_THRESHOLD}


@dataclass
class ExperimentConfig:
    data: str = ""
    out: str = "run"
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    model: dict = field(default_factory=dict)
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    k_folds: int = 2
    n_trials: int = 5
    seed: int = 0
    schemes: list[str] | None = None
    threshold_upper_bound: float | None = None
    gt_source: str = "auto"
    gt_threshold: float | None = None
    jobs: int = 1
    mds: bool = True
    save_checkpoints: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("epochs, batch_size, lr must be nonnegative (batch_size >= 1)")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ValueError(f"unknown variants {bad}; expected a subset of {VARIANTS}")
        if self.schemes is not None:
            bad = [s for s in self.schemes if s not in SCHEMES]
            if bad or not self.schemes:
                raise ValueError(f"unknown schemes {bad}; expected a subset of {SCHEMES}")
        if self.gt_source not in GT_SOURCES:
            raise ValueError(f"gt_source must be one of {GT_SOURCES}")
        if self.threshold_upper_bound is not None and self.threshold_upper_bound <= 0:
            raise ValueError("threshold_upper_bound must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def resolved(self, kind: str) -> ExperimentConfig:
        """Fill dataset-dependent defaults for a dataset of ``kind``."""
        schemes = self.schemes
        if schemes is None:
            schemes = ["num"] if kind == "synth" else ["thr", "num"]
        bound = self.threshold_upper_bound
        if bound is None and "thr" in schemes:
            if kind not in UPPER_BOUNDS:
                raise ValueError(f"no default threshold upper bound for dataset kind {kind!r}")
            bound = UPPER_BOUNDS[kind]
        gt_source = self.gt_source
        if gt_source == "auto":
            gt_source = "generator" if kind == "synth" else "derive"
        gt_threshold = self.gt_threshold
        if gt_source == "derive" and gt_threshold is None:
            gt_threshold = GT_THRESHOLDS.get(kind, SNP_GT_THRESHOLD)
        return replace(
            self, schemes=list(schemes), threshold_upper_bound=bound, gt_source=gt_source, gt_threshold=gt_threshold
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> ExperimentConfig:
        data = json.loads(Path(path).read_text()) if path else {}
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)
