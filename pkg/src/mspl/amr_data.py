"""Antimicrobial-resistance profiles, their dissimilarity, and paired-data ingest."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import agglomerate_complete, cut_by_threshold
from .dataset import (
    Dataset,
    _rows,
    align,
    dense_labels,
    read_clusters_csv,
    read_dissim_csv,
    read_features_csv,
    validate_dissimilarity,
)
from .errors import DataError

SYMBOLS = ("S", "I", "R", "1", "0", "N")
AMR_GT_THRESHOLD = 10.0
SNP_GT_THRESHOLD = 15.0

# S: susceptible, I: intermediate, R: resistant, 1: S-or-I, 0: susceptible, N: unknown
SIMILARITY = np.array(
    [
        # S  I  R  1  0  N
        [1, 0, 0, 0, 1, 0],  # S
        [0, 1, 0, 1, 0, 0],  # I
        [0, 0, 1, 1, 0, 0],  # R
        [0, 1, 1, 1, 0, 0],  # 1
        [1, 0, 0, 0, 1, 0],  # 0
        [0, 0, 0, 0, 0, 0],  # N
    ],
    dtype=np.int64,
)
_CODE = {s: i for i, s in enumerate(SYMBOLS)}


@dataclass(frozen=True)
class AmrProfile:
    sample_id: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "labels", tuple(parse_symbol(c, self.sample_id, d) for d, c in enumerate(self.labels))
        )

    def __len__(self) -> int:
        return len(self.labels)

    def codes(self) -> np.ndarray:
        return np.array([_CODE[s] for s in self.labels], dtype=np.int64)


def parse_symbol(cell, sample_id: str = "?", drug=None) -> str:
    """Normalize one AMR cell; blanks become ``N``, unknown symbols are errors."""
    s = "" if cell is None else str(cell).strip()
    if s == "":
        return "N"
    if s not in _CODE:
        where = f" (drug {drug})" if drug is not None else ""
        raise DataError(f"unknown AMR symbol {s!r} for sample {sample_id!r}{where}")
    return s


def amr_label_similarity(a: str, b: str, sample_id: str = "?") -> int:
    a = parse_symbol(a, sample_id)
    b = parse_symbol(b, sample_id)
    return int(SIMILARITY[_CODE[a], _CODE[b]])


def amr_dissimilarity(p: AmrProfile, q: AmrProfile) -> int:
    """Number of drugs minus the summed per-drug label similarity."""
    if len(p) != len(q):
        raise DataError(
            f"AMR profiles {p.sample_id!r} and {q.sample_id!r} have lengths {len(p)} and {len(q)}"
        )
    return len(p) - int(SIMILARITY[p.codes(), q.codes()].sum())


def amr_matrix(profiles: Sequence[AmrProfile]) -> np.ndarray:
    if not profiles:
        return np.zeros((0, 0))
    n_drugs = len(profiles[0])
    for i, p in enumerate(profiles):
        if len(p) != n_drugs:
            raise DataError(f"profile {i} ({p.sample_id!r}) has {len(p)} drugs, expected {n_drugs}")
    codes = np.vstack([p.codes() for p in profiles])
    onehot = np.eye(len(SYMBOLS), dtype=np.int64)[codes]  # (n, D, 6)
    looked_up = onehot @ SIMILARITY  # row a of the table for each (sample, drug)
    n = len(profiles)
    sim = looked_up.reshape(n, -1) @ onehot.reshape(n, -1).T
    mat = (n_drugs - sim).astype(np.float64)
    np.fill_diagonal(mat, 0.0)
    return mat


def derive_gt_clusters(matrix, threshold: float = AMR_GT_THRESHOLD) -> np.ndarray:
    """Complete-linkage clusters of ``matrix`` cut at ``threshold`` (inclusive)."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return cut_by_threshold(agglomerate_complete(matrix), threshold)


def read_amr_csv(path) -> tuple[list[AmrProfile], list[str]]:
    header, body = _rows(path)
    if not header or header[0] != "id" or len(header) < 2:
        raise DataError(f"{path}: expected header id,<drug>,...")
    drugs = header[1:]
    profiles = []
    for line, row in body:
        try:
            profiles.append(AmrProfile(row[0], tuple(row[1:])))
        except DataError as err:
            raise DataError(f"{path}:{line}: {err}") from None
    return profiles, drugs


def write_amr_csv(path, profiles: Sequence[AmrProfile], drugs: Sequence[str]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *drugs])
        for p in profiles:
            w.writerow([p.sample_id, *p.labels])


def _looks_like_dissim(path) -> bool:
    header, body = _rows(path)
    return header[1:] == [row[0] for _, row in body]


def load_paired_dataset(
    features_path,
    structure_path,
    clusters_path=None,
    *,
    structure: str | None = None,
    gt_threshold: float | None = None,
    label_names: Sequence[str] | None = None,
) -> Dataset:
    """Features plus either a precomputed dissimilarity matrix or AMR profiles.

    ``structure`` is ``"dissim"`` or ``"amr"``; by default it is inferred from
    whether the file's header repeats its row ids. Ground-truth clusters come
    from ``clusters_path`` when given, else from ``gt_threshold`` when given.
    """
    ids, species, x = read_features_csv(features_path)
    kind = structure or ("dissim" if _looks_like_dissim(structure_path) else "amr")
    manifest: dict = {"structure": kind, "source": {"features": str(features_path), "structure": str(structure_path)}}
    if kind == "dissim":
        d_ids, mat = read_dissim_csv(structure_path)
        order = align(ids, d_ids, Path(structure_path).name)
        dissim = mat[np.ix_(order, order)]
        ds_kind = "snp"
    elif kind == "amr":
        profiles, drugs = read_amr_csv(structure_path)
        order = align(ids, [p.sample_id for p in profiles], Path(structure_path).name)
        dissim = amr_matrix([profiles[i] for i in order])
        manifest["n_drugs"] = len(drugs)
        manifest["drugs"] = list(drugs)
        ds_kind = "amr"
    else:
        raise ValueError(f"unknown structure kind {structure!r}")
    dissim = validate_dissimilarity(dissim, ids)

    if label_names:
        lookup = {name: i for i, name in enumerate(label_names)}
        unknown = [s for s in species if s not in lookup]
        if unknown:
            raise DataError(f"species {unknown[0]!r} missing from the label map")
        y = np.array([lookup[s] for s in species], dtype=np.int64)
        names = list(label_names)
    else:
        y, names = dense_labels(species)

    gt = None
    if clusters_path is not None:
        c_ids, labels = read_clusters_csv(clusters_path)
        gt = labels[align(ids, c_ids, Path(clusters_path).name)]
        gt, _ = dense_labels(list(gt))
    elif gt_threshold is not None:
        gt = derive_gt_clusters(dissim, gt_threshold)
        manifest["gt_threshold"] = gt_threshold
    return Dataset(ids=ids, x=x, y=y, label_names=names, dissim=dissim, gt=gt, kind=ds_kind, manifest=manifest)
