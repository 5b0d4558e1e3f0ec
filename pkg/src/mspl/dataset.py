"""In-memory paired dataset and its CSV/JSON file formats.

Files in a dataset directory:

* ``samples.csv``  Synth-TS rows: id, wave_type, f, k, gaussian_id, s0..s{L-1}
* ``features.csv`` generic rows: id, species, f0..f{D-1}
* ``dissim.csv``   dense matrix, header ``id,<id_0>,...`` then one row per id
* ``gt_clusters.csv`` id, cluster_id
* ``manifest.json`` label maps, dimensions, provenance

Floats are written with 17 significant digits so values round-trip exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError


def fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class Dataset:
    ids: list[str]
    x: np.ndarray
    y: np.ndarray
    label_names: list[str]
    dissim: np.ndarray | None = None
    gt: np.ndarray | None = None
    kind: str = "generic"
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        n = len(self.ids)
        if self.x.ndim != 2 or self.x.shape[0] != n or self.y.shape != (n,):
            raise DataError(f"dataset arrays disagree: {n} ids, x {self.x.shape}, y {self.y.shape}")
        if len(set(self.ids)) != n:
            raise DataError("duplicate sample ids")
        if self.dissim is not None:
            self.dissim = validate_dissimilarity(self.dissim, self.ids)
        if self.gt is not None:
            self.gt = np.asarray(self.gt, dtype=np.int64)
            if self.gt.shape != (n,):
                raise DataError(f"ground-truth labels have shape {self.gt.shape}, expected ({n},)")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def species(self) -> list[str]:
        return [self.label_names[i] for i in self.y]

    def subset(self, idx: Sequence[int]) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            ids=[self.ids[i] for i in idx],
            x=self.x[idx],
            y=self.y[idx],
            label_names=list(self.label_names),
            dissim=None if self.dissim is None else self.dissim[np.ix_(idx, idx)],
            gt=None if self.gt is None else self.gt[idx],
            kind=self.kind,
            extra={k: v[idx] for k, v in self.extra.items()},
            manifest=dict(self.manifest),
        )


def validate_dissimilarity(mat, ids: Sequence[str] | None = None) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DataError(f"dissimilarity matrix must be square, got {mat.shape}")
    if ids is not None and mat.shape[0] != len(ids):
        raise DataError(f"dissimilarity matrix is {mat.shape[0]}x{mat.shape[0]} for {len(ids)} ids")
    if not np.all(np.isfinite(mat)):
        raise DataError("dissimilarity matrix has non-finite entries")
    if np.any(mat < 0):
        raise DataError("dissimilarity matrix has negative entries")
    if np.any(np.diag(mat) != 0):
        raise DataError("dissimilarity matrix has a nonzero diagonal")
    if not np.array_equal(mat, mat.T):
        i, j = np.argwhere(mat != mat.T)[0]
        raise DataError(f"dissimilarity matrix is not symmetric at ({i}, {j})")
    return mat


def dense_labels(values: Sequence) -> tuple[np.ndarray, list]:
    """Map arbitrary labels to 0..k-1 in order of first appearance."""
    mapping: dict = {}
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        out[i] = mapping.setdefault(v, len(mapping))
    return out, list(mapping)


# ---------------------------------------------------------------- readers

def _rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = [(reader.line_num, row) for row in reader if row]
    for line, row in body:
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
    return header, body


def _floats(path, line: int, cells: Sequence[str]) -> list[float]:
    try:
        return [float(c) for c in cells]
    except ValueError:
        bad = next(c for c in cells if not _is_float(c))
        raise DataError(f"{path}:{line}: non-numeric value {bad!r}") from None


def _is_float(c: str) -> bool:
    try:
        float(c)
    except ValueError:
        return False
    return True


def read_dissim_csv(path) -> tuple[list[str], np.ndarray]:
    header, body = _rows(path)
    col_ids = header[1:]
    row_ids = [row[0] for _, row in body]
    if row_ids != col_ids:
        missing = sorted(set(col_ids) ^ set(row_ids))
        detail = f"id {missing[0]!r} appears in only one of header/rows" if missing else "row order differs from header"
        raise DataError(f"{path}: {detail}")
    mat = np.array([_floats(path, line, row[1:]) for line, row in body], dtype=np.float64).reshape(len(row_ids), -1)
    return row_ids, mat


def write_dissim_csv(path, ids: Sequence[str], mat: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *ids])
        for i, row in zip(ids, mat):
            w.writerow([i, *(fmt(v) for v in row)])


def read_clusters_csv(path) -> tuple[list[str], np.ndarray]:
    header, body = _rows(path)
    if header[:2] != ["id", "cluster_id"]:
        raise DataError(f"{path}: expected header id,cluster_id")
    ids, labels = [], []
    for line, row in body:
        try:
            labels.append(int(row[1]))
        except ValueError:
            raise DataError(f"{path}:{line}: cluster id {row[1]!r} is not an integer") from None
        ids.append(row[0])
    return ids, np.array(labels, dtype=np.int64)


def write_clusters_csv(path, ids: Sequence[str], labels: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster_id"])
        for i, c in zip(ids, labels):
            w.writerow([i, int(c)])


def read_features_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    header, body = _rows(path)
    if header[:2] != ["id", "species"] or len(header) < 3:
        raise DataError(f"{path}: expected header id,species,f0,...")
    ids = [row[0] for _, row in body]
    species = [row[1] for _, row in body]
    x = np.array([_floats(path, line, row[2:]) for line, row in body], dtype=np.float64)
    return ids, species, x.reshape(len(ids), len(header) - 2)


def write_features_csv(path, ids, species, x) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "species", *(f"f{j}" for j in range(x.shape[1]))])
        for i, s, row in zip(ids, species, x):
            w.writerow([i, s, *(fmt(v) for v in row)])


def write_samples_csv(path, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "wave_type", "f", "k", "gaussian_id", *(f"s{j}" for j in range(ds.x.shape[1]))])
        for r, sid in enumerate(ds.ids):
            w.writerow(
                [
                    sid,
                    ds.label_names[ds.y[r]],
                    fmt(ds.extra["f"][r]),
                    fmt(ds.extra["k"][r]),
                    int(ds.extra["gaussian_id"][r]),
                    *(fmt(v) for v in ds.x[r]),
                ]
            )


def read_samples_csv(path) -> Dataset:
    from .synth_ts import WAVE_TYPES, parameter_distances

    header, body = _rows(path)
    if header[:5] != ["id", "wave_type", "f", "k", "gaussian_id"]:
        raise DataError(f"{path}: expected header id,wave_type,f,k,gaussian_id,s0,...")
    ids, y, fk, cells, rows = [], [], [], [], []
    for line, row in body:
        if row[1] not in WAVE_TYPES:
            raise DataError(f"{path}:{line}: unknown wave type {row[1]!r}")
        ids.append(row[0])
        y.append(WAVE_TYPES.index(row[1]))
        fk.append(_floats(path, line, row[2:4]))
        try:
            cells.append(int(row[4]))
        except ValueError:
            raise DataError(f"{path}:{line}: gaussian_id {row[4]!r} is not an integer") from None
        rows.append(_floats(path, line, row[5:]))
    params = np.array(fk, dtype=np.float64).reshape(-1, 2)
    cells_arr = np.array(cells, dtype=np.int64)
    return Dataset(
        ids=ids,
        x=np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 5),
        y=np.array(y, dtype=np.int64),
        label_names=list(WAVE_TYPES),
        dissim=parameter_distances(params),
        gt=cells_arr,
        kind="synth",
        extra={"f": params[:, 0], "k": params[:, 1], "gaussian_id": cells_arr},
    )


def align(ids: Sequence[str], other_ids: Sequence[str], what: str, subset: bool = False) -> np.ndarray:
    """Indices into ``other_ids`` reordering it to match ``ids``.

    With ``subset`` the other side may hold extra ids, which are ignored.
    """
    pos = {i: n for n, i in enumerate(other_ids)}
    for i in ids:
        if i not in pos:
            raise DataError(f"id {i!r} missing from {what}")
    if not subset and len(other_ids) != len(ids):
        extra = sorted(set(other_ids) - set(ids))
        raise DataError(f"id {extra[0]!r} in {what} has no features" if extra else f"duplicate ids in {what}")
    return np.array([pos[i] for i in ids], dtype=np.int64)


# ---------------------------------------------------------------- directories

def write_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if ds.kind == "synth":
        write_samples_csv(out / "samples.csv", ds)
    else:
        write_features_csv(out / "features.csv", ds.ids, ds.species, ds.x)
    if ds.dissim is not None:
        write_dissim_csv(out / "dissim.csv", ds.ids, ds.dissim)
    if ds.gt is not None:
        write_clusters_csv(out / "gt_clusters.csv", ds.ids, ds.gt)
    manifest = dict(ds.manifest)
    manifest.update(
        kind=ds.kind,
        n_samples=len(ds),
        input_length=int(ds.x.shape[1]),
        label_to_id={name: i for i, name in enumerate(ds.label_names)},
    )
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset_dir(path) -> Dataset:
    """Load a directory written by :func:`write_dataset` or the ``ingest`` command."""
    from .amr_data import load_paired_dataset

    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root}: not a dataset directory")
    manifest = {}
    if (root / "manifest.json").exists():
        manifest = json.loads((root / "manifest.json").read_text())
    if (root / "samples.csv").exists():
        ds = read_samples_csv(root / "samples.csv")
        if (root / "dissim.csv").exists():
            ids, mat = read_dissim_csv(root / "dissim.csv")
            order = align(ds.ids, ids, "dissim.csv")
            ds.dissim = validate_dissimilarity(mat[np.ix_(order, order)], ds.ids)
    else:
        structure = root / "dissim.csv" if (root / "dissim.csv").exists() else root / "amr.csv"
        gt_path = root / "gt_clusters.csv"
        ds = load_paired_dataset(
            root / "features.csv",
            structure,
            clusters_path=gt_path if gt_path.exists() else None,
            label_names=list(manifest.get("label_to_id", {})) or None,
        )
    ds.manifest = manifest
    ds.kind = manifest.get("kind", ds.kind)
    return ds


def write_embeddings_csv(path, ids: Sequence[str], h: np.ndarray) -> None:
    h = np.asarray(h, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"h{j}" for j in range(h.shape[1]))])
        for sid, row in zip(ids, h):
            w.writerow([sid, *(fmt(v) for v in row)])


def read_embeddings_csv(path) -> tuple[list[str], np.ndarray]:
    header, body = _rows(path)
    if not header or header[0] != "id":
        raise DataError(f"{path}: expected header id,h0,...")
    ids = [row[0] for _, row in body]
    h = np.array([_floats(path, line, row[1:]) for line, row in body], dtype=np.float64)
    return ids, h.reshape(len(ids), len(header) - 1)
