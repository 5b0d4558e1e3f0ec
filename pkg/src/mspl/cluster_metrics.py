"""Cluster-similarity metrics and a 2-D classical MDS projection.

Cluster precision is the mean purity of predicted clusters against the
ground truth, recall the mean purity of ground-truth clusters against the
prediction. Both are evaluated only on samples whose ground-truth cluster has
at least two members. Undefined outcomes are ``None``, never 0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dataset import validate_dissimilarity


def _as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {arr.shape}")
    return arr


def contingency(pred, gt) -> np.ndarray:
    pred, gt = _as_labels(pred), _as_labels(gt)
    if len(pred) != len(gt):
        raise ValueError(f"partitions cover {len(pred)} and {len(gt)} samples")
    _, p = np.unique(pred, return_inverse=True)
    _, g = np.unique(gt, return_inverse=True)
    table = np.zeros((p.max() + 1 if len(p) else 0, g.max() + 1 if len(g) else 0), dtype=np.int64)
    np.add.at(table, (p, g), 1)
    return table


def purity(members: Sequence[int], labels) -> float:
    """Share of the cluster ``members`` carrying their most common label."""
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("purity of an empty cluster is undefined")
    _, counts = np.unique(_as_labels(labels)[members], return_counts=True)
    return counts.max() / members.size


def non_singleton_mask(gt) -> np.ndarray:
    gt = _as_labels(gt)
    _, inv, counts = np.unique(gt, return_inverse=True, return_counts=True)
    return counts[inv] >= 2


def cluster_prf(pred, gt, filter_singletons: bool = True) -> tuple[float | None, float | None, float | None]:
    """Cluster precision, recall, F1 of ``pred`` with respect to ``gt``."""
    pred, gt = _as_labels(pred), _as_labels(gt)
    if filter_singletons:
        keep = non_singleton_mask(gt)
        pred, gt = pred[keep], gt[keep]
    if len(gt) == 0:
        return None, None, None
    table = contingency(pred, gt)
    precision = float(np.mean(table.max(axis=1) / table.sum(axis=1)))
    recall = float(np.mean(table.max(axis=0) / table.sum(axis=0)))
    return precision, recall, harmonic_mean(precision, recall)


def harmonic_mean(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(pred, gt) -> float:
    table = contingency(pred, gt)
    n = table.sum()
    index = _comb2(table).sum()
    a = _comb2(table.sum(axis=1)).sum()
    b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = a * b / total if total else 0.0
    maximum = (a + b) / 2.0
    if maximum == expected:
        # both partitions trivial (all singletons or one cluster)
        return 1.0 if a == b else 0.0
    return float((index - expected) / (maximum - expected))


def _entropy_from_counts(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def shannon_entropy(labels) -> float:
    """Natural-log entropy of the cluster proportions within ``labels``."""
    labels = _as_labels(labels)
    if labels.size == 0:
        raise ValueError("entropy of an empty subset is undefined")
    _, counts = np.unique(labels, return_counts=True)
    return _entropy_from_counts(counts)


def mutual_information(pred, gt) -> float:
    table = contingency(pred, gt).astype(np.float64)
    n = table.sum()
    if n == 0:
        return 0.0
    pij = table / n
    pi = pij.sum(axis=1, keepdims=True)
    pj = pij.sum(axis=0, keepdims=True)
    nz = pij > 0
    return float((pij[nz] * np.log(pij[nz] / (pi @ pj)[nz])).sum())


def nmi(pred, gt) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    h_pred = shannon_entropy(pred)
    h_gt = shannon_entropy(gt)
    if h_pred == 0.0 and h_gt == 0.0:
        return 1.0
    value = mutual_information(pred, gt) / ((h_pred + h_gt) / 2.0)
    return float(min(max(value, 0.0), 1.0))


def lift(f1_mspl: float | None, f1_baseline: float | None) -> float | None:
    if f1_mspl is None or f1_baseline is None or f1_baseline <= 0:
        return None
    return f1_mspl / f1_baseline


@dataclass
class MetricReport:
    ari: float | None
    nmi: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    pretext_accuracy: float | None
    n_predicted_clusters: int
    n_gt_clusters: int
    n_evaluated_samples: int

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_partition(pred, gt, pretext_accuracy: float | None = None) -> MetricReport:
    """All cluster metrics on the non-singleton ground-truth subset."""
    pred, gt = _as_labels(pred), _as_labels(gt)
    keep = non_singleton_mask(gt)
    p, g = pred[keep], gt[keep]
    if len(g) == 0:
        return MetricReport(None, None, None, None, None, pretext_accuracy, 0, 0, 0)
    precision, recall, f1 = cluster_prf(p, g, filter_singletons=False)
    return MetricReport(
        ari=ari(p, g),
        nmi=nmi(p, g),
        precision=precision,
        recall=recall,
        f1=f1,
        pretext_accuracy=pretext_accuracy,
        n_predicted_clusters=int(len(np.unique(p))),
        n_gt_clusters=int(len(np.unique(g))),
        n_evaluated_samples=int(len(g)),
    )


# ---------------------------------------------------------------- MDS

def double_center(matrix) -> np.ndarray:
    d2 = np.asarray(matrix, dtype=np.float64) ** 2
    return -0.5 * (d2 - d2.mean(axis=0, keepdims=True) - d2.mean(axis=1, keepdims=True) + d2.mean())


def _power(b: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray, bool]:
    n = len(b)
    # fixed, generic start vector
    v = np.cos(np.arange(1, n + 1) * 0.7548776662466927) + 0.5
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = b @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * max(abs(lam), 1e-300):
            return lam, v, True
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v, True
        v = w / norm
    return lam, v, False


def _top_eigenpair(b: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    """Largest algebraic eigenpair of symmetric ``b``."""
    lam, v, ok = _power(b, tol, max_iter)
    if ok and lam >= 0:
        return lam, v
    # dominant eigenvalue negative (or +/- pair): shift the spectrum to be nonnegative
    shift = float(np.abs(b).sum(axis=1).max())
    lam, v, _ = _power(b + shift * np.eye(len(b)), tol, max_iter)
    return lam - shift, v


def classical_mds(matrix, dims: int = 2, tol: float = 1e-10, max_iter: int = 20_000) -> np.ndarray:
    """Torgerson scaling by shifted power iteration with deflation.

    Axes whose eigenvalue is not positive are returned as zeros.
    """
    mat = validate_dissimilarity(matrix)
    n = len(mat)
    coords = np.zeros((n, dims))
    if n == 0:
        return coords
    b = double_center(mat)
    scale = float(np.abs(b).max())
    if scale == 0.0:
        return coords
    for axis in range(min(dims, n)):
        lam, v = _top_eigenpair(b, tol, max_iter)
        if lam <= 1e-12 * scale:
            break
        # deterministic sign: largest-magnitude component positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        coords[:, axis] = v * math.sqrt(lam)
        b = b - lam * np.outer(v, v)
    return coords
