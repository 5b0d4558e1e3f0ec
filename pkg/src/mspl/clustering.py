"""Complete-linkage agglomerative clustering and flat cuts of the dendrogram."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import fmt, validate_dissimilarity
from .errors import DataError


@dataclass
class Dendrogram:
    """``merges[i] = (left, right, height, size)`` with leaves ``0..n-1`` and the
    cluster formed by merge ``i`` numbered ``n + i``; heights are non-decreasing."""

    merges: np.ndarray
    n_leaves: int

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["left", "right", "height", "size"])
            for left, right, height, size in self.merges:
                w.writerow([int(left), int(right), fmt(height), int(size)])

    @classmethod
    def from_csv(cls, path) -> Dendrogram:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        merges = np.array([[float(v) for v in r] for r in rows], dtype=np.float64).reshape(-1, 4)
        return cls(merges, len(merges) + 1)


def euclidean_matrix(h, block: int = 256) -> np.ndarray:
    """Exactly symmetric pairwise Euclidean distances between rows of ``h``."""
    h = np.asarray(h, dtype=np.float64)
    n = len(h)
    out = np.empty((n, n))
    for start in range(0, n, block):
        diff = h[start : start + block, None, :] - h[None, :, :]
        out[start : start + block] = np.sqrt((diff * diff).sum(axis=-1))
    return out


def agglomerate_complete(matrix) -> Dendrogram:
    """Nearest-neighbour-chain complete linkage, O(n^2) time and memory.

    Complete linkage is reducible, so the chain algorithm yields the same
    hierarchy as greedy closest-pair merging. Nearest-neighbour ties go to the
    previous chain element, then to the smallest cluster slot.
    """
    try:
        d = validate_dissimilarity(matrix).copy()
    except DataError as err:
        raise DataError(f"agglomerate_complete: {err}") from None
    n = len(d)
    if n == 0:
        raise DataError("agglomerate_complete: empty matrix")
    np.fill_diagonal(d, np.inf)
    active = np.ones(n, dtype=bool)
    node = np.arange(n)  # current dendrogram node held by each slot
    size = np.ones(n, dtype=np.int64)
    found = []
    chain: list[int] = []
    for _ in range(n - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            b = int(np.argmin(d[a]))
            if len(chain) > 1 and d[a, chain[-2]] <= d[a, b]:
                b = chain[-2]
            if len(chain) > 1 and b == chain[-2]:
                break
            chain.append(b)
        chain.pop()
        chain.pop()
        lo, hi = min(a, b), max(a, b)
        height = d[a, b]
        found.append((node[lo], node[hi], height, size[lo] + size[hi]))
        merged = np.maximum(d[lo], d[hi])
        merged[lo] = np.inf
        d[lo] = merged
        d[:, lo] = merged
        d[hi] = np.inf
        d[:, hi] = np.inf
        active[hi] = False
        size[lo] += size[hi]
        node[lo] = n + len(found) - 1  # provisional id, renumbered below
    return _relabel(found, n)


def _relabel(found, n: int) -> Dendrogram:
    """Sort merges by height (stable) and renumber internal nodes in that order."""
    order = sorted(range(len(found)), key=lambda i: found[i][2])
    new_id = {}
    merges = np.zeros((len(found), 4))
    for rank, i in enumerate(order):
        left, right, height, sz = found[i]
        left = new_id.get(left, left)
        right = new_id.get(right, right)
        merges[rank] = (min(left, right), max(left, right), height, sz)
        new_id[n + i] = n + rank
    return Dendrogram(merges, n)


def _apply_merges(dendrogram: Dendrogram, count: int) -> np.ndarray:
    n = dendrogram.n_leaves
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rep = np.concatenate([np.arange(n), np.zeros(max(n - 1, 0), dtype=np.int64)])
    for i in range(count):
        left, right = int(dendrogram.merges[i, 0]), int(dendrogram.merges[i, 1])
        ra, rb = find(rep[left]), find(rep[right])
        parent[max(ra, rb)] = min(ra, rb)
        rep[n + i] = min(ra, rb)
    roots = [find(i) for i in range(n)]
    # dense ids in order of first appearance
    first: dict[int, int] = {}
    return np.array([first.setdefault(r, len(first)) for r in roots], dtype=np.int64)


def cut_by_threshold(dendrogram: Dendrogram, threshold: float) -> np.ndarray:
    """Flat clusters after applying every merge with height <= threshold."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    count = int(np.searchsorted(dendrogram.heights, threshold, side="right"))
    return _apply_merges(dendrogram, count)


def cut_by_count(dendrogram: Dendrogram, n_clusters: int) -> np.ndarray:
    """Exactly ``n_clusters`` flat clusters (the last ``n_clusters - 1`` merges undone)."""
    n = dendrogram.n_leaves
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must lie in [1, {n}], got {n_clusters}")
    return _apply_merges(dendrogram, n - n_clusters)
