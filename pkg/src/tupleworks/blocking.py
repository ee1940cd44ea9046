"""Forming homogeneous blocks from covariates, and measuring how homogeneous they are."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._accel import get_kernels
from .core import BlockPartition, DesignError, Sample

log = logging.getLogger(__name__)

EXACT_MATCH_LIMIT = 14


@dataclass(frozen=True)
class BlockDiagnostics:
    """Average worst-case within-block and adjacent-block squared distances."""

    within_stat: float
    adjacent_stat: float
    dropped_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "within_stat": self.within_stat,
            "adjacent_stat": self.adjacent_stat,
            "dropped_ids": list(self.dropped_ids),
        }


def _sort_order(values: np.ndarray, ids) -> np.ndarray:
    # primary key last for lexsort
    return np.lexsort((np.asarray(ids, dtype=str), values))


def _check_covariate(sample: Sample, covariate_index: int) -> None:
    if not 0 <= covariate_index < sample.dim:
        raise DesignError(
            f"covariate index {covariate_index} out of range for {sample.dim} covariates"
        )


def block_by_ordering(sample: Sample, tuple_size: int, covariate_index: int = 0) -> BlockPartition:
    """Sort units on one covariate (ties by id) and cut the sorted list into runs."""
    _check_covariate(sample, covariate_index)
    if tuple_size < 1 or sample.n_units % tuple_size:
        raise DesignError(
            f"{sample.n_units} units cannot be split into blocks of {tuple_size}"
        )
    order = _sort_order(sample.covariates[:, covariate_index], sample.ids)
    return BlockPartition(order.reshape(-1, tuple_size))


def block_prestratified(
    sample: Sample, strata_labels, tuple_size: int, covariate_index: int = 0
) -> tuple[Sample, BlockPartition]:
    """Block by ordering within each stratum.

    Strata are visited in sorted label order. In each stratum the last
    ``count % tuple_size`` units of the sorted order are dropped; the returned
    sample holds only kept units and records the dropped ids.
    """
    _check_covariate(sample, covariate_index)
    labels = np.asarray(strata_labels)
    if labels.shape != (sample.n_units,):
        raise DesignError("one stratum label per unit is required")
    if tuple_size < 1:
        raise DesignError("tuple_size must be positive")
    x = sample.covariates[:, covariate_index]
    blocks_orig: list[np.ndarray] = []
    dropped: list[int] = []
    for s in np.unique(labels):
        idx = np.flatnonzero(labels == s)
        idx = idx[_sort_order(x[idx], [sample.ids[i] for i in idx])]
        keep = idx.size - idx.size % tuple_size
        dropped.extend(idx[keep:].tolist())
        if keep:
            blocks_orig.extend(idx[:keep].reshape(-1, tuple_size))
    if not blocks_orig:
        raise DesignError("no stratum has enough units for a single block")
    kept = np.sort(np.concatenate(blocks_orig))
    new_pos = np.full(sample.n_units, -1, dtype=np.int64)
    new_pos[kept] = np.arange(kept.size)
    sub = sample.subset(kept, dropped=[sample.ids[i] for i in sorted(dropped)])
    if dropped:
        log.info("pre-stratification dropped %d unit(s)", len(dropped))
    return sub, BlockPartition(new_pos[np.array(blocks_orig)])


def _as_points(points) -> np.ndarray:
    x = np.ascontiguousarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None].copy()
    if x.ndim != 2:
        raise DesignError("points must be a (m, p) array")
    return x


def greedy_nonbipartite_match(points, backend: str | None = None) -> list[tuple[int, int]]:
    """Perfect matching by repeatedly taking the closest free pair.

    Distances are squared Euclidean; ties go to the lexicographically smallest
    index pair. Pairs are returned in the order they were formed.
    """
    x = _as_points(points)
    m = x.shape[0]
    if m % 2:
        raise DesignError(f"cannot perfectly match an odd number ({m}) of points")
    if m == 0:
        return []
    k = get_kernels(backend)
    d = k.pair_sqdist(x)
    # condensed order is already (i, j)-lexicographic, so a stable sort breaks ties correctly
    order = np.argsort(d, kind="stable").astype(np.int64)
    pairs = k.greedy_scan(order, m)
    return [(int(a), int(b)) for a, b in pairs]


def exact_nonbipartite_match(points) -> list[tuple[int, int]]:
    """Minimum total squared-distance perfect matching by exhaustive search.

    Among optimal matchings the lexicographically smallest pairing (lowest
    free index matched to its lowest admissible partner first) is returned.
    """
    x = _as_points(points)
    m = x.shape[0]
    if m % 2:
        raise DesignError(f"cannot perfectly match an odd number ({m}) of points")
    if m > EXACT_MATCH_LIMIT:
        raise DesignError(f"exact matching is limited to {EXACT_MATCH_LIMIT} points, got {m}")
    diff = x[:, None, :] - x[None, :, :]
    dist = (diff * diff).sum(axis=2).tolist()
    full = (1 << m) - 1

    @lru_cache(maxsize=None)
    def best(mask: int) -> tuple[float, tuple]:
        if mask == full:
            return 0.0, ()
        i = 0
        while mask >> i & 1:
            i += 1
        top = (float("inf"), ())
        for j in range(i + 1, m):
            if mask >> j & 1:
                continue
            cost, rest = best(mask | 1 << i | 1 << j)
            cost += dist[i][j]
            if cost < top[0]:
                top = (cost, ((i, j),) + rest)
        return top

    return list(best(0)[1])


def matching_cost(points, pairs) -> float:
    x = _as_points(points)
    return float(sum(((x[a] - x[b]) ** 2).sum() for a, b in pairs))


def standardize(covariates: np.ndarray, mahalanobis: str = "diag") -> np.ndarray:
    """Map covariates so Euclidean distance equals the chosen Mahalanobis distance."""
    x = np.asarray(covariates, dtype=np.float64)
    if x.shape[0] < 2:
        return x.copy()
    centered = x - x.mean(axis=0)
    if mahalanobis == "diag":
        sd = centered.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        return centered / sd
    if mahalanobis == "full":
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        w, v = np.linalg.eigh(cov)
        keep = w > w.max() * 1e-12 if w.max() > 0 else np.zeros_like(w, dtype=bool)
        inv_sqrt = (v[:, keep] / np.sqrt(w[keep])) @ v[:, keep].T
        return centered @ inv_sqrt
    raise DesignError(f"unknown mahalanobis mode {mahalanobis!r}; use 'diag' or 'full'")


def block_recursive_pairing(
    sample: Sample,
    K: int,
    mahalanobis: str = "diag",
    matcher: str = "greedy",
    backend: str | None = None,
) -> BlockPartition:
    """Blocks of size 2^K built by matching pairs, then pairs of pairs, and so on.

    Level 0 matches units on standardized covariates; each later level matches
    the groups formed so far on their mean standardized covariates. Final
    blocks are ordered by the mean of the first raw covariate.
    """
    if K < 0:
        raise DesignError("K must be non-negative")
    size = 2**K
    if sample.n_units % size:
        raise DesignError(f"{sample.n_units} units cannot be split into blocks of {size}")
    if matcher == "greedy":
        match = lambda pts: greedy_nonbipartite_match(pts, backend=backend)  # noqa: E731
    elif matcher == "exact":
        match = exact_nonbipartite_match
    else:
        raise DesignError(f"unknown matcher {matcher!r}")
    z = standardize(sample.covariates, mahalanobis)
    groups = [np.array([i]) for i in range(sample.n_units)]
    for _ in range(K):
        centers = np.array([z[g].mean(axis=0) for g in groups])
        pairs = match(centers)
        groups = [np.sort(np.concatenate((groups[a], groups[b]))) for a, b in pairs]
    first = sample.covariates[:, 0]
    groups.sort(key=lambda g: (first[g].mean(), g.min()))
    return BlockPartition(np.array(groups, dtype=np.int64).reshape(-1, size))


def diagnose(sample: Sample, partition: BlockPartition, backend: str | None = None) -> BlockDiagnostics:
    """Within-block and adjacent-block quality statistics, both normalized by 1/n."""
    partition.check_sample(sample)
    k = get_kernels(backend)
    x = np.ascontiguousarray(sample.covariates)
    members = np.ascontiguousarray(partition.members)
    n = partition.n_blocks
    within = k.block_max_sqdist(x, members, members)
    half = n // 2
    if half:
        adj = k.block_max_sqdist(
            x, np.ascontiguousarray(members[0 : 2 * half : 2]), np.ascontiguousarray(members[1 : 2 * half : 2])
        )
        adjacent = float(adj.sum() / n)
    else:
        adjacent = 0.0
    return BlockDiagnostics(float(within.sum() / n), adjacent, sample.dropped_ids)
