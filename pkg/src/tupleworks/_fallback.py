"""Pure numpy/Python versions of the compiled kernels in ``_kernels.pyx``.

Distances accumulate one coordinate at a time, in the same order as the
compiled loops, so both backends produce identical floats.
"""
from __future__ import annotations

import numpy as np


def pair_sqdist(x: np.ndarray) -> np.ndarray:
    m = x.shape[0]
    i, j = np.triu_indices(m, k=1)
    acc = np.zeros(i.size, dtype=np.float64)
    for k in range(x.shape[1]):
        diff = x[i, k] - x[j, k]
        acc += diff * diff
    return acc


def greedy_scan(order: np.ndarray, m: int) -> np.ndarray:
    i, j = np.triu_indices(m, k=1)
    first, second = i[order], j[order]
    used = [False] * m
    pairs = []
    need = m // 2
    for a, b in zip(first.tolist(), second.tolist()):
        if used[a] or used[b]:
            continue
        used[a] = used[b] = True
        pairs.append((a, b))
        if len(pairs) == need:
            break
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def block_max_sqdist(x: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    acc = np.zeros((left.shape[0], left.shape[1], right.shape[1]), dtype=np.float64)
    for k in range(x.shape[1]):
        diff = x[left, k][:, :, None] - x[right, k][:, None, :]
        acc += diff * diff
    return acc.reshape(left.shape[0], -1).max(axis=1, initial=0.0)
