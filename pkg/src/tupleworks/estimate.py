"""Arm means, contrast estimates, and factorial contrast builders.

Contrast specs accepted by :func:`parse_contrast`::

    main:k            generating vector of factor k
    inter:1,2         interaction (element-wise product of generating vectors)
    cond:1|2=+1       effect of factor 1 with factor 2 held at +1
    pair:d,d0         arm d minus arm d0
    rows:-1,1,0;-1,0,1  explicit matrix rows

``main`` and ``inter`` accept a ``;rescale`` suffix applying 2^-(K-1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Contrast, DesignError, FactorSpace, Sample


@dataclass(frozen=True, eq=False)
class GammaHat:
    values: np.ndarray
    n: int
    counts: np.ndarray


def gamma_hat(sample: Sample) -> GammaHat:
    """Per-arm sample means of the observed outcomes."""
    arm, y = sample.require_observed()
    counts = np.bincount(arm - 1, minlength=sample.num_arms)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DesignError(f"arm {int(empty[0]) + 1} has no observations")
    sums = np.bincount(arm - 1, weights=y, minlength=sample.num_arms)
    return GammaHat(sums / counts, sample.n_units // sample.num_arms, counts)


def delta_hat(g: GammaHat, nu: Contrast) -> np.ndarray:
    if nu.num_arms != g.values.size:
        raise DesignError(f"contrast has {nu.num_arms} columns but there are {g.values.size} arms")
    return nu.matrix @ g.values


def main_effect_contrast(k: int, fs: FactorSpace, rescale: bool = False) -> Contrast:
    if not 1 <= k <= fs.K:
        raise DesignError(f"factor {k} out of range 1..{fs.K}")
    row = fs.level_table[:, k - 1].astype(np.float64)
    if rescale:
        row = row * 2.0 ** -(fs.K - 1)
    return Contrast(row, f"main:{k}")


def interaction_contrast(factors, fs: FactorSpace, rescale: bool = False) -> Contrast:
    factors = sorted({int(f) for f in factors})
    if not factors:
        raise DesignError("interaction needs at least one factor")
    row = np.ones(fs.arm_count)
    for k in factors:
        row = row * main_effect_contrast(k, fs).matrix[0]
    if rescale:
        row = row * 2.0 ** -(fs.K - 1)
    return Contrast(row, "inter:" + ",".join(map(str, factors)))


def conditional_effect_contrast(k: int, fixed: dict[int, int], fs: FactorSpace) -> Contrast:
    """Effect of factor ``k`` among arms whose other factors match ``fixed``.

    Weights are +-1 divided by the number of matching arms with factor k at +1.
    """
    if not 1 <= k <= fs.K:
        raise DesignError(f"factor {k} out of range 1..{fs.K}")
    if k in fixed:
        raise DesignError(f"factor {k} cannot be both varied and held fixed")
    for f, lv in fixed.items():
        if not 1 <= f <= fs.K or lv not in (-1, 1):
            raise DesignError(f"invalid fixed level {f}={lv}")
    table = fs.level_table
    match = np.ones(fs.arm_count, dtype=bool)
    for f, lv in fixed.items():
        match &= table[:, f - 1] == lv
    row = np.where(match, table[:, k - 1], 0).astype(np.float64)
    row /= np.count_nonzero(row > 0)
    label = f"cond:{k}" + ("|" + ",".join(f"{f}={lv:+d}" for f, lv in sorted(fixed.items())) if fixed else "")
    return Contrast(row, label)


def pairwise_contrast(d: int, d0: int, num_arms: int) -> Contrast:
    if d == d0:
        raise DesignError("pairwise contrast needs two distinct arms")
    for a in (d, d0):
        if not 1 <= a <= num_arms:
            raise DesignError(f"arm {a} out of range 1..{num_arms}")
    row = np.zeros(num_arms)
    row[d - 1] = 1.0
    row[d0 - 1] = -1.0
    return Contrast(row, f"pair:{d},{d0}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise DesignError(f"expected comma-separated integers, got {text!r}") from None


def parse_contrast(spec, num_arms: int) -> Contrast:
    """Build a contrast from a DSL string or an explicit list of rows."""
    if not isinstance(spec, str):
        c = Contrast(np.asarray(spec, dtype=np.float64), "rows")
        if c.num_arms != num_arms:
            raise DesignError(f"contrast has {c.num_arms} columns, expected {num_arms}")
        return c
    kind, sep, body = spec.strip().partition(":")
    if not sep:
        raise DesignError(f"unknown contrast token {spec!r}")
    if kind == "rows":
        try:
            rows = [[float(v) for v in r.split(",")] for r in body.split(";")]
        except ValueError:
            raise DesignError(f"bad explicit contrast {spec!r}") from None
        return parse_contrast(rows, num_arms)
    body, _, flag = body.partition(";")
    rescale = flag.strip() == "rescale"
    if flag and not rescale:
        raise DesignError(f"unknown contrast flag {flag!r}")
    if kind == "pair":
        parts = _ints(body)
        if len(parts) != 2:
            raise DesignError("pair contrast needs exactly two arms")
        return pairwise_contrast(parts[0], parts[1], num_arms)
    fs = FactorSpace.from_num_arms(num_arms)
    if kind == "main":
        parts = _ints(body)
        if len(parts) != 1:
            raise DesignError("main contrast takes a single factor")
        return main_effect_contrast(parts[0], fs, rescale)
    if kind == "inter":
        return interaction_contrast(_ints(body), fs, rescale)
    if kind == "cond":
        head, _, rest = body.partition("|")
        fixed = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            f, eq, lv = item.partition("=")
            if not eq:
                raise DesignError(f"bad fixed level {item!r}")
            try:
                fixed[int(f)] = int(lv)
            except ValueError:
                raise DesignError(f"bad fixed level {item!r}") from None
        parts = _ints(head)
        if len(parts) != 1:
            raise DesignError("cond contrast takes a single varied factor")
        return conditional_effect_contrast(parts[0], fixed, fs)
    raise DesignError(f"unknown contrast token {kind!r}; use main, inter, cond, pair or rows")
