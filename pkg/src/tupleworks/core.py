"""Shared data model: samples, block partitions, factor spaces and contrasts.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be handed to worker threads without copying.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DesignError(ValueError):
    """Raised when inputs violate a structural requirement of a design."""


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Sample:
    """Unit records: ids, covariates, and optionally assigned arms and outcomes.

    ``arm`` holds 1-based arm labels. ``outcome`` and ``arm`` stay ``None``
    until an assignment is made or outcomes are revealed.
    """

    ids: tuple[str, ...]
    covariates: np.ndarray
    num_arms: int
    arm: np.ndarray | None = None
    outcome: np.ndarray | None = None
    dropped_ids: tuple[str, ...] = ()

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.ndim != 2 or cov.shape[1] < 1:
            raise DesignError("covariates must be a (units, p) array with p >= 1")
        n_units = cov.shape[0]
        if n_units == 0:
            raise DesignError("sample has no units")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != n_units:
            raise DesignError(f"{len(ids)} ids for {n_units} covariate rows")
        if len(set(ids)) != n_units:
            raise DesignError("unit ids must be unique")
        if self.num_arms < 1:
            raise DesignError("num_arms must be >= 1")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariates", _frozen(cov))
        object.__setattr__(self, "dropped_ids", tuple(str(i) for i in self.dropped_ids))
        if self.arm is not None:
            arm = np.asarray(self.arm)
            if arm.shape != (n_units,):
                raise DesignError(f"arm vector has length {arm.size}, expected {n_units}")
            if not np.all(np.equal(np.mod(arm, 1), 0)):
                raise DesignError("arm labels must be integers")
            arm = arm.astype(np.int64)
            if arm.min() < 1 or arm.max() > self.num_arms:
                raise DesignError(f"arm labels must lie in 1..{self.num_arms}")
            object.__setattr__(self, "arm", _frozen(arm))
        if self.outcome is not None:
            y = np.asarray(self.outcome, dtype=np.float64)
            if y.shape != (n_units,):
                raise DesignError(f"outcome vector has length {y.size}, expected {n_units}")
            object.__setattr__(self, "outcome", _frozen(y))

    @property
    def n_units(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]

    def with_arms(self, arm) -> "Sample":
        return Sample(self.ids, self.covariates, self.num_arms, arm, self.outcome, self.dropped_ids)

    def with_outcome(self, outcome) -> "Sample":
        return Sample(self.ids, self.covariates, self.num_arms, self.arm, outcome, self.dropped_ids)

    def subset(self, index: Sequence[int], dropped: Iterable[str] = ()) -> "Sample":
        """Return the units at ``index`` (in that order), recording ``dropped`` ids."""
        index = np.asarray(index, dtype=np.int64)
        return Sample(
            tuple(self.ids[i] for i in index),
            self.covariates[index],
            self.num_arms,
            None if self.arm is None else self.arm[index],
            None if self.outcome is None else self.outcome[index],
            self.dropped_ids + tuple(dropped),
        )

    def require_observed(self) -> tuple[np.ndarray, np.ndarray]:
        if self.arm is None:
            raise DesignError("sample has no assigned arms")
        if self.outcome is None:
            raise DesignError("sample has no observed outcomes")
        return self.arm, self.outcome


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Ordered blocks of equal size.

    ``members`` is an ``(n_blocks, tuple_size)`` array of 0-based unit
    indices; row order is the block order used by adjacent-block estimators.
    """

    members: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.members)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise DesignError("members must be a non-empty (n_blocks, tuple_size) array")
        m = m.astype(np.int64)
        flat = np.sort(m.ravel())
        if flat[0] != 0 or not np.array_equal(flat, np.arange(flat.size)):
            raise DesignError("blocks must be disjoint and cover units 0..J-1 exactly")
        object.__setattr__(self, "members", _frozen(m))

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[int]]) -> "BlockPartition":
        sizes = {len(b) for b in blocks}
        if len(sizes) != 1:
            raise DesignError(f"blocks have unequal sizes {sorted(sizes)}")
        return cls(np.array([list(b) for b in blocks], dtype=np.int64))

    @property
    def n_blocks(self) -> int:
        return self.members.shape[0]

    @property
    def tuple_size(self) -> int:
        return self.members.shape[1]

    @property
    def n_units(self) -> int:
        return self.members.size

    @property
    def blocks(self) -> list[tuple[int, ...]]:
        return [tuple(int(i) for i in row) for row in self.members]

    def block_of_unit(self) -> np.ndarray:
        """Block index (0-based) of every unit."""
        out = np.empty(self.n_units, dtype=np.int64)
        out[self.members.ravel()] = np.repeat(np.arange(self.n_blocks), self.tuple_size)
        return out

    def check_sample(self, sample: Sample) -> None:
        if self.n_units != sample.n_units:
            raise DesignError(
                f"partition covers {self.n_units} units but sample has {sample.n_units}"
            )


class FactorSpace:
    """The 2^K arms of a full factorial, in lexicographic level order.

    Arm 1 is (-1, ..., -1); the last factor varies fastest, so for K=2 the
    arms are (-1,-1), (-1,+1), (+1,-1), (+1,+1).
    """

    def __init__(self, K: int):
        if int(K) != K or K < 1:
            raise DesignError("K must be a positive integer")
        self.K = int(K)
        self.arm_count = 2**self.K
        self.level_table = np.array(
            list(itertools.product((-1, 1), repeat=self.K)), dtype=np.int64
        )
        self.level_table.flags.writeable = False

    def __repr__(self):
        return f"FactorSpace(K={self.K})"

    def arm_of_levels(self, levels) -> int:
        lv = np.asarray(levels)
        if lv.shape != (self.K,):
            raise DesignError(f"expected {self.K} factor levels, got shape {lv.shape}")
        if not np.all((lv == 1) | (lv == -1)):
            raise DesignError("factor levels must be -1 or +1")
        return int(self.arms_of_levels(lv[None, :])[0])

    def arms_of_levels(self, levels: np.ndarray) -> np.ndarray:
        """Vectorized ``arm_of_levels`` over the rows of a (units, K) array."""
        bits = (np.asarray(levels) > 0).astype(np.int64)
        weights = 2 ** np.arange(self.K - 1, -1, -1)
        return bits @ weights + 1

    def levels_of_arm(self, arm: int) -> tuple[int, ...]:
        if int(arm) != arm or not 1 <= arm <= self.arm_count:
            raise DesignError(f"arm must lie in 1..{self.arm_count}")
        return tuple(int(v) for v in self.level_table[int(arm) - 1])

    @staticmethod
    def from_num_arms(num_arms: int) -> "FactorSpace":
        K = int(round(np.log2(num_arms))) if num_arms > 1 else 0
        if K < 1 or 2**K != num_arms:
            raise DesignError(f"{num_arms} arms is not a 2^K factorial")
        return FactorSpace(K)


def arm_of_levels(levels, fs: FactorSpace) -> int:
    return fs.arm_of_levels(levels)


def levels_of_arm(arm: int, fs: FactorSpace) -> tuple[int, ...]:
    return fs.levels_of_arm(arm)


@dataclass(frozen=True, eq=False)
class Contrast:
    """An m x num_arms matrix defining the parameter nu @ Gamma."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim == 1:
            m = m[None, :]
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise DesignError("contrast must be a non-empty m x num_arms matrix")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_arms(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class PotentialOutcomes:
    """All potential outcomes: ``table[i, d-1]`` is Y_i(d)."""

    covariates: np.ndarray
    table: np.ndarray
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.ndim == 1:
            cov = cov[:, None]
        tab = np.asarray(self.table, dtype=np.float64)
        if tab.ndim != 2 or tab.shape[0] != cov.shape[0]:
            raise DesignError("potential outcome table must be (units, num_arms)")
        ids = self.ids or tuple(f"u{i + 1}" for i in range(cov.shape[0]))
        object.__setattr__(self, "covariates", _frozen(cov))
        object.__setattr__(self, "table", _frozen(tab))
        object.__setattr__(self, "ids", tuple(str(i) for i in ids))

    @property
    def n_units(self) -> int:
        return self.table.shape[0]

    @property
    def num_arms(self) -> int:
        return self.table.shape[1]


def reveal(po: PotentialOutcomes, assignment) -> Sample:
    """Observed sample under ``assignment`` (1-based arms); other outcomes are discarded."""
    arm = np.asarray(assignment)
    if arm.shape != (po.n_units,):
        raise DesignError(f"assignment has length {arm.size}, expected {po.n_units}")
    arm = arm.astype(np.int64)
    if arm.min() < 1 or arm.max() > po.num_arms:
        raise DesignError(f"arm labels must lie in 1..{po.num_arms}")
    y = po.table[np.arange(po.n_units), arm - 1]
    return Sample(po.ids, po.covariates, po.num_arms, arm, y)


# --------------------------------------------------------------------------
# CSV interchange

_RESERVED = ("id", "arm", "y")


def read_sample_csv(
    source, num_arms: int | None = None, strata_col: str | None = None
) -> tuple[Sample, np.ndarray | None]:
    """Parse ``id,x1,...,xp[,arm][,y]``; returns the sample and optional strata labels.

    Any column other than ``id``, ``arm``, ``y`` and ``strata_col`` is a
    covariate, in file order.
    """
    text = Path(source).read_text(encoding="utf-8") if not hasattr(source, "read") else source.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DesignError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if "id" not in header:
        raise DesignError("missing column 'id'")
    if strata_col is not None and strata_col not in header:
        raise DesignError(f"missing column '{strata_col}'")
    cov_cols = [h for h in header if h not in _RESERVED and h != strata_col]
    if not cov_cols:
        raise DesignError("no covariate columns")
    col = {h: k for k, h in enumerate(header)}
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    ids, cov, arms, ys, strata = [], [], [], [], []
    for line_no, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DesignError(f"row {line_no}: expected {len(header)} fields, got {len(r)}")
        ids.append(r[col["id"]].strip())
        try:
            cov.append([float(r[col[h]]) for h in cov_cols])
        except ValueError as exc:
            raise DesignError(f"row {line_no}: non-numeric covariate ({exc})") from None
        try:
            if "arm" in col:
                arms.append(int(r[col["arm"]]))
            if "y" in col:
                ys.append(float(r[col["y"]]))
        except ValueError as exc:
            raise DesignError(f"row {line_no}: bad arm/outcome value ({exc})") from None
        if strata_col is not None:
            strata.append(r[col[strata_col]].strip())
    if not ids:
        raise DesignError("CSV has no data rows")
    arm = np.array(arms, dtype=np.int64) if arms else None
    if num_arms is None:
        num_arms = int(arm.max()) if arm is not None else 2
    sample = Sample(tuple(ids), np.array(cov), num_arms, arm, np.array(ys) if ys else None)
    return sample, (np.array(strata) if strata_col is not None else None)


def write_sample_csv(path, sample: Sample, cov_names: Sequence[str] | None = None) -> None:
    names = list(cov_names or [f"x{k + 1}" for k in range(sample.dim)])
    header = ["id", *names]
    if sample.arm is not None:
        header.append("arm")
    if sample.outcome is not None:
        header.append("y")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, uid in enumerate(sample.ids):
            row = [uid, *(repr(float(v)) for v in sample.covariates[i])]
            if sample.arm is not None:
                row.append(int(sample.arm[i]))
            if sample.outcome is not None:
                row.append(repr(float(sample.outcome[i])))
            w.writerow(row)


def write_partition_csv(path, sample: Sample, partition: BlockPartition) -> None:
    partition.check_sample(sample)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "block"])
        for j, row in enumerate(partition.members, start=1):
            for i in row:
                w.writerow([sample.ids[i], j])


def read_partition_csv(path, sample: Sample) -> BlockPartition:
    """Read ``id,block``; blocks are ordered by numeric label when all labels are integers."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]][:2] != ["id", "block"]:
        raise DesignError("partition CSV must have header 'id,block'")
    index = {uid: k for k, uid in enumerate(sample.ids)}
    groups: dict[str, list[int]] = {}
    for line_no, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        uid, label = r[0].strip(), r[1].strip()
        if uid not in index:
            raise DesignError(f"row {line_no}: unknown unit id '{uid}'")
        groups.setdefault(label, []).append(index[uid])
    labels = list(groups)
    try:
        labels.sort(key=int)
    except ValueError:
        pass
    part = BlockPartition.from_blocks([groups[k] for k in labels])
    part.check_sample(sample)
    return part
