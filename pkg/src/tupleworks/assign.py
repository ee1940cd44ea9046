"""Treatment assignment for matched tuples, replicate tuples, stratified,
Bernoulli factorial, factor-specific matched pairs and re-randomized designs.

Each plan draws from one Philox stream keyed by its seed, so a plan is a
pure function of ``(inputs, seed)``.
"""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BlockPartition, DesignError, FactorSpace
from .inference import chi2_quantile
from .rng import stream

log = logging.getLogger(__name__)

DEFAULT_MAX_REDRAWS = 100_000


class DesignKind(str, enum.Enum):
    MATCHED_TUPLES = "MatchedTuples"
    REPLICATE_TUPLES = "ReplicateTuples"
    STRATIFIED = "Stratified"
    BERNOULLI = "Bernoulli"
    FACTOR_SPECIFIC_MP = "FactorSpecificMP"
    RERANDOMIZED = "Rerandomized"


@dataclass(frozen=True, eq=False)
class AssignmentPlan:
    design_kind: DesignKind
    arms: np.ndarray
    seed: int
    num_arms: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        arms = np.array(self.arms, dtype=np.int64)
        arms.flags.writeable = False
        object.__setattr__(self, "arms", arms)

    def metadata_json(self) -> dict:
        out = {"design_kind": self.design_kind.value, "seed": self.seed, "num_arms": self.num_arms}
        out.update(self.metadata)
        return out


def _arms_per_block(partition: BlockPartition, base: np.ndarray, seed: int, kind: DesignKind) -> AssignmentPlan:
    rng = stream(seed, "assign", kind.value)
    rows = rng.permuted(np.tile(base, (partition.n_blocks, 1)), axis=1)
    arms = np.empty(partition.n_units, dtype=np.int64)
    arms[partition.members.ravel()] = rows.ravel()
    return AssignmentPlan(kind, arms, seed, int(base.max()))


def assign_matched_tuples(partition: BlockPartition, num_arms: int, seed: int) -> AssignmentPlan:
    """Each block receives an independent uniform permutation of 1..num_arms."""
    if partition.tuple_size != num_arms:
        raise DesignError(
            f"matched tuples need blocks of size {num_arms}, got {partition.tuple_size}"
        )
    return _arms_per_block(partition, np.arange(1, num_arms + 1), seed, DesignKind.MATCHED_TUPLES)


def assign_replicate_tuples(partition: BlockPartition, num_arms: int, seed: int) -> AssignmentPlan:
    """Each block of 2*num_arms units receives a shuffle of (1, 1, 2, 2, ...)."""
    if partition.tuple_size != 2 * num_arms:
        raise DesignError(
            f"replicate tuples need blocks of size {2 * num_arms}, got {partition.tuple_size}"
        )
    base = np.repeat(np.arange(1, num_arms + 1), 2)
    return _arms_per_block(partition, base, seed, DesignKind.REPLICATE_TUPLES)


def _complete_randomization(m: int, num_arms: int, rng: np.random.Generator) -> np.ndarray:
    counts = np.full(num_arms, m // num_arms, dtype=np.int64)
    extra = m % num_arms
    if extra:
        counts[rng.choice(num_arms, size=extra, replace=False)] += 1
    arms = np.repeat(np.arange(1, num_arms + 1), counts)
    return rng.permutation(arms)


def assign_stratified(strata_labels, num_arms: int, seed: int) -> AssignmentPlan:
    """Complete randomization within each stratum (visited in sorted label order).

    A stratum of size m gets floor(m / num_arms) units per arm; the remaining
    units go to distinct arms chosen uniformly without replacement.
    """
    labels = np.asarray(strata_labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DesignError("strata labels must be a non-empty vector")
    rng = stream(seed, "assign", DesignKind.STRATIFIED.value)
    arms = np.empty(labels.size, dtype=np.int64)
    uniq = np.unique(labels)
    for s in uniq:
        idx = np.flatnonzero(labels == s)
        arms[idx] = _complete_randomization(idx.size, num_arms, rng)
    return AssignmentPlan(
        DesignKind.STRATIFIED, arms, seed, num_arms, {"n_strata": int(uniq.size)}
    )


def assign_bernoulli_factors(n_units: int, K: int, seed: int) -> AssignmentPlan:
    """Every factor level is an independent fair +/-1 coin for every unit."""
    fs = FactorSpace(K)
    rng = stream(seed, "assign", DesignKind.BERNOULLI.value)
    levels = 2 * rng.integers(0, 2, size=(n_units, K)) - 1
    return AssignmentPlan(
        DesignKind.BERNOULLI, fs.arms_of_levels(levels), seed, fs.arm_count, {"K": K}
    )


def assign_factor_specific_mp(pairs: BlockPartition, k: int, K: int, seed: int) -> AssignmentPlan:
    """Matched pairs on factor ``k`` (1-based); all other factors are fair coins."""
    fs = FactorSpace(K)
    if pairs.tuple_size != 2:
        raise DesignError("factor-specific matched pairs need blocks of size 2")
    if not 1 <= k <= K:
        raise DesignError(f"factor k must lie in 1..{K}")
    rng = stream(seed, "assign", DesignKind.FACTOR_SPECIFIC_MP.value)
    levels = 2 * rng.integers(0, 2, size=(pairs.n_units, K)) - 1
    first = 2 * rng.integers(0, 2, size=pairs.n_blocks) - 1
    levels[pairs.members[:, 0], k - 1] = first
    levels[pairs.members[:, 1], k - 1] = -first
    return AssignmentPlan(
        DesignKind.FACTOR_SPECIFIC_MP,
        fs.arms_of_levels(levels),
        seed,
        fs.arm_count,
        {"K": K, "factor": k},
    )


# --------------------------------------------------------------------------
# Mahalanobis balance and re-randomization


def _covariance_pinv(covariates: np.ndarray) -> np.ndarray:
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return np.linalg.pinv(cov, hermitian=True)


def mahalanobis_balance(covariates, assignment, contrast_row) -> float:
    """Balance of covariates between the +1 and -1 arm groups of a contrast row.

    M = (n+ n- / N) * diff' S^+ diff, where diff is the difference in
    covariate means and S the sample covariance of all N units; M is
    approximately chi-square(p) under complete randomization.
    """
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    arms = np.asarray(assignment, dtype=np.int64)
    row = np.asarray(contrast_row)
    if not np.all(np.isin(row, (-1, 1))):
        raise DesignError("contrast row must contain only +1/-1 entries")
    sign = row[arms - 1]
    plus, minus = sign > 0, sign < 0
    n_plus, n_minus = int(plus.sum()), int(minus.sum())
    if n_plus < 2 or n_minus < 2:
        raise DesignError("each side of the contrast needs at least 2 units")
    diff = x[plus].mean(axis=0) - x[minus].mean(axis=0)
    s_inv = _covariance_pinv(x)
    return float(n_plus * n_minus / (n_plus + n_minus) * diff @ s_inv @ diff)


def factorial_generating_rows(K: int) -> tuple[list[tuple[int, ...]], np.ndarray, np.ndarray]:
    """Main-effect and interaction generating vectors for 2^K arms.

    Returns (factor subsets, main rows (K x 2^K), interaction rows (L x 2^K)).
    """
    fs = FactorSpace(K)
    table = fs.level_table
    subsets = [s for r in range(2, K + 1) for s in itertools.combinations(range(K), r)]
    main = table.T.copy()
    inter = np.array([table[:, list(s)].prod(axis=1) for s in subsets]).reshape(-1, fs.arm_count)
    return [tuple(i + 1 for i in s) for s in subsets], main, inter


def rerandomization_thresholds(K: int, p: int) -> tuple[float, float | None, int]:
    """Chi-square(p) cut-offs for main effects and interactions, and L."""
    L = 2**K - K - 1
    main = chi2_quantile(0.01 ** (1.0 / K), p)
    inter = chi2_quantile(0.01 ** (1.0 / L), p) if L else None
    return main, inter, L


def assign_rerandomized(
    covariates,
    K: int,
    seed: int,
    max_redraws: int = DEFAULT_MAX_REDRAWS,
    batch: int = 2048,
) -> AssignmentPlan:
    """Redraw complete randomizations until every balance criterion passes.

    Each main-effect statistic must fall below the chi-square(p) quantile at
    0.01**(1/K), each interaction statistic below the quantile at
    0.01**(1/L) with L = 2^K - K - 1.
    """
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    N, p = x.shape
    fs = FactorSpace(K)
    if N % fs.arm_count:
        raise DesignError(f"{N} units is not divisible by {fs.arm_count} arms")
    main_cut, inter_cut, L = rerandomization_thresholds(K, p)
    subsets, main_rows, inter_rows = factorial_generating_rows(K)
    rows = np.vstack([main_rows, inter_rows]) if L else main_rows
    cuts = np.array([main_cut] * K + [inter_cut] * L)
    names = [f"main:{k + 1}" for k in range(K)] + ["inter:" + ",".join(map(str, s)) for s in subsets]
    s_inv = _covariance_pinv(x)
    # each row splits a balanced assignment into halves of N/2, so
    # (n+ n- / N) * |diff|^2 reduces to |sum+ - sum-|^2 / N
    scale = 1.0 / N
    rng = stream(seed, "assign", DesignKind.RERANDOMIZED.value)
    D, per_arm = fs.arm_count, N // fs.arm_count
    base = np.repeat(np.arange(1, D + 1), per_arm)
    drawn = 0
    fails = np.zeros(rows.shape[0], dtype=np.int64)
    while drawn < max_redraws:
        b = min(batch, max_redraws - drawn)
        # a candidate is a random order of units; consecutive runs of N/D get arms 1..D
        order = rng.permuted(np.tile(np.arange(N), (b, 1)), axis=1)
        arm_sums = x[order].reshape(b, D, per_arm, p).sum(axis=2)  # (b, D, p)
        diffs = np.einsum("rd,bdp->brp", rows, arm_sums)  # +1 side minus -1 side
        stats = scale * np.einsum("brp,pq,brq->br", diffs, s_inv, diffs)
        ok = stats < cuts
        fails += (~ok).sum(axis=0)
        good = np.flatnonzero(ok.all(axis=1))
        if good.size:
            g = int(good[0])
            fails -= (~ok[g + 1 :]).sum(axis=0)
            arms = np.empty(N, dtype=np.int64)
            arms[order[g]] = base
            return AssignmentPlan(
                DesignKind.RERANDOMIZED,
                arms,
                seed,
                fs.arm_count,
                {
                    "K": K,
                    "redraws": drawn + g + 1,
                    "main_threshold": main_cut,
                    "interaction_threshold": inter_cut,
                    "balance": dict(zip(names, stats[g].tolist())),
                },
            )
        drawn += b
    tightest = names[int(np.argmax(fails))]
    raise DesignError(
        f"no acceptable assignment in {max_redraws} draws; tightest criterion: {tightest} "
        f"(failed in {int(fails.max())} of {drawn} draws)"
    )
