"""Variance estimators for matched-tuple, replicate, stratified and two-control designs.

Every estimator returns a variance on the sqrt(n) scale, i.e. an estimate of
Var(sqrt(n) * Delta_hat) with n = J / |D| units per arm (the block count for
matched tuples), so results from different estimators are comparable.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BlockPartition, Contrast, DesignError, Sample
from .estimate import gamma_hat

log = logging.getLogger(__name__)


class VarianceMethod(str, enum.Enum):
    ADJUSTED = "Adjusted"
    ADJUSTED_REPLICATE = "AdjustedReplicate"
    SFE_HC0 = "SfeHC0"
    SFE_HC1 = "SfeHC1"
    BCVE = "Bcve"
    STRAT_PLUGIN = "StratPlugin"
    TWO_CONTROL_QUAD = "TwoControlQuad"
    TWO_SAMPLE = "TwoSample"


@dataclass(frozen=True, eq=False)
class VarianceReport:
    method: VarianceMethod
    v_full: np.ndarray | None
    v_contrast: np.ndarray
    n: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "v_contrast": np.asarray(self.v_contrast).tolist(),
            "v_full": None if self.v_full is None else self.v_full.tolist(),
            "n": self.n,
            "warnings": list(self.warnings),
        }


def _warn(msg: str, warnings: list[str]) -> None:
    log.warning(msg)
    warnings.append(msg)


def block_sums(sample: Sample, partition: BlockPartition, copies: int = 1) -> np.ndarray:
    """(n_blocks, |D|) matrix of within-block outcome sums per arm.

    Each block must contain exactly ``copies`` units of every arm.
    """
    partition.check_sample(sample)
    arm, y = sample.require_observed()
    D = sample.num_arms
    if partition.tuple_size != copies * D:
        raise DesignError(
            f"blocks of size {partition.tuple_size} do not hold {copies} unit(s) of each of {D} arms"
        )
    a = arm[partition.members] - 1
    counts = np.zeros((partition.n_blocks, D), dtype=np.int64)
    rows = np.repeat(np.arange(partition.n_blocks), partition.tuple_size)
    np.add.at(counts, (rows, a.ravel()), 1)
    bad = np.argwhere(counts != copies)
    if bad.size:
        j, d = bad[0]
        raise DesignError(
            f"block {j + 1} holds {counts[j, d]} unit(s) of arm {d + 1}, expected {copies}"
        )
    sums = np.zeros((partition.n_blocks, D))
    np.add.at(sums, (rows, a.ravel()), y[partition.members].ravel())
    return sums


def _check_arm(d: int, D: int) -> None:
    if not 1 <= d <= D:
        raise DesignError(f"arm {d} out of range 1..{D}")


def rho_cross(sample: Sample, partition: BlockPartition, d: int, d2: int, replicate: bool = False) -> float:
    """Mean over blocks of the product of arm-d and arm-d2 outcomes.

    In replicate blocks the same-arm pairs are summed first and the product is
    divided by 4, so the estimate targets the same quantity as with tuples.
    """
    D = sample.num_arms
    _check_arm(d, D)
    _check_arm(d2, D)
    if d == d2:
        raise DesignError("rho_cross needs distinct arms; use rho_same_adjacent or rho_same_replicate")
    copies = 2 if replicate else 1
    S = block_sums(sample, partition, copies)
    return float(np.mean(S[:, d - 1] * S[:, d2 - 1]) / copies**2)


def _rho_cross_all(S: np.ndarray, copies: int) -> np.ndarray:
    return (S.T @ S) / (S.shape[0] * copies**2)


def _rho_adjacent_from_sums(S: np.ndarray) -> np.ndarray:
    n = S.shape[0]
    if n < 2:
        raise DesignError("the adjacent-block estimator needs at least 2 blocks")
    half = n // 2
    return (S[0 : 2 * half : 2] * S[1 : 2 * half : 2]).sum(axis=0) / half


def rho_same_adjacent(sample: Sample, partition: BlockPartition, d: int) -> float:
    """Average product of arm-d outcomes over consecutive block pairs (1,2), (3,4), ...

    Normalized by floor(n/2), which agrees with 2/n for even n.
    """
    _check_arm(d, sample.num_arms)
    return float(_rho_adjacent_from_sums(block_sums(sample, partition, 1))[d - 1])


def _rho_replicate_all(sample: Sample, partition: BlockPartition) -> np.ndarray:
    block_sums(sample, partition, 2)  # structure check
    arm, y = sample.require_observed()
    a = arm[partition.members]
    yy = y[partition.members]
    # within a block, sort by arm so the two copies of each arm are adjacent
    order = np.argsort(a, axis=1, kind="stable")
    ys = np.take_along_axis(yy, order, axis=1)
    return (ys[:, 0::2] * ys[:, 1::2]).mean(axis=0)


def rho_same_replicate(sample: Sample, partition: BlockPartition, d: int) -> float:
    """Mean over replicate blocks of the product of the two arm-d outcomes."""
    _check_arm(d, sample.num_arms)
    return float(_rho_replicate_all(sample, partition)[d - 1])


def _sigma2_all(sample: Sample) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g = gamma_hat(sample)
    arm, y = sample.require_observed()
    resid = y - g.values[arm - 1]
    s2 = np.bincount(arm - 1, weights=resid * resid, minlength=sample.num_arms) / g.counts
    return s2, g.values, g.counts


def sigma2_hat(sample: Sample, d: int) -> float:
    """Mean squared deviation of arm-d outcomes from their mean (divisor = arm count)."""
    _check_arm(d, sample.num_arms)
    return float(_sigma2_all(sample)[0][d - 1])


def _contrast_matrix(nu, D: int) -> np.ndarray:
    m = nu.matrix if isinstance(nu, Contrast) else np.atleast_2d(np.asarray(nu, dtype=np.float64))
    if m.shape[1] != D:
        raise DesignError(f"contrast has {m.shape[1]} columns but there are {D} arms")
    return m


def _symmetrize(v: np.ndarray) -> np.ndarray:
    return (v + v.T) / 2.0


def v_hat_adjusted(sample: Sample, partition: BlockPartition, nu, replicate_mode: bool = False) -> VarianceReport:
    """Adjusted matched-tuples variance V_hat = V_hat_1 + V_hat_2.

    V_hat_1(d) = sigma2(d) - (rho(d,d) - Gamma(d)^2) on the diagonal, and
    V_hat_2(d,d') = (rho(d,d') - Gamma(d) Gamma(d')) / |D|. Same-arm rho
    comes from adjacent block pairs, or from the two copies in replicate blocks.
    """
    D = sample.num_arms
    nu_m = _contrast_matrix(nu, D)
    copies = 2 if replicate_mode else 1
    S = block_sums(sample, partition, copies)
    s2, g, _ = _sigma2_all(sample)
    rho = _rho_cross_all(S, copies)
    same = _rho_replicate_all(sample, partition) if replicate_mode else _rho_adjacent_from_sums(S)
    np.fill_diagonal(rho, same)
    warnings: list[str] = []
    v1 = s2 - (same - g * g)
    neg = np.flatnonzero(v1 < 0)
    if neg.size:
        _warn(
            "negative V1 diagonal for arm(s) " + ", ".join(str(int(k) + 1) for k in neg) + "; clipped to 0",
            warnings,
        )
        v1 = np.maximum(v1, 0.0)
    v2 = (rho - np.outer(g, g)) / D
    v = _symmetrize(np.diag(v1) + v2)
    method = VarianceMethod.ADJUSTED_REPLICATE if replicate_mode else VarianceMethod.ADJUSTED
    return VarianceReport(method, v, _symmetrize(nu_m @ v @ nu_m.T), sample.n_units // D, warnings)


def sfe_dof_factor(num_arms: int, n: int) -> float:
    """HC1 correction |D| n / (|D| n - (|D| - 1 + n))."""
    denom = num_arms * n - (num_arms - 1 + n)
    if denom <= 0:
        raise DesignError("too few blocks for the HC1 correction")
    return num_arms * n / denom


def v_hat_sfe(sample: Sample, partition: BlockPartition, d: int, hc: str = "HC0") -> VarianceReport:
    """Heteroskedasticity-robust variance of the arm-d vs arm-1 coefficient in
    the regression of Y on arm dummies and block fixed effects, computed in
    closed form and scaled by n.
    """
    D = sample.num_arms
    _check_arm(d, D)
    if d == 1:
        raise DesignError("the fixed-effects variance compares arm d against arm 1; d must differ from 1")
    hc = hc.upper()
    if hc not in ("HC0", "HC1"):
        raise DesignError(f"unknown correction {hc!r}; use HC0 or HC1")
    S = block_sums(sample, partition, 1)
    n = S.shape[0]
    g = S.mean(axis=0)
    # (I{D_i = a} - 1/|D|) Y_i summed over a block = S[j, a] - block total / |D|
    centered = S - S.sum(axis=1, keepdims=True) / D
    gbar = g.mean()

    def term(a: int) -> float:
        return float((centered[:, a] ** 2).sum() / n**2 - (g[a] - gbar) ** 2 / n)

    raw = term(0) + term(d - 1)
    kappa = 1.0 if hc == "HC0" else sfe_dof_factor(D, n)
    v = n * kappa * raw
    method = VarianceMethod.SFE_HC0 if hc == "HC0" else VarianceMethod.SFE_HC1
    return VarianceReport(method, None, np.array([[v]]), n)


def v_hat_bcve(sample: Sample, partition: BlockPartition, d: int) -> VarianceReport:
    """Block-cluster robust variance of the arm-d vs arm-1 coefficient (sqrt(n) scale)."""
    D = sample.num_arms
    _check_arm(d, D)
    if d == 1:
        raise DesignError("the cluster variance compares arm d against arm 1; d must differ from 1")
    S = block_sums(sample, partition, 1)
    diff = S[:, d - 1] - S[:, 0]
    v = float(np.mean(diff * diff) - diff.mean() ** 2)
    return VarianceReport(VarianceMethod.BCVE, None, np.array([[v]]), S.shape[0])


def v_hat_strat_plugin(sample: Sample, strata_labels, nu) -> VarianceReport:
    """Plug-in variance for complete randomization within strata.

    V_h1 = diag(sum_s p_s sigma2_s(d)), V_h2(d,d') = (1/|D|) sum_s p_s
    (m_s(d) - m(d))(m_s(d') - m(d')), with p_s the stratum shares, m_s the
    stratum-arm means and m their share-weighted average.
    """
    arm, y = sample.require_observed()
    labels = np.asarray(strata_labels)
    if labels.shape != (sample.n_units,):
        raise DesignError("one stratum label per unit is required")
    D = sample.num_arms
    nu_m = _contrast_matrix(nu, D)
    uniq, s_idx = np.unique(labels, return_inverse=True)
    S = uniq.size
    cell = s_idx * D + (arm - 1)
    cnt = np.bincount(cell, minlength=S * D).reshape(S, D)
    small = np.argwhere(cnt < 2)
    if small.size:
        s, d = small[0]
        raise DesignError(
            f"stratum '{uniq[s]}', arm {d + 1} has {cnt[s, d]} observation(s); at least 2 are needed"
        )
    sums = np.bincount(cell, weights=y, minlength=S * D).reshape(S, D)
    means = sums / cnt
    resid = y - means.ravel()[cell]
    ss = np.bincount(cell, weights=resid * resid, minlength=S * D).reshape(S, D)
    var = ss / cnt
    p = np.bincount(s_idx, minlength=S) / sample.n_units
    v1 = p @ var
    mbar = p @ means
    dev = means - mbar
    v2 = (dev.T * p) @ dev / D
    v = _symmetrize(np.diag(v1) + v2)
    return VarianceReport(
        VarianceMethod.STRAT_PLUGIN, v, _symmetrize(nu_m @ v @ nu_m.T), sample.n_units // D
    )


TWO_CONTROL_ROWS = np.array(
    [
        [-0.5, -0.5, 1.0, 0.0],
        [-0.5, -0.5, 0.0, 1.0],
        [0.0, 0.0, -1.0, 1.0],
    ]
)


def relabel_two_control(sample: Sample, partition: BlockPartition) -> Sample:
    """Map a (control, control, arm 2, arm 3) quadruplet sample onto four pseudo-arms.

    Within each block the control met first in block order becomes pseudo-arm
    1 and the other pseudo-arm 2; arms 2 and 3 become pseudo-arms 3 and 4.
    """
    partition.check_sample(sample)
    arm, _ = sample.require_observed()
    if sample.num_arms != 3 or partition.tuple_size != 4:
        raise DesignError("two-control quadruplets need 3 arms in blocks of 4")
    a = arm[partition.members]
    cnt = np.stack([(a == k).sum(axis=1) for k in (1, 2, 3)], axis=1)
    bad = np.flatnonzero(np.any(cnt != np.array([2, 1, 1]), axis=1))
    if bad.size:
        raise DesignError(
            f"block {bad[0] + 1} is not a quadruplet of two controls and one unit each of arms 2 and 3"
        )
    pseudo = a + 1
    is_ctrl = a == 1
    first_ctrl = is_ctrl & (np.cumsum(is_ctrl, axis=1) == 1)
    pseudo[is_ctrl] = 2
    pseudo[first_ctrl] = 1
    new_arm = np.empty_like(arm)
    new_arm[partition.members.ravel()] = pseudo.ravel()
    return Sample(sample.ids, sample.covariates, 4, new_arm, sample.outcome, sample.dropped_ids)


def v_hat_two_control_quad(sample: Sample, partition: BlockPartition, which=None) -> VarianceReport:
    """Adjusted variance for quadruplets with two controls and two treatments.

    ``which`` selects rows (0-based) of the contrast
    ((-1/2, -1/2, 1, 0), (-1/2, -1/2, 0, 1), (0, 0, -1, 1)); default all.
    """
    pseudo = relabel_two_control(sample, partition)
    rows = TWO_CONTROL_ROWS if which is None else TWO_CONTROL_ROWS[np.atleast_1d(which)]
    rep = v_hat_adjusted(pseudo, partition, rows)
    return VarianceReport(VarianceMethod.TWO_CONTROL_QUAD, rep.v_full, rep.v_contrast, rep.n, rep.warnings)


def v_hat_two_sample(sample: Sample, nu) -> VarianceReport:
    """Unpaired variance n * sum_d nu_d^2 s_d^2 / N_d for designs without blocks.

    s_d^2 uses the unbiased divisor; n = J / |D|.
    """
    arm, y = sample.require_observed()
    D = sample.num_arms
    nu_m = _contrast_matrix(nu, D)
    counts = np.bincount(arm - 1, minlength=D)
    if np.any(counts < 2):
        d = int(np.flatnonzero(counts < 2)[0]) + 1
        raise DesignError(f"arm {d} has {counts[d - 1]} observation(s); at least 2 are needed")
    means = np.bincount(arm - 1, weights=y, minlength=D) / counts
    resid = y - means[arm - 1]
    s2 = np.bincount(arm - 1, weights=resid * resid, minlength=D) / (counts - 1)
    n = sample.n_units // D
    v = n * np.diag(s2 / counts)
    return VarianceReport(VarianceMethod.TWO_SAMPLE, v, _symmetrize(nu_m @ v @ nu_m.T), n)
