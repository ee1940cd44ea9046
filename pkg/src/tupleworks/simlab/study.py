"""Monte Carlo harness: MSE comparisons, size/power, and power curves across designs.

Every replication draws potential outcomes once from a seed derived from
``(seed, rep)``; each design then assigns treatment with its own seed derived
from ``(seed, design, rep)``. All designs therefore see the same units
(common random numbers), and results do not depend on the thread count.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..assign import (
    assign_bernoulli_factors,
    assign_factor_specific_mp,
    assign_matched_tuples,
    assign_replicate_tuples,
    assign_rerandomized,
    assign_stratified,
)
from ..blocking import block_by_ordering, block_recursive_pairing
from ..core import BlockPartition, DesignError, PotentialOutcomes, Sample, reveal
from ..estimate import gamma_hat, parse_contrast
from ..inference import chi2_quantile, normal_quantile
from ..rng import derive_seed
from ..variance import v_hat_adjusted, v_hat_strat_plugin, v_hat_two_sample
from .dgp import DgpSpec, Model, draw_potential_outcomes, load_covariate_pool

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BASE_DESIGNS = ("B-B", "C", "MP-B", "MT", "MT2", "RE", "MP-k")
INFERENCE_DESIGNS = ("B-B", "C", "MT", "MT2")  # plus Large-S
STUDY_KINDS = ("mse", "size_power", "power_curve")
DEFAULT_PARAMETERS = ("main:1;rescale", "main:2;rescale", "inter:1,2;rescale", "cond:1|2=+1", "cond:1|2=-1")


def _strata_count(design: str) -> int | None:
    if design.startswith("Large-"):
        tail = design.split("-", 1)[1]
        if tail.isdigit() and int(tail) >= 1:
            return int(tail)
    return None


def validate_design(design: str) -> None:
    if design in BASE_DESIGNS or _strata_count(design) is not None:
        return
    valid = ", ".join(BASE_DESIGNS + ("Large-S (S a positive integer, e.g. Large-2)",))
    raise DesignError(f"unknown design {design!r}; valid designs: {valid}")


def has_inference(design: str) -> bool:
    return design in INFERENCE_DESIGNS or _strata_count(design) is not None


@dataclass
class StudyConfig:
    model: str
    designs: list[str]
    n: int
    R: int
    seed: int
    schema: int = SCHEMA_VERSION
    kind: str = "mse"
    parameters: list[str] = field(default_factory=lambda: list(DEFAULT_PARAMETERS))
    tau_null: float = 0.0
    tau_alt: float = 0.2
    alpha: float = 0.05
    K: int = 2
    dim: int = 1
    threads: int = 1
    tau_grid: list[float] | None = None
    mp_factor: int = 1
    covariates: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        if not isinstance(data, dict):
            raise DesignError("study config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DesignError(f"unknown config field(s): {', '.join(unknown)}")
        missing = [k for k in ("model", "designs", "n", "R", "seed") if k not in data]
        if missing:
            raise DesignError(f"missing config field(s): {', '.join(missing)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.schema != SCHEMA_VERSION:
            raise DesignError(f"unsupported schema {self.schema}; expected {SCHEMA_VERSION}")
        if self.kind not in STUDY_KINDS:
            raise DesignError(f"unknown study kind {self.kind!r}; use one of {', '.join(STUDY_KINDS)}")
        self.designs = list(self.designs)
        self.parameters = list(self.parameters)
        if not self.designs:
            raise DesignError("at least one design is required")
        for d in self.designs:
            validate_design(d)
        if len(set(self.designs)) != len(self.designs):
            raise DesignError("designs must be distinct")
        if not self.parameters:
            raise DesignError("at least one parameter is required")
        for name, v in (("n", self.n), ("R", self.R), ("threads", self.threads)):
            if int(v) != v or v < 1:
                raise DesignError(f"{name} must be a positive integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise DesignError("seed must be an integer in [0, 2^64)")
        if not 0.0 < self.alpha < 1.0:
            raise DesignError("alpha must lie strictly between 0 and 1")
        dgp = self.dgp(self.tau_null)
        D = dgp.num_arms
        for p in self.parameters:
            parse_contrast(p, D)
        for d in self.designs:
            size = {"MT": D, "MT2": 2 * D, "MP-B": 2, "MP-k": 2, "RE": D, "C": D}.get(d, 1)
            if _strata_count(d):
                size = D
            if self.n % size:
                raise DesignError(f"design {d} needs n divisible by {size}; got n={self.n}")
            if d == "MP-B" and (dgp.K < 2 or dgp.dim != 1):
                raise DesignError("MP-B needs K >= 2 and one covariate; use MP-k otherwise")
            if d == "MP-k" and not 1 <= self.mp_factor <= dgp.K:
                raise DesignError(f"mp_factor must lie in 1..{dgp.K}")
        if self.kind in ("size_power", "power_curve"):
            bad = [d for d in self.designs if not has_inference(d)]
            if bad:
                raise DesignError(
                    f"design(s) {', '.join(bad)} have no inference procedure; "
                    "size/power studies accept B-B, C, MT, MT2 and Large-S"
                )
        if self.kind == "power_curve" and not self.tau_grid:
            raise DesignError("power_curve studies need a non-empty tau_grid")

    def dgp(self, tau: float) -> DgpSpec:
        model = Model.parse(self.model)
        if model is Model.CALIBRATED_LINEAR:
            pool = load_covariate_pool(self.covariates) if self.covariates else None
            return DgpSpec(model, tau=tau, K=self.K, dim=self.dim, covariate_pool=pool)
        if self.covariates:
            raise DesignError("a covariate file applies only to CalibratedLinear")
        if self.K != 2 or self.dim != 1:
            raise DesignError(f"model {model.value} has K=2 and one covariate")
        return DgpSpec(model, tau=tau)


@dataclass
class StudyReport:
    kind: str
    config: dict
    rows: list[dict]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "rows": self.rows, "warnings": self.warnings}

    def table(self) -> tuple[list[str], list[list]]:
        """Wide table: one row per (model, parameter) with one column per design.

        MSE studies hold ratios versus MT; size/power studies hold H0 then H1
        rejection rates; power curves are long-form (tau, design, parameter, rate).
        """
        designs = self.config["designs"]
        model = self.config["model"]
        if self.kind == "power_curve":
            header = ["tau", "design", "parameter", "rejection_rate"]
            return header, [[r["tau"], r["design"], r["parameter"], r["rejection_rate"]] for r in self.rows]
        params = self.config["parameters"]
        cell = {(r["parameter"], r["design"]): r for r in self.rows}
        if self.kind == "mse":
            header = ["model", "parameter", *designs]
            body = [[model, p, *(cell[p, d]["ratio_vs_MT"] for d in designs)] for p in params]
            return header, body
        header = ["model", "parameter", *(f"H0:{d}" for d in designs), *(f"H1:{d}" for d in designs)]
        body = [
            [model, p, *(cell[p, d]["reject_null"] for d in designs), *(cell[p, d]["reject_alt"] for d in designs)]
            for p in params
        ]
        return header, body

    def write_csv(self, path) -> None:
        header, body = self.table()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in body:
                w.writerow([_fmt(v) for v in row])

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------
# designs


@dataclass
class _Applied:
    arms: np.ndarray
    partition: BlockPartition | None = None
    strata: np.ndarray | None = None


def _quantile_strata(x: np.ndarray, S: int) -> np.ndarray:
    rank = np.empty(x.size, dtype=np.int64)
    rank[np.argsort(x, kind="stable")] = np.arange(x.size)
    return rank * S // x.size


def _tuples(sample: Sample, size_log2: int) -> BlockPartition:
    if sample.dim == 1:
        return block_by_ordering(sample, 2**size_log2)
    return block_recursive_pairing(sample, size_log2)


def apply_design(design: str, sample: Sample, K: int, seed: int, mp_factor: int = 1) -> _Applied:
    """Block (if needed) and assign treatment under a named design."""
    N, D = sample.n_units, sample.num_arms
    if design == "B-B":
        return _Applied(assign_bernoulli_factors(N, K, seed).arms)
    if design == "C":
        strata = np.zeros(N, dtype=np.int64)
        return _Applied(assign_stratified(strata, D, seed).arms, strata=strata)
    S = _strata_count(design)
    if S is not None:
        strata = _quantile_strata(sample.covariates[:, 0], S)
        return _Applied(assign_stratified(strata, D, seed).arms, strata=strata)
    if design == "MT":
        part = _tuples(sample, K)
        return _Applied(assign_matched_tuples(part, D, seed).arms, partition=part)
    if design == "MT2":
        part = _tuples(sample, K + 1)
        return _Applied(assign_replicate_tuples(part, D, seed).arms, partition=part)
    if design == "MP-B":
        pairs = block_by_ordering(sample, 2)
        return _Applied(assign_factor_specific_mp(pairs, 1, K, seed).arms, partition=pairs)
    if design == "MP-k":
        pairs = _tuples(sample, 1)
        return _Applied(assign_factor_specific_mp(pairs, mp_factor, K, seed).arms, partition=pairs)
    if design == "RE":
        return _Applied(assign_rerandomized(sample.covariates, K, seed).arms)
    validate_design(design)
    raise AssertionError("unreachable")


def design_variance(design: str, sample: Sample, applied: _Applied, nu: np.ndarray) -> np.ndarray:
    """Contrast-scale variance estimate used by the design's test."""
    if design == "MT":
        return v_hat_adjusted(sample, applied.partition, nu).v_contrast
    if design == "MT2":
        return v_hat_adjusted(sample, applied.partition, nu, replicate_mode=True).v_contrast
    if design == "B-B":
        return v_hat_two_sample(sample, nu).v_contrast
    if applied.strata is not None:
        return v_hat_strat_plugin(sample, applied.strata, nu).v_contrast
    raise DesignError(f"design {design} has no inference procedure")


# --------------------------------------------------------------------------
# replications


class _Runner:
    def __init__(self, cfg: StudyConfig, taus: list[float], tests: bool):
        self.cfg = cfg
        self.taus = taus
        self.tests = tests
        self.dgps = [cfg.dgp(t) for t in taus]
        D = self.dgps[0].num_arms
        self.nu = np.vstack([parse_contrast(p, D).matrix for p in cfg.parameters])
        self.truth = [self.nu @ g.true_gamma() for g in self.dgps]
        self.ids = tuple(f"u{i + 1}" for i in range(cfg.n))
        self.z = normal_quantile(1.0 - cfg.alpha / 2.0)
        self.crit = chi2_quantile(1.0 - cfg.alpha, 1)

    def one(self, rep: int) -> dict:
        """Per design: (taus, m) arrays of estimates, rejections and CI lengths."""
        cfg = self.cfg
        po_seed = derive_seed(cfg.seed, "po", rep)
        pos: list[PotentialOutcomes] = [draw_potential_outcomes(g, cfg.n, po_seed) for g in self.dgps]
        base = Sample(self.ids, pos[0].covariates, pos[0].num_arms)
        m, T = self.nu.shape[0], len(self.taus)
        out = {}
        for design in cfg.designs:
            est = np.full((T, m), np.nan)
            rej = np.full((T, m), np.nan)
            ci = np.full((T, m), np.nan)
            try:
                applied = apply_design(design, base, cfg.K, derive_seed(cfg.seed, "design", design, rep), cfg.mp_factor)
            except DesignError as exc:
                log.warning("rep %d, design %s: %s", rep, design, exc)
                out[design] = (est, rej, ci)
                continue
            n = cfg.n // base.num_arms
            for t, po in enumerate(pos):
                s = reveal(po, applied.arms)
                try:
                    est[t] = self.nu @ gamma_hat(s).values
                except DesignError as exc:
                    log.warning("rep %d, design %s: %s", rep, design, exc)
                    continue
                if not self.tests:
                    continue
                try:
                    var = np.diag(design_variance(design, s, applied, self.nu))
                except DesignError as exc:
                    log.warning("rep %d, design %s: %s", rep, design, exc)
                    continue
                for j in range(m):
                    if var[j] <= 0:
                        continue
                    # scalar Wald statistic n * est^2 / var against the chi2(1) cut-off
                    rej[t, j] = float(n * est[t, j] ** 2 / var[j] > self.crit)
                    ci[t, j] = 2.0 * self.z * math.sqrt(var[j] / n)
            out[design] = (est, rej, ci)
        return out

    def run(self) -> dict:
        reps = range(self.cfg.R)
        if self.cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                results = list(pool.map(self.one, reps))
        else:
            results = [self.one(r) for r in reps]
        # ordered reduction: stack in replication order
        return {
            d: tuple(np.stack([res[d][k] for res in results]) for k in range(3)) for d in self.cfg.designs
        }


def _nanmean(a: np.ndarray) -> float:
    ok = ~np.isnan(a)
    return float(a[ok].mean()) if ok.any() else float("nan")


def run_mse_study(cfg: StudyConfig) -> StudyReport:
    """MSE of each design's estimate around the true contrast, and its ratio to MT."""
    cfg.validate()
    runner = _Runner(cfg, [cfg.tau_null], tests=False)
    res = runner.run()
    truth = runner.truth[0]
    mse = {d: [_nanmean((res[d][0][:, 0, j] - truth[j]) ** 2) for j in range(len(truth))] for d in cfg.designs}
    rows, warnings = [], []
    if "MT" not in cfg.designs:
        warnings.append("MT not among the designs; ratios are NaN")
    for j, p in enumerate(cfg.parameters):
        for d in cfg.designs:
            ref = mse["MT"][j] if "MT" in mse else float("nan")
            failed = int(np.isnan(res[d][0][:, 0, j]).sum())
            rows.append(
                {
                    "parameter": p,
                    "design": d,
                    "truth": float(truth[j]),
                    "mse": mse[d][j],
                    "ratio_vs_MT": mse[d][j] / ref if ref and not math.isnan(ref) else float("nan"),
                    "n_failed": failed,
                }
            )
            if failed:
                warnings.append(f"{d}/{p}: {failed} replication(s) failed")
    if cfg.R == 1:
        warnings.append("R=1: MSE is a single squared error")
    return StudyReport("mse", cfg.to_dict(), rows, warnings)


def run_size_power_study(cfg: StudyConfig) -> StudyReport:
    """Rejection rates of each design's test under tau_null and tau_alt."""
    cfg.validate()
    runner = _Runner(cfg, [cfg.tau_null, cfg.tau_alt], tests=True)
    res = runner.run()
    rows, warnings = [], []
    for j, p in enumerate(cfg.parameters):
        for d in cfg.designs:
            _, rej, ci = res[d]
            failed = int(np.isnan(rej[:, :, j]).sum())
            rows.append(
                {
                    "parameter": p,
                    "design": d,
                    "truth_null": float(runner.truth[0][j]),
                    "truth_alt": float(runner.truth[1][j]),
                    "reject_null": _nanmean(rej[:, 0, j]),
                    "reject_alt": _nanmean(rej[:, 1, j]),
                    "ci_length_null": _nanmean(ci[:, 0, j]),
                    "ci_length_alt": _nanmean(ci[:, 1, j]),
                    "n_failed": failed,
                }
            )
            if failed:
                warnings.append(f"{d}/{p}: {failed} test(s) could not be formed")
    return StudyReport("size_power", cfg.to_dict(), rows, warnings)


def run_power_curve(cfg: StudyConfig, tau_grid=None) -> StudyReport:
    """Raw rejection frequency for every tau in the grid (no smoothing)."""
    grid = list(tau_grid if tau_grid is not None else cfg.tau_grid or [])
    if not grid:
        raise DesignError("power curve needs a non-empty tau grid")
    cfg.tau_grid = grid
    cfg.validate()
    runner = _Runner(cfg, grid, tests=True)
    res = runner.run()
    rows, warnings = [], []
    for t, tau in enumerate(grid):
        for d in cfg.designs:
            for j, p in enumerate(cfg.parameters):
                rej = res[d][1][:, t, j]
                rows.append({"tau": tau, "design": d, "parameter": p, "rejection_rate": _nanmean(rej)})
    return StudyReport("power_curve", cfg.to_dict(), rows, warnings)


def run_study(cfg: StudyConfig) -> StudyReport:
    if cfg.kind == "mse":
        return run_mse_study(cfg)
    if cfg.kind == "size_power":
        return run_size_power_study(cfg)
    return run_power_curve(cfg)
