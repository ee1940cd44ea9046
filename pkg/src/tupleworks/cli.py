"""Command-line front end: ``tupleworks design|analyze|simulate|rerun``.

Every command writes into ``--out`` and leaves a ``manifest.json`` recording
the argv, resolved options, seed, version, and sha256 digests of inputs and
outputs, so ``tupleworks rerun <manifest>`` can reproduce the run.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assign import (
    assign_bernoulli_factors,
    assign_factor_specific_mp,
    assign_matched_tuples,
    assign_replicate_tuples,
    assign_rerandomized,
    assign_stratified,
)
from .blocking import block_by_ordering, block_prestratified, block_recursive_pairing, diagnose
from .core import DesignError, FactorSpace, Sample, read_partition_csv, read_sample_csv, write_partition_csv
from .estimate import gamma_hat, parse_contrast
from .inference import confidence_interval, wald_test
from .simlab.study import StudyConfig, run_study
from .variance import (
    TWO_CONTROL_ROWS,
    relabel_two_control,
    v_hat_adjusted,
    v_hat_bcve,
    v_hat_sfe,
    v_hat_strat_plugin,
    v_hat_two_control_quad,
)

log = logging.getLogger("tupleworks")

VARIANCE_CHOICES = ("adjusted", "adjusted-rep", "sfe-hc0", "sfe-hc1", "bcve", "strat", "quad2c")
DESIGN_CHOICES = ("mt", "mt2", "strat", "bern", "mpk", "re")
QUAD_LABELS = ("arm2-vs-controls", "arm3-vs-controls", "arm3-vs-arm2")


# --------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats so output is strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def _write_json(path: Path, obj) -> None:
    obj = json.loads(json.dumps(obj, default=_json_default))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, argv: list[str], inputs: list, outputs: list[str], seed=None) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "tupleworks",
        "version": __version__,
        "command": argv,
        "resolved": resolved,
        "seed": seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if p},
        "outputs": {name: _sha256(out / name) for name in outputs},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    _write_json(out / "manifest.json", manifest)


def _load_sample(path, strata_col=None, num_arms=None):
    sample, strata = read_sample_csv(path, num_arms=num_arms, strata_col=strata_col)
    return sample, strata


# --------------------------------------------------------------------------
# design


def _block(args, sample: Sample, strata):
    method = args.method
    if method == "order":
        return sample, block_by_ordering(sample, args.tuple_size, args.covariate_index)
    if method == "prestrat":
        if strata is None:
            raise DesignError("--method prestrat requires --strata-col")
        return block_prestratified(sample, strata, args.tuple_size, args.covariate_index)
    if method == "recursive":
        K = int(round(math.log2(args.tuple_size))) if args.tuple_size > 0 else -1
        if K < 0 or 2**K != args.tuple_size:
            raise DesignError("--method recursive needs --tuple-size a power of two")
        return sample, block_recursive_pairing(sample, K, args.mahalanobis, args.matcher)
    raise DesignError(f"unknown blocking method {method!r}")


def _write_arms(path: Path, sample: Sample, arms: np.ndarray, K: int | None) -> None:
    fs = FactorSpace(K) if K else None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,arm" + (",factor_levels" if fs else "") + "\n")
        for uid, a in zip(sample.ids, arms):
            line = f"{uid},{int(a)}"
            if fs:
                line += "," + ";".join(f"{v:+d}" for v in fs.levels_of_arm(int(a)))
            fh.write(line + "\n")


def _assign(args, sample: Sample, partition, strata):
    design = args.design
    K = args.k
    if design in ("mt", "mt2"):
        if partition is None:
            raise DesignError(f"--design {design} needs a block partition")
        size = partition.tuple_size
        D = size if design == "mt" else size // 2
        if K is not None and 2**K != D:
            raise DesignError(f"--k {K} implies {2**K} arms but blocks of {size} imply {D}")
        if design == "mt":
            return assign_matched_tuples(partition, D, args.seed), K
        if size % 2:
            raise DesignError("replicate tuples need an even block size")
        return assign_replicate_tuples(partition, D, args.seed), K
    if design == "strat":
        if strata is None:
            raise DesignError("--design strat requires --strata-col")
        D = args.num_arms or (2**K if K else None)
        if not D:
            raise DesignError("--design strat requires --num-arms or --k")
        return assign_stratified(strata, D, args.seed), K
    if K is None:
        raise DesignError(f"--design {design} requires --k")
    if design == "bern":
        return assign_bernoulli_factors(sample.n_units, K, args.seed), K
    if design == "mpk":
        if partition is None or partition.tuple_size != 2:
            raise DesignError("--design mpk needs a partition into pairs")
        return assign_factor_specific_mp(partition, args.factor, K, args.seed), K
    if design == "re":
        return assign_rerandomized(sample.covariates, K, args.seed, max_redraws=args.max_redraws), K
    raise DesignError(f"unknown design {design!r}")


def cmd_design(args, argv) -> int:
    out = _out_dir(args)
    sample, strata = _load_sample(args.input, args.strata_col)
    outputs, inputs = [], [args.input]
    partition = None
    if args.action in ("block", "run"):
        label_of = dict(zip(sample.ids, strata)) if strata is not None else None
        sample, partition = _block(args, sample, strata)
        if label_of is not None:
            # pre-stratification may drop units; keep labels aligned with the kept sample
            strata = np.array([label_of[uid] for uid in sample.ids])
        write_partition_csv(out / "partition.csv", sample, partition)
        diag = diagnose(sample, partition)
        _write_json(out / "diagnostics.json", diag.to_dict())
        outputs += ["partition.csv", "diagnostics.json"]
    if args.action == "assign" and args.partition:
        partition = read_partition_csv(args.partition, sample)
        inputs.append(args.partition)
    if args.action in ("assign", "run"):
        if args.seed is None:
            raise DesignError("--seed is required for assignment")
        plan, K = _assign(args, sample, partition, strata)
        _write_arms(out / "arms.csv", sample, plan.arms, K)
        _write_json(out / "plan.json", plan.metadata_json())
        outputs += ["arms.csv", "plan.json"]
    _write_manifest(out, args, argv, inputs, outputs, seed=args.seed)
    print(f"wrote {', '.join(outputs)} to {out}")
    return 0


# --------------------------------------------------------------------------
# analyze


def _pairwise_arm(matrix: np.ndarray) -> int:
    """Arm d for a contrast equal to arm d minus arm 1, else error."""
    if matrix.shape[0] != 1:
        raise DesignError("sfe/bcve variances take a single-row pairwise contrast pair:d,1")
    row = matrix[0]
    nz = np.flatnonzero(row)
    if row[0] != -1 or nz.size != 2 or row[nz[1]] != 1:
        raise DesignError("sfe/bcve variances compare an arm against arm 1; use pair:d,1")
    return int(nz[1]) + 1


def _variance_for(method: str, sample: Sample, partition, strata, matrix: np.ndarray):
    if method in ("adjusted", "adjusted-rep", "sfe-hc0", "sfe-hc1", "bcve") and partition is None:
        raise DesignError(f"--variance {method} needs --partition")
    if method == "adjusted":
        return v_hat_adjusted(sample, partition, matrix)
    if method == "adjusted-rep":
        return v_hat_adjusted(sample, partition, matrix, replicate_mode=True)
    if method in ("sfe-hc0", "sfe-hc1"):
        return v_hat_sfe(sample, partition, _pairwise_arm(matrix), "HC0" if method == "sfe-hc0" else "HC1")
    if method == "bcve":
        return v_hat_bcve(sample, partition, _pairwise_arm(matrix))
    if method == "strat":
        if strata is None:
            strata = np.zeros(sample.n_units, dtype=np.int64)
        return v_hat_strat_plugin(sample, strata, matrix)
    raise DesignError(f"unknown variance method {method!r}")


def _analysis_entry(label, est, rep, n, alpha, delta0=None) -> dict:
    res = wald_test(est, rep.v_contrast, Delta0=delta0, n=n, alpha=alpha)
    entry = {
        "contrast": label,
        "estimate": est.tolist(),
        "variance": np.asarray(rep.v_contrast).tolist(),
        "statistic": res.statistic,
        "df": res.df,
        "p_value": res.p_value,
        "reject": res.reject,
        "alpha": res.alpha,
        "critical_value": res.critical_value,
        "method": rep.method.value,
        "test": res.method,
        "n": rep.n,
    }
    if rep.v_full is not None:
        entry["v_full"] = rep.v_full.tolist()
    entry["confidence_intervals"] = [
        list(confidence_interval(float(e), float(max(v, 0.0)), n, alpha)) for e, v in zip(est, np.diag(rep.v_contrast))
    ]
    entry["warnings"] = list(rep.warnings) + res.warnings
    return entry


def cmd_analyze(args, argv) -> int:
    out = _out_dir(args)
    sample, strata = _load_sample(args.input, args.strata_col, args.num_arms)
    sample.require_observed()
    inputs = [args.input]
    partition = None
    if args.partition:
        partition = read_partition_csv(args.partition, sample)
        inputs.append(args.partition)
    results, errors = [], 0
    g = gamma_hat(sample)
    summary = {"gamma_hat": g.values.tolist(), "counts": g.counts.tolist(), "n": g.n}
    contrasts = args.contrast or []
    variances = args.variance or ["adjusted"]
    for method in variances if args.action == "test" else [None]:
        if method == "quad2c":
            try:
                if partition is None:
                    raise DesignError("--variance quad2c needs --partition")
                pseudo = relabel_two_control(sample, partition)
                est = TWO_CONTROL_ROWS @ gamma_hat(pseudo).values
                rep = v_hat_two_control_quad(sample, partition)
                results.append(_analysis_entry(list(QUAD_LABELS), est, rep, rep.n, args.alpha))
            except DesignError as exc:
                errors += 1
                results.append({"contrast": list(QUAD_LABELS), "method": "TwoControlQuad", "error": str(exc)})
            continue
        if not contrasts:
            raise DesignError("at least one --contrast is required")
        for spec in contrasts:
            nu = parse_contrast(spec, sample.num_arms)
            est = nu.matrix @ g.values
            if method is None:
                results.append({"contrast": spec, "estimate": est.tolist()})
                continue
            try:
                rep = _variance_for(method, sample, partition, strata, nu.matrix)
                results.append(_analysis_entry(spec, est, rep, rep.n, args.alpha))
            except DesignError as exc:
                errors += 1
                results.append({"contrast": spec, "estimate": est.tolist(), "method": method, "error": str(exc)})
    for r in results:
        if "error" in r:
            log.error("%s / %s: %s", r["contrast"], r.get("method"), r["error"])
    _write_json(out / "results.json", {"summary": summary, "results": results})
    _write_manifest(out, args, argv, inputs, ["results.json"])
    print(f"wrote results.json to {out} ({len(results)} result(s), {errors} error(s))")
    return 1 if errors else 0


# --------------------------------------------------------------------------
# simulate / rerun


def cmd_simulate(args, argv) -> int:
    out = _out_dir(args)
    with open(args.config, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DesignError(f"config is not valid JSON: {exc}") from None
    cfg = StudyConfig.from_dict(data)
    if args.threads is not None:
        cfg.threads = args.threads
    report = run_study(cfg)
    report.write_csv(out / "table.csv")
    report.write_json(out / "report.json")
    inputs = [args.config] + ([cfg.covariates] if cfg.covariates else [])
    # thread count never changes results, so it stays out of the recorded config
    resolved = cfg.to_dict()
    resolved.pop("threads")
    _write_json(out / "config.resolved.json", resolved)
    _write_manifest(out, args, argv, inputs, ["table.csv", "report.json", "config.resolved.json"], seed=cfg.seed)
    for w in report.warnings:
        log.warning(w)
    print(f"wrote table.csv, report.json to {out}")
    return 0


def cmd_rerun(args, argv) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    old = list(manifest["command"])
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists():
            raise DesignError(f"input {path} from the manifest no longer exists")
        if _sha256(Path(path)) != digest:
            raise DesignError(f"input {path} changed since the recorded run")
    new = list(old)
    if args.out:
        if "--out" not in new:
            raise DesignError("recorded command has no --out to replace")
        new[new.index("--out") + 1] = args.out
    code = main(new)
    if code == 0 and args.out:
        out = Path(args.out)
        mismatched = [
            name for name, digest in manifest.get("outputs", {}).items() if _sha256(out / name) != digest
        ]
        if mismatched:
            log.error("outputs differ from the recorded run: %s", ", ".join(mismatched))
            return 1
        print("all outputs match the recorded digests")
    return code


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tupleworks", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"tupleworks {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="form blocks and/or assign treatments")
    d.add_argument("action", choices=("block", "assign", "run"), help="block, assign, or both")
    d.add_argument("--input", required=True, help="CSV with id and covariate columns")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--tuple-size", type=int, help="block size for block/run")
    d.add_argument("--method", choices=("order", "prestrat", "recursive"), default="order",
                   help="blocking method (default: order)")
    d.add_argument("--covariate-index", type=int, default=0, help="0-based covariate used by order/prestrat")
    d.add_argument("--strata-col", help="column holding stratum labels")
    d.add_argument("--mahalanobis", choices=("diag", "full"), default="diag",
                   help="distance used by recursive pairing (default: diag)")
    d.add_argument("--matcher", choices=("greedy", "exact"), default="greedy",
                   help="pair matcher for recursive pairing (default: greedy)")
    d.add_argument("--partition", help="existing partition CSV for assign")
    d.add_argument("--design", choices=DESIGN_CHOICES, default="mt", help="assignment design (default: mt)")
    d.add_argument("--seed", type=int, help="master seed for assignment")
    d.add_argument("--k", type=int, help="number of factors K")
    d.add_argument("--factor", type=int, default=1, help="factor matched by --design mpk (default: 1)")
    d.add_argument("--num-arms", type=int, help="number of arms for --design strat")
    d.add_argument("--max-redraws", type=int, default=100_000, help="re-randomization draw limit")
    d.set_defaults(func=cmd_design)

    a = sub.add_parser("analyze", help="estimate contrasts and test hypotheses")
    a.add_argument("action", choices=("test", "estimate"), help="test (with variances) or estimate only")
    a.add_argument("--input", required=True, help="CSV with id, covariates, arm and y")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--partition", help="partition CSV (needed by block-based variances)")
    a.add_argument("--contrast", action="append",
                   help="contrast spec, repeatable: main:k, inter:1,2, cond:k|2=+1, pair:d,d0, rows:...")
    a.add_argument("--variance", action="append", choices=VARIANCE_CHOICES,
                   help="variance estimator, repeatable (default: adjusted)")
    a.add_argument("--strata-col", help="stratum column for --variance strat")
    a.add_argument("--num-arms", type=int, help="number of arms (default: largest arm label)")
    a.add_argument("--alpha", type=float, default=0.05, help="test level (default: 0.05)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    s.add_argument("--config", required=True, help="study config JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threads", type=int, help="worker threads (affects wall time only)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("rerun", help="repeat a recorded run from its manifest")
    r.add_argument("manifest", help="manifest.json of an earlier run")
    r.add_argument("--out", help="write to this directory and compare output digests")
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    if args.command == "design" and args.action in ("block", "run") and not args.tuple_size:
        parser.error("--tuple-size is required for design block/run")
    try:
        return args.func(args, argv)
    except DesignError as exc:
        log.error("%s", exc)
        return 1
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc.filename)
        return 1


if __name__ == "__main__":
    sys.exit(main())
