"""Wald and t tests, confidence intervals, and the chi-square / normal numerics behind them.

The distribution functions are self-contained (regularized incomplete gamma
plus ``math.erfc``) and accurate to about 1e-13 relative error.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DesignError

log = logging.getLogger(__name__)

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000
COND_WARN = 1e12


# --------------------------------------------------------------------------
# distribution numerics


def _gamma_series(a: float, x: float) -> float:
    """Lower regularized P(a, x) by its power series (good for x < a + 1)."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a: float, x: float) -> float:
    """Upper regularized Q(a, x) by Lentz's continued fraction (good for x >= a + 1)."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cfrac(a, x)


def gamma_q(a: float, x: float) -> float:
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cfrac(a, x)


def _check_df(df) -> float:
    if df < 1:
        raise DesignError("degrees of freedom must be >= 1")
    return float(df)


def chi2_cdf(x: float, df: float) -> float:
    df = _check_df(df)
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    return gamma_p(df / 2.0, x / 2.0)


def chi2_sf(x: float, df: float) -> float:
    df = _check_df(df)
    if math.isinf(x):
        return 0.0 if x > 0 else 1.0
    return gamma_q(df / 2.0, x / 2.0)


def chi2_pdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    a = df / 2.0
    return math.exp((a - 1.0) * math.log(x) - x / 2.0 - a * math.log(2.0) - math.lgamma(a))


def chi2_quantile(p: float, df: float) -> float:
    """Inverse chi-square CDF by bracketing and safeguarded Newton steps."""
    if not 0.0 < p < 1.0:
        raise DesignError("probability must lie strictly between 0 and 1")
    df = _check_df(df)
    # Wilson-Hilferty starting point
    z = normal_quantile(p)
    c = 2.0 / (9.0 * df)
    x = max(df * (1.0 - c + z * math.sqrt(c)) ** 3, 1e-8)
    lo, hi = 0.0, x
    while chi2_cdf(hi, df) < p:
        lo, hi = hi, hi * 2.0 + 1.0
    for _ in range(400):
        # work on whichever tail is smaller to keep relative accuracy
        f = chi2_cdf(x, df) - p if p < 0.5 else (1.0 - p) - chi2_sf(x, df)
        if f > 0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        dens = chi2_pdf(x, df)
        step = f / dens if dens > 0 else float("inf")
        new = x - step
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        if abs(new - x) <= 4e-16 * abs(new) or new == 0.0:
            return new
        x = new
    return x


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


# Acklam's rational approximation, refined by Halley steps on erfc
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DesignError("probability must lie strictly between 0 and 1")
    q = min(p, 1.0 - p)
    if q < 0.02425:
        r = math.sqrt(-2.0 * math.log(q))
        x = (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / (
            (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        )
    else:
        r = q - 0.5
        s = r * r
        x = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r / (
            ((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0
        )
    # x approximates the lower-tail quantile of q (x <= 0)
    for _ in range(3):
        e = normal_cdf(x) - q
        u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
        x = x - u / (1.0 + x * u / 2.0)
    return -x if p > 0.5 else x


# --------------------------------------------------------------------------
# tests


@dataclass
class TestResult:
    statistic: float
    df: int | None
    p_value: float
    reject: bool
    method: str
    critical_value: float
    alpha: float
    warnings: list[str] = field(default_factory=list)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "method": self.method,
            "critical_value": self.critical_value,
            "warnings": list(self.warnings),
        }


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DesignError("alpha must lie strictly between 0 and 1")


def _sym_pinv(a: np.ndarray, warnings: list[str]) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    top = w.max()
    if top <= 0:
        raise DesignError("degenerate variance: projected variance matrix is not positive")
    keep = w > top / COND_WARN
    if not keep.all():
        msg = (
            f"projected variance is near-singular (condition > {COND_WARN:.0e}); "
            "pseudo-inverse used, df unchanged"
        )
        log.warning(msg)
        warnings.append(msg)
    return (v[:, keep] / w[keep]) @ v[:, keep].T


def wald_test(delta_hat, v_contrast, Psi=None, Delta0=None, n: int = 1, alpha: float = 0.05,
              method: str = "wald") -> TestResult:
    """Chi-square test of Psi @ Delta = Delta0.

    ``v_contrast`` is the variance of sqrt(n) * (Delta_hat - Delta); the
    statistic is n * r' (Psi V Psi')^+ r with r = Psi @ Delta_hat - Delta0.
    """
    _check_alpha(alpha)
    est = np.atleast_1d(np.asarray(delta_hat, dtype=np.float64))
    V = np.atleast_2d(np.asarray(v_contrast, dtype=np.float64))
    m = est.size
    if V.shape != (m, m):
        raise DesignError(f"variance is {V.shape}, expected {(m, m)}")
    P = np.eye(m) if Psi is None else np.atleast_2d(np.asarray(Psi, dtype=np.float64))
    if P.shape[1] != m:
        raise DesignError(f"Psi has {P.shape[1]} columns, expected {m}")
    ell = P.shape[0]
    if np.linalg.matrix_rank(P) < ell:
        raise DesignError("Psi must have full row rank")
    d0 = np.zeros(ell) if Delta0 is None else np.atleast_1d(np.asarray(Delta0, dtype=np.float64))
    if d0.shape != (ell,):
        raise DesignError(f"Delta0 has length {d0.size}, expected {ell}")
    warnings: list[str] = []
    inv = _sym_pinv(P @ V @ P.T, warnings)
    r = P @ est - d0
    stat = float(n * r @ inv @ r)
    stat = max(stat, 0.0)
    crit = chi2_quantile(1.0 - alpha, ell)
    return TestResult(stat, ell, chi2_sf(stat, ell), stat > crit, method, crit, alpha, warnings)


def t_test(estimate: float, variance: float, n: int, delta0: float = 0.0, alpha: float = 0.05,
           method: str = "t") -> TestResult:
    """Two-sided normal test; ``variance`` is on the sqrt(n) scale."""
    _check_alpha(alpha)
    if not variance > 0:
        raise DesignError("degenerate variance: non-positive variance estimate")
    stat = (estimate - delta0) / math.sqrt(variance / n)
    crit = normal_quantile(1.0 - alpha / 2.0)
    p = min(1.0, 2.0 * normal_sf(abs(stat)))
    return TestResult(stat, None, p, abs(stat) > crit, method, crit, alpha)


def confidence_interval(estimate: float, variance: float, n: int, alpha: float = 0.05) -> tuple[float, float]:
    _check_alpha(alpha)
    if variance < 0:
        raise DesignError("variance must be non-negative")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(variance / n)
    return estimate - half, estimate + half
