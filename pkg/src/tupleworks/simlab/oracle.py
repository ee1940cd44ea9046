"""Analytic asymptotic variances of sqrt(n) * (Delta_hat - Delta) under a DGP.

Only used to check estimators and simulations; estimators never call it.

Matched tuples (and replicates)::

    V = diag(E[Var(Y(d) | X)]) + Cov(Gamma_d(X), Gamma_d'(X)) / |D|

Stratified (h = equal-probability quantile strata of the first covariate)::

    V_h = diag(E[Var(Y(d) | h)]) + Cov(E[Y(d) | h], E[Y(d') | h]) / |D|

Factor-k matched pairs adds xi_1 + xi_0 to nu_k V nu_k'.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from ..core import Contrast, DesignError
from ..inference import normal_quantile
from .dgp import DgpSpec, Model

HERMITE_POINTS = 201
LEGENDRE_POINTS = 200
TRUNCATE = 12.0


@dataclass(frozen=True, eq=False)
class OracleVariance:
    design: str
    v1: np.ndarray  # (|D|,) diagonal
    v2: np.ndarray  # (|D|, |D|)
    v_nu: np.ndarray  # (m, m) contrast-scale variance for the design
    vh1: np.ndarray | None = None
    vh2: np.ndarray | None = None
    xi1: float | None = None
    xi0: float | None = None

    @property
    def v(self) -> np.ndarray:
        return np.diag(self.v1) + self.v2

    @property
    def vh(self) -> np.ndarray | None:
        return None if self.vh1 is None else np.diag(self.vh1) + self.vh2


@lru_cache(maxsize=None)
def _hermite() -> tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(HERMITE_POINTS)
    return x, w / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=None)
def _legendre() -> tuple[np.ndarray, np.ndarray]:
    return leggauss(LEGENDRE_POINTS)


def _phi(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def strata_nodes(S: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Quadrature (nodes, weights) for X restricted to each of S equal-probability
    normal strata; weights include the normal density, so they sum to 1/S."""
    if S < 1:
        raise DesignError("need at least one stratum")
    cuts = [-TRUNCATE] + [normal_quantile(s / S) for s in range(1, S)] + [TRUNCATE]
    t, w = _legendre()
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        x = 0.5 * (b - a) * t + 0.5 * (b + a)
        out.append((x, 0.5 * (b - a) * w * _phi(x)))
    return out


def _moments_1d(dgp: DgpSpec) -> tuple[np.ndarray, np.ndarray]:
    """(E[Var(Y(d)|X)] per arm, Cov(Gamma_d(X), Gamma_d'(X))) for models 1-6."""
    if dgp.model in (Model.M1, Model.M2, Model.M3, Model.M6):
        return _polynomial_moments(dgp)
    x, w = _hermite()
    g = dgp.cond_mean_1d(x)
    mean = w @ g
    c = g - mean
    return w @ dgp.cond_var_1d(x), (c.T * w) @ c


def _polynomial_moments(dgp: DgpSpec) -> tuple[np.ndarray, np.ndarray]:
    # Gamma_d(X) = mu_d + a_d X + b (X^2 - 1); Cov = a_d a_d' + 2 b^2
    a = dgp.slopes()
    b = 0.0 if dgp.model is Model.M1 else 1.0 / 3.0
    cov = np.outer(a, a) + 2.0 * b * b
    if dgp.model is Model.M6:
        ev = 3.0 * dgp.scale_coefs() ** 2 * dgp.noise_var  # E[X^4] = 3
    else:
        ev = np.full(4, dgp.noise_var)
    return ev, cov


def _calibrated_parts(dgp: DgpSpec) -> tuple[float, float, float]:
    """(|beta_obs|^2, |beta_unobs|^2, beta_1) under iid N(0,1) covariates."""
    if dgp.covariate_pool is not None:
        raise DesignError("oracle moments need synthetic N(0,1) covariates, not a covariate pool")
    b = dgp.beta
    return float(b[: dgp.dim] @ b[: dgp.dim]), float(b[dgp.dim :] @ b[dgp.dim :]), float(b[0])


def mt_components(dgp: DgpSpec) -> tuple[np.ndarray, np.ndarray]:
    """(V1 diagonal, V2) for matched tuples."""
    D = dgp.num_arms
    if dgp.model is Model.CALIBRATED_LINEAR:
        obs, unobs, _ = _calibrated_parts(dgp)
        s = dgp.slopes()
        ev = s * s * unobs + dgp.noise_var
        cov = np.outer(s, s) * obs
    else:
        ev, cov = _moments_1d(dgp)
    return ev, cov / D


def strat_components(dgp: DgpSpec, S: int) -> tuple[np.ndarray, np.ndarray]:
    """(V_h1 diagonal, V_h2) for S equal-probability strata on the first covariate."""
    D = dgp.num_arms
    if dgp.model is Model.CALIBRATED_LINEAR:
        obs, unobs, b1 = _calibrated_parts(dgp)
        # E[X | stratum] for each stratum; share 1/S each
        m = np.array([(w * x).sum() * S for x, w in strata_nodes(S)])
        between = float(np.mean(m * m))
        s = dgp.slopes()
        total = s * s * (obs + unobs) + dgp.noise_var
        vh1 = total - s * s * b1 * b1 * between
        vh2 = np.outer(s, s) * b1 * b1 * between / D
        return vh1, vh2
    means, second, probs = [], [], []
    for x, w in strata_nodes(S):
        p = w.sum()
        g = dgp.cond_mean_1d(x)
        means.append(w @ g / p)
        second.append(w @ (g * g + dgp.cond_var_1d(x)) / p)
        probs.append(p)
    means, second, probs = np.array(means), np.array(second), np.array(probs)
    probs = probs / probs.sum()
    within = probs @ (second - means * means)
    centered = means - probs @ means
    return within, (centered.T * probs) @ centered / D


def _cond_mean_samples(dgp: DgpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights representation of Gamma_d(X) usable for E[(linear comb)^2]."""
    if dgp.model is Model.CALIBRATED_LINEAR:
        obs, _, _ = _calibrated_parts(dgp)
        # Gamma_d(X) = mu_d + s_d * sqrt(obs) * Z with Z ~ N(0,1)
        x, w = _hermite()
        g = dgp.mu()[None, :] + dgp.slopes()[None, :] * math.sqrt(obs) * x[:, None]
        return g, w
    x, w = _hermite()
    return dgp.cond_mean_1d(x), w


def xi_terms(dgp: DgpSpec, k: int) -> tuple[float, float]:
    """(xi_1, xi_0) for the factor-k matched-pairs design (uncentered second moments)."""
    fs = dgp.factor_space
    if not 1 <= k <= fs.K:
        raise DesignError(f"factor {k} out of range 1..{fs.K}")
    g, w = _cond_mean_samples(dgp)
    col = fs.level_table[:, k - 1]
    out = []
    for sign in (1, -1):
        sub = g[:, col == sign]
        dev = sub - sub.mean(axis=1, keepdims=True)
        out.append(float(w @ (dev * dev).sum(axis=1)))
    return out[0], out[1]


def _design_strata(design: str) -> int | None:
    if design == "C":
        return 1
    if design.startswith("Large-"):
        try:
            return int(design.split("-", 1)[1])
        except ValueError:
            pass
    return None


def oracle_variance(dgp: DgpSpec, design: str, nu, k: int = 1) -> OracleVariance:
    """Asymptotic variance of the contrast estimate under ``design``.

    Supported designs: MT, MT2, C, Large-S, MP-k (factor ``k``, or MP-B for k=1).
    """
    nu_m = nu.matrix if isinstance(nu, Contrast) else np.atleast_2d(np.asarray(nu, dtype=np.float64))
    if nu_m.shape[1] != dgp.num_arms:
        raise DesignError(f"contrast has {nu_m.shape[1]} columns, expected {dgp.num_arms}")
    v1, v2 = mt_components(dgp)
    v = np.diag(v1) + v2
    if design in ("MT", "MT2"):
        return OracleVariance(design, v1, v2, nu_m @ v @ nu_m.T)
    S = _design_strata(design)
    if S is not None:
        vh1, vh2 = strat_components(dgp, S)
        vh = np.diag(vh1) + vh2
        return OracleVariance(design, v1, v2, nu_m @ vh @ nu_m.T, vh1, vh2)
    if design in ("MP-k", "MP-B"):
        if design == "MP-B":
            k = 1
        fs = dgp.factor_space
        target = fs.level_table[:, k - 1].astype(np.float64)
        if nu_m.shape[0] != 1 or not np.allclose(nu_m[0], target):
            raise DesignError("the factor-specific matched-pairs oracle covers only the main effect of that factor")
        xi1, xi0 = xi_terms(dgp, k)
        return OracleVariance(design, v1, v2, nu_m @ v @ nu_m.T + xi1 + xi0, xi1=xi1, xi0=xi0)
    raise DesignError(f"no oracle variance for design {design!r}; supported: MT, MT2, C, Large-S, MP-k")
