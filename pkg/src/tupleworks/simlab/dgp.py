"""Data-generating processes for the simulation studies.

Models 1-6 have two factors and one covariate::

    Y(d) = mu_d + mu_d(X) + sigma_d(X) * eps,   X, eps ~ N(0, 1)

``CalibratedLinear`` has K factors and nine standardized covariates, of which
the first ``dim`` are observed by the designs.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import DesignError, FactorSpace, PotentialOutcomes
from ..rng import stream

# OLS coefficients of the control outcome on the nine standardized covariates
CALIBRATED_BETA = np.array(
    [-0.9808, 0.0371, 2.9176, 2.5978, 1.6750, 1.8927, -0.0379, 0.0045, -0.1818]
)
CALIBRATED_NAMES = (
    "Total", "nativeAmerican", "black", "latino", "asian", "white", "male", "stability", "povertyRate",
)
CALIBRATED_NOISE_VAR = 0.1

# slope gamma_d per arm in canonical order (-1,-1), (-1,+1), (+1,-1), (+1,+1)
MODEL_GAMMA = np.array([-1.0, 1.0, 0.5, 2.0])


class Model(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"
    CALIBRATED_LINEAR = "CalibratedLinear"

    @classmethod
    def parse(cls, value) -> "Model":
        if isinstance(value, Model):
            return value
        text = str(value).strip()
        aliases = {str(k): f"M{k}" for k in range(1, 7)}
        aliases.update({f"model{k}": f"M{k}" for k in range(1, 7)})
        text = aliases.get(text.lower(), text)
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise DesignError(f"unknown model {value!r}; valid models: {valid}") from None


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """A potential-outcome model.

    For models 1-6, ``K`` is 2 and ``dim`` is 1. For ``CalibratedLinear``,
    ``covariate_pool`` optionally holds rows of the nine covariates to resample
    from (standardized internally); otherwise covariates are iid N(0, 1).
    """

    model: Model
    tau: float = 0.0
    K: int = 2
    dim: int = 1
    beta: np.ndarray = field(default_factory=lambda: CALIBRATED_BETA.copy())
    noise_var: float = 1.0
    covariate_pool: np.ndarray | None = None

    def __post_init__(self):
        model = Model.parse(self.model)
        object.__setattr__(self, "model", model)
        if model is Model.CALIBRATED_LINEAR:
            if not 1 <= self.K:
                raise DesignError("K must be >= 1")
            if not 1 <= self.dim <= CALIBRATED_BETA.size:
                raise DesignError(f"dim must lie in 1..{CALIBRATED_BETA.size}")
            beta = np.asarray(self.beta, dtype=np.float64)
            if beta.shape != (CALIBRATED_BETA.size,):
                raise DesignError(f"beta must have {CALIBRATED_BETA.size} entries")
            object.__setattr__(self, "beta", beta)
            if self.noise_var == 1.0:
                object.__setattr__(self, "noise_var", CALIBRATED_NOISE_VAR)
            if self.covariate_pool is not None:
                pool = np.asarray(self.covariate_pool, dtype=np.float64)
                if pool.ndim != 2 or pool.shape[1] != CALIBRATED_BETA.size or pool.shape[0] < 2:
                    raise DesignError(f"covariate pool must be (rows >= 2, {CALIBRATED_BETA.size})")
                sd = pool.std(axis=0)
                sd[sd == 0] = 1.0
                object.__setattr__(self, "covariate_pool", (pool - pool.mean(axis=0)) / sd)
        else:
            if self.K != 2 or self.dim != 1:
                raise DesignError(f"model {model.value} has K=2 and one covariate")

    @property
    def factor_space(self) -> FactorSpace:
        return FactorSpace(self.K)

    @property
    def num_arms(self) -> int:
        return 2**self.K

    # ---- model pieces ----------------------------------------------------

    def mu(self) -> np.ndarray:
        """Constant part mu_d per arm."""
        levels = self.factor_space.level_table
        if self.model is Model.CALIBRATED_LINEAR:
            if self.K == 1:
                return self.tau * levels[:, 0].astype(np.float64)
            rest = levels[:, 1:].sum(axis=1) / (self.K - 1)
            return self.tau * (levels[:, 0] + rest)
        # mu_{-1,-1} = 0, mu_{-1,1} = tau/2, mu_{1,-1} = tau, mu_{1,1} = 2 tau
        return self.tau * np.array([0.0, 0.5, 1.0, 2.0])

    def slopes(self) -> np.ndarray:
        """gamma_d per arm (sign on the linear index for CalibratedLinear)."""
        if self.model is Model.CALIBRATED_LINEAR:
            if self.K == 1:
                return np.ones(2)
            return np.where(self.factor_space.level_table[:, 1] == 1, 1.0, -1.0)
        if self.model in (Model.M1, Model.M2):
            return np.ones(4)
        return MODEL_GAMMA.copy()

    def scale_coefs(self) -> np.ndarray:
        """|1 + d1 + d2| per arm for Model 6 (sigma_d(X) = coef * X^2)."""
        lv = self.factor_space.level_table
        return np.abs(1 + lv[:, 0] + lv[:, 1]).astype(np.float64)

    def cond_mean_1d(self, x: np.ndarray) -> np.ndarray:
        """Gamma_d(x) = E[Y(d) | X = x] for models 1-6; shape (len(x), 4)."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        g = self.slopes()[None, :]
        quad = (x * x - 1.0) / 3.0
        m = self.model
        if m is Model.M1:
            f = x + 0.0 * g
        elif m is Model.M2:
            f = x + quad + 0.0 * g
        elif m in (Model.M3, Model.M6):
            f = g * x + quad
        elif m is Model.M4:
            f = np.sin(g * x)
        elif m is Model.M5:
            f = np.sin(g * x) + g * x / 10.0 + quad
        else:
            raise DesignError("cond_mean_1d applies to models 1-6 only")
        return self.mu()[None, :] + f

    def cond_var_1d(self, x: np.ndarray) -> np.ndarray:
        """Var(Y(d) | X = x) for models 1-6; shape (len(x), 4)."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        if self.model is Model.M6:
            return (self.scale_coefs()[None, :] * x * x) ** 2 * self.noise_var
        return np.full((x.shape[0], 4), self.noise_var)

    def true_gamma(self) -> np.ndarray:
        """E[Y(d)] per arm; every conditional-mean term integrates to zero."""
        return self.mu()

    def true_delta(self, nu) -> np.ndarray:
        m = nu.matrix if hasattr(nu, "matrix") else np.atleast_2d(nu)
        return m @ self.true_gamma()


def load_covariate_pool(path) -> np.ndarray:
    """Read the nine calibration covariates from a CSV (an ``id`` column is ignored).

    Named columns matching the calibration names are used in that order when
    all are present; otherwise the first nine non-id columns are taken.
    """
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise DesignError("covariate CSV needs a header and at least two rows")
    header = [h.strip() for h in rows[0]]
    if all(n in header for n in CALIBRATED_NAMES):
        cols = [header.index(n) for n in CALIBRATED_NAMES]
    else:
        cols = [k for k, h in enumerate(header) if h != "id"][: CALIBRATED_BETA.size]
    if len(cols) < CALIBRATED_BETA.size:
        raise DesignError(f"covariate CSV has {len(cols)} usable columns, need {CALIBRATED_BETA.size}")
    try:
        return np.array([[float(r[c]) for c in cols] for r in rows[1:] if r], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise DesignError(f"bad covariate CSV: {exc}") from None


def draw_potential_outcomes(dgp: DgpSpec, n_units: int, seed: int) -> PotentialOutcomes:
    """Draw covariates and the full table of potential outcomes.

    One noise draw per unit is shared by all arms.
    """
    if n_units < 1:
        raise DesignError("n_units must be positive")
    rng = stream(seed, "dgp", dgp.model.value)
    if dgp.model is Model.CALIBRATED_LINEAR:
        if dgp.covariate_pool is None:
            xt = rng.standard_normal((n_units, CALIBRATED_BETA.size))
        else:
            xt = dgp.covariate_pool[rng.integers(0, dgp.covariate_pool.shape[0], size=n_units)]
        eps = rng.standard_normal(n_units) * np.sqrt(dgp.noise_var)
        index = xt @ dgp.beta
        table = dgp.mu()[None, :] + dgp.slopes()[None, :] * index[:, None] + eps[:, None]
        return PotentialOutcomes(xt[:, : dgp.dim], table)
    x = rng.standard_normal(n_units)
    eps = rng.standard_normal(n_units) * np.sqrt(dgp.noise_var)
    mean = dgp.cond_mean_1d(x)
    if dgp.model is Model.M6:
        sd = dgp.scale_coefs()[None, :] * (x * x)[:, None]
    else:
        sd = np.ones((1, 4))
    return PotentialOutcomes(x, mean + sd * eps[:, None])
