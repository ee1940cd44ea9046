import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from tupleworks import Contrast, DesignError, main_effect_contrast, pairwise_contrast, parse_contrast
from tupleworks.core import FactorSpace
from tupleworks.simlab import (
    DgpSpec,
    Model,
    StudyConfig,
    draw_potential_outcomes,
    load_covariate_pool,
    oracle_variance,
    run_mse_study,
    run_power_curve,
    run_size_power_study,
    xi_terms,
)
from tupleworks.simlab.oracle import mt_components, strat_components

FS2 = FactorSpace(2)
NU1 = main_effect_contrast(1, FS2)
PAIR41 = pairwise_contrast(4, 1, 4)
MODELS = [m for m in Model if m is not Model.CALIBRATED_LINEAR]


def quadrature_components(dgp, points=301):
    """MT components by direct Gauss-Hermite integration of the model functions."""
    x, w = hermegauss(points)
    w = w / math.sqrt(2 * math.pi)
    g = dgp.cond_mean_1d(x)
    c = g - w @ g
    return w @ dgp.cond_var_1d(x), (c.T * w) @ c / dgp.num_arms


class TestDgp:
    def test_model1_mu(self):
        np.testing.assert_allclose(DgpSpec("M1", tau=0.2).mu(), [0.0, 0.1, 0.2, 0.4])

    def test_model1_null_has_no_arm_differences(self):
        po = draw_potential_outcomes(DgpSpec("M1"), 100_000, seed=1)
        diff = po.table - po.table[:, :1]
        assert np.all(np.abs(diff.mean(axis=0)) < 1e-12)

    def test_model6_conditional_variance(self):
        dgp = DgpSpec("M6")
        assert dgp.cond_var_1d(np.array([2.0]))[0, 0] == pytest.approx(16.0)
        po = draw_potential_outcomes(dgp, 1_000_000, seed=5)
        x = po.covariates[:, 0]
        near = np.abs(x - 2.0) < 0.02
        resid = po.table[near, 0] - dgp.cond_mean_1d(x[near])[:, 0]
        assert near.sum() > 1000
        assert np.var(resid) == pytest.approx(16.0, rel=0.1)

    @pytest.mark.parametrize("model", ["M4", "M5"])
    def test_true_delta_against_monte_carlo(self, model):
        dgp = DgpSpec(model, tau=0.2)
        po = draw_potential_outcomes(dgp, 1_000_000, seed=2)
        nu = np.vstack([parse_contrast(p, 4).matrix for p in ("main:1", "main:2", "inter:1,2")])
        vals = po.table @ nu.T
        se = vals.std(axis=0) / math.sqrt(vals.shape[0])
        assert np.all(np.abs(vals.mean(axis=0) - dgp.true_delta(nu)) < 3 * se)

    def test_parse_aliases_and_errors(self):
        assert Model.parse("1") is Model.M1 and Model.parse("model6") is Model.M6
        with pytest.raises(DesignError, match="valid models"):
            Model.parse("M9")
        with pytest.raises(DesignError):
            DgpSpec("M2", K=3)

    def test_calibrated_shapes(self):
        dgp = DgpSpec("CalibratedLinear", tau=0.1, K=3, dim=4)
        po = draw_potential_outcomes(dgp, 50, seed=1)
        assert po.covariates.shape == (50, 4) and po.table.shape == (50, 8)
        assert dgp.noise_var == pytest.approx(0.1)

    def test_covariate_pool(self, tmp_path, rng):
        path = tmp_path / "cov.csv"
        names = ["id", "Total", "nativeAmerican", "black", "latino", "asian", "white", "male", "stability", "povertyRate"]
        rows = rng.normal(size=(30, 9)) * 5 + 3
        path.write_text(",".join(names) + "\n" + "\n".join(
            ",".join([str(i)] + [repr(float(v)) for v in r]) for i, r in enumerate(rows)) + "\n")
        pool = load_covariate_pool(path)
        np.testing.assert_allclose(pool, rows)
        dgp = DgpSpec("CalibratedLinear", K=2, dim=2, covariate_pool=pool)
        np.testing.assert_allclose(dgp.covariate_pool.mean(axis=0), 0.0, atol=1e-12)
        with pytest.raises(DesignError, match="synthetic"):
            oracle_variance(dgp, "MT", main_effect_contrast(1, FS2))


class TestOracle:
    def test_model1_main_effect(self):
        o = oracle_variance(DgpSpec("M1"), "MT", NU1)
        assert o.v_nu[0, 0] == pytest.approx(4.0)
        assert NU1.matrix @ o.v2 @ NU1.matrix.T == pytest.approx(0.0, abs=1e-12)

    def test_model3_pairwise(self):
        assert oracle_variance(DgpSpec("M3"), "MT", PAIR41).v_nu[0, 0] == pytest.approx(4.25)

    @pytest.mark.parametrize("model", MODELS)
    def test_closed_form_vs_quadrature(self, model):
        dgp = DgpSpec(model, tau=0.3)
        v1, v2 = mt_components(dgp)
        q1, q2 = quadrature_components(dgp)
        np.testing.assert_allclose(v1, q1, rtol=1e-8)
        np.testing.assert_allclose(v2, q2, rtol=1e-8, atol=1e-12)

    def test_single_stratum_is_two_sample_limit(self):
        dgp = DgpSpec("M3")
        o = oracle_variance(dgp, "C", PAIR41)
        v1, v2 = mt_components(dgp)
        total = v1 + np.diag(v2) * dgp.num_arms  # Var Y(d) = E Var + Var Gamma
        assert o.v_nu[0, 0] == pytest.approx(total[3] + total[0], rel=1e-8)
        np.testing.assert_allclose(o.vh2, 0.0, atol=1e-10)

    @pytest.mark.parametrize("model", list(Model))
    def test_blocking_never_hurts(self, model):
        dgp = DgpSpec(model, tau=0.2)
        nus = [parse_contrast(p, 4) for p in ("main:1", "main:2", "inter:1,2", "cond:1|2=+1", "pair:4,1")]
        for design in ("C", "Large-2", "Large-4", "Large-8"):
            for nu in nus:
                o = oracle_variance(dgp, design, nu)
                mt = oracle_variance(dgp, "MT", nu)
                assert mt.v_nu[0, 0] <= o.v_nu[0, 0] + 1e-10
                assert np.all(o.vh1 >= -1e-12) and np.all(o.v1 >= 0)

    def test_strata_refine_towards_mt(self):
        dgp = DgpSpec("M3")
        vals = [oracle_variance(dgp, f"Large-{S}", NU1).v_nu[0, 0] for S in (1, 2, 4, 16, 64)]
        assert vals == sorted(vals, reverse=True)
        assert vals[-1] == pytest.approx(oracle_variance(dgp, "MT", NU1).v_nu[0, 0], rel=0.02)

    def test_xi_terms(self):
        # Model 1: Gamma_d(X) = mu_d + X, so within the +1 and -1 halves only mu differs
        dgp = DgpSpec("M1", tau=0.2)
        xi1, xi0 = xi_terms(dgp, 1)
        mu = dgp.mu()
        assert xi1 == pytest.approx(np.sum((mu[2:] - mu[2:].mean()) ** 2))
        assert xi0 == pytest.approx(np.sum((mu[:2] - mu[:2].mean()) ** 2))
        o = oracle_variance(dgp, "MP-B", NU1)
        assert o.v_nu[0, 0] == pytest.approx(4.0 + xi1 + xi0)

    def test_mp_oracle_restricted_to_its_factor(self):
        with pytest.raises(DesignError):
            oracle_variance(DgpSpec("M3"), "MP-k", NU1, k=2)
        with pytest.raises(DesignError):
            oracle_variance(DgpSpec("M3"), "RE", NU1)

    def test_calibrated_components(self):
        dgp = DgpSpec("CalibratedLinear", K=2, dim=3)
        v1, v2 = mt_components(dgp)
        b = dgp.beta
        s = dgp.slopes()
        np.testing.assert_allclose(v1, s * s * (b[3:] @ b[3:]) + 0.1)
        np.testing.assert_allclose(v2, np.outer(s, s) * (b[:3] @ b[:3]) / 4)
        h1, h2 = strat_components(dgp, 1)
        np.testing.assert_allclose(h1, s * s * (b @ b) + 0.1)
        np.testing.assert_allclose(h2, 0.0, atol=1e-12)

    def test_designs_match_simulation(self):
        # n * MSE from the harness against the analytic variance, Model 3
        cfg = StudyConfig(model="M3", designs=["MT", "C", "Large-2", "MP-B"], n=1000, R=600, seed=3,
                          parameters=["main:1"], threads=4)
        rep = run_mse_study(cfg)
        dgp = DgpSpec("M3")
        for row in rep.rows:
            target = oracle_variance(dgp, row["design"], NU1).v_nu[0, 0]
            # relative s.e. of an MSE over 600 normal draws is about 6%
            assert row["mse"] * 250 == pytest.approx(target, rel=0.25)


class TestStudy:
    BASE = dict(model="M1", n=64, R=12, seed=7)

    def test_mt_ratio_is_one(self):
        rep = run_mse_study(StudyConfig(designs=["MT", "C", "B-B"], **self.BASE))
        for row in rep.rows:
            if row["design"] == "MT":
                assert row["ratio_vs_MT"] == 1.0

    def test_single_replication(self):
        rep = run_mse_study(StudyConfig(designs=["MT", "C"], model="M1", n=16, R=1, seed=1))
        assert any("R=1" in w for w in rep.warnings)

    def test_threads_do_not_change_results(self):
        designs = ["MT", "MT2", "C", "Large-2", "B-B"]
        a = run_size_power_study(StudyConfig(designs=designs, kind="size_power", threads=1, **self.BASE))
        b = run_size_power_study(StudyConfig(designs=designs, kind="size_power", threads=4, **self.BASE))
        assert a.rows == b.rows
        c = run_mse_study(StudyConfig(designs=["MT", "RE", "MP-B"], threads=3, **self.BASE))
        d = run_mse_study(StudyConfig(designs=["MT", "RE", "MP-B"], threads=1, **self.BASE))
        assert c.rows == d.rows

    def test_common_random_numbers(self):
        one = run_mse_study(StudyConfig(designs=["MT"], **self.BASE))
        two = run_mse_study(StudyConfig(designs=["MT", "C"], **self.BASE))
        assert one.rows[0]["mse"] == two.rows[0]["mse"]

    def test_power_at_null_equals_size(self):
        cfg = StudyConfig(designs=["MT", "C"], kind="size_power", tau_alt=0.0, **self.BASE)
        for row in run_size_power_study(cfg).rows:
            assert row["reject_null"] == row["reject_alt"]

    def test_power_curve_zero_reproduces_size(self):
        sp = run_size_power_study(StudyConfig(designs=["MT"], kind="size_power", **self.BASE))
        pc = run_power_curve(StudyConfig(designs=["MT"], kind="power_curve", **self.BASE), [0.0, 0.5, 1.0])
        size = {r["parameter"]: r["reject_null"] for r in sp.rows}
        for r in pc.rows:
            assert 0.0 <= r["rejection_rate"] <= 1.0
            if r["tau"] == 0.0:
                assert r["rejection_rate"] == size[r["parameter"]]

    def test_table_layout(self):
        rep = run_size_power_study(StudyConfig(designs=["MT", "C"], kind="size_power", **self.BASE))
        header, body = rep.table()
        assert header == ["model", "parameter", "H0:MT", "H0:C", "H1:MT", "H1:C"]
        assert len(body) == 5

    @pytest.mark.parametrize(
        "patch,match",
        [
            ({"designs": ["XX"]}, "valid designs"),
            ({"bogus": 1}, "unknown config field"),
            ({"designs": ["RE"], "kind": "size_power"}, "no inference"),
            ({"n": 30, "designs": ["MT"]}, "divisible"),
            ({"schema": 2, "designs": ["MT"]}, "schema"),
        ],
    )
    def test_config_errors(self, patch, match):
        data = dict(designs=["MT"], **self.BASE)
        data.update(patch)
        with pytest.raises(DesignError, match=match):
            StudyConfig.from_dict(data)

    def test_calibrated_k3(self):
        cfg = StudyConfig(model="CalibratedLinear", designs=["MT", "MT2", "MP-k", "RE"], n=64, R=3, seed=1,
                          K=3, dim=2, mp_factor=2, parameters=["main:1", "inter:1,2,3"])
        rep = run_mse_study(cfg)
        assert all(np.isfinite(r["mse"]) for r in rep.rows)
