"""Simulation oracle: known effects, compliance rates, calibration harness."""

import numpy as np
import pytest

from netexp.errors import SimulationError
from netexp.exposure import fraction_adopting_peers, fraction_treated_peers
from netexp.influence_sim import (
    SimParams,
    calibrate,
    power_curve,
    simulate_compliance,
    simulate_edge_compliance,
    simulate_influence_outcomes,
    simulate_outcomes,
)
from netexp.netgraph import generate_disjoint_cliques, generate_random_graph
from netexp.randomizer import EdgeIid, IidBernoulli, draw


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestSimulateOutcomes:
    def test_noiseless_direct_effect_only(self):
        g = generate_disjoint_cliques(3, 4)
        z = draw(IidBernoulli(0.5), g, "z").z
        params = SimParams(tau=1.5, rho=0.0, noise_sd=0.0)
        assert np.array_equal(simulate_outcomes(g, z, params), 1.5 * z)

    def test_noiseless_exposure_only(self):
        g = generate_random_graph(40, 0.15, seed=4)
        z = draw(IidBernoulli(0.5), g, "z").z
        params = SimParams(tau=0.0, rho=1.0, noise_sd=0.0)
        t = fraction_treated_peers(g, z).t
        assert np.allclose(simulate_outcomes(g, z, params), t, atol=1e-12)

    def test_noiseless_linear_combination_exact(self):
        g = generate_random_graph(60, 0.1, seed=5)
        z = draw(IidBernoulli(0.4), g, "z").z
        params = SimParams(tau=1.5, rho=0.7, noise_sd=0.0)
        t = fraction_treated_peers(g, z).t
        y = simulate_outcomes(g, z, params)
        assert np.max(np.abs(y - (1.5 * z + 0.7 * t))) < 1e-12

    def test_ols_recovers_effects(self):
        g = generate_random_graph(10_000, 8 / 9_999, seed=6)
        z = draw(IidBernoulli(0.5), g, "z").z
        params = SimParams(tau=1.0, rho=2.0, noise_sd=1.0, seed=17)
        y = simulate_outcomes(g, z, params)
        t = fraction_treated_peers(g, z).t
        X = np.column_stack([np.ones(g.n), z, t])
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        sigma2 = resid @ resid / (g.n - 3)
        cov = sigma2 * np.linalg.inv(X.T @ X)
        se = np.sqrt(np.diag(cov))
        assert abs(beta[1] - 1.0) < 4 * se[1]
        assert abs(beta[2] - 2.0) < 4 * se[2]

    def test_deterministic_and_seed_sensitive(self):
        g = generate_disjoint_cliques(4, 5)
        z = draw(IidBernoulli(0.5), g, "z").z
        a = simulate_outcomes(g, z, SimParams(tau=1.0, seed=3))
        b = simulate_outcomes(g, z, SimParams(tau=1.0, seed=3))
        c = simulate_outcomes(g, z, SimParams(tau=1.0, seed=4))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_heterogeneity_moves_treated_only(self):
        g = generate_disjoint_cliques(4, 5)
        z = draw(IidBernoulli(0.5), g, "z").z
        base = simulate_outcomes(g, z, SimParams(tau=1.0, noise_sd=0.0, seed=3))
        het = simulate_outcomes(g, z, SimParams(tau=1.0, noise_sd=0.0,
                                                tau_het_sd=2.0, seed=3))
        diff = het - base
        assert np.all(diff[z == 0] == 0)
        assert np.any(diff[z == 1] != 0)

    def test_confounder_correlates_neighbors(self):
        g = generate_disjoint_cliques(500, 2)  # 500 isolated pairs
        z = np.zeros(g.n)
        y = simulate_outcomes(g, z, SimParams(noise_sd=0.0, confound_sd=1.0, seed=8))
        pairs = y.reshape(-1, 2)
        r = np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1]
        assert r > 0.3

    def test_negative_scales_rejected(self):
        with pytest.raises(SimulationError):
            SimParams(noise_sd=-1.0)
        with pytest.raises(SimulationError):
            SimParams(tau_het_sd=-0.1)
        with pytest.raises(SimulationError):
            SimParams(confound_sd=-2.0)


class TestSimulateCompliance:
    def test_never_adopts_with_huge_negative_threshold(self):
        z = np.ones(100)
        assert not simulate_compliance(z, alpha=-1e6, beta=0.0, seed=0).any()

    def test_half_adoption_at_zero(self):
        z = draw(IidBernoulli(0.5), generate_disjoint_cliques(1, 100_000), "z").z
        d = simulate_compliance(z, alpha=0.0, beta=0.0, seed=1)
        assert abs(d[z == 1].mean() - 0.5) < 0.01
        assert abs(d[z == 0].mean() - 0.5) < 0.01

    def test_logistic_rates_by_arm(self):
        z = draw(IidBernoulli(0.5), generate_disjoint_cliques(1, 100_000), "z").z
        d = simulate_compliance(z, alpha=-2.0, beta=4.0, seed=2)
        assert abs(d[z == 1].mean() - _sigmoid(2.0)) < 0.01
        assert abs(d[z == 0].mean() - _sigmoid(-2.0)) < 0.01


class TestEdgeCompliance:
    def test_huge_gamma_keeps_everything(self):
        g = generate_disjoint_cliques(10, 6)
        w = draw(EdgeIid(0.5), g, "w")
        out = simulate_edge_compliance(g, w, gamma=1e6, delta=0.0, seed=0)
        assert out.edges == g.edges

    def test_huge_negative_gamma_drops_everything(self):
        g = generate_disjoint_cliques(10, 6)
        w = draw(EdgeIid(0.5), g, "w")
        out = simulate_edge_compliance(g, w, gamma=-1e6, delta=0.0, seed=0)
        assert out.m == 0
        assert out.n == g.n

    def test_logistic_retention_by_arm(self):
        g = generate_disjoint_cliques(20, 100)  # 20 * 4950 = 99,000 edges
        w = draw(EdgeIid(0.5), g, "w")
        out = simulate_edge_compliance(g, w, gamma=0.0, delta=2.0, seed=3)
        kept = set(out.edges)
        keep_flag = np.array([e in kept for e in g.edges])
        assert abs(keep_flag[w.w == 0].mean() - 0.5) < 0.01
        assert abs(keep_flag[w.w == 1].mean() - _sigmoid(2.0)) < 0.01

    def test_output_is_subgraph(self):
        g = generate_random_graph(50, 0.2, seed=9)
        w = draw(EdgeIid(0.3), g, "w")
        out = simulate_edge_compliance(g, w, gamma=0.5, delta=-1.0, seed=4)
        assert set(out.edges) <= set(g.edges)
        assert out.directed == g.directed

    def test_wrong_w_length_rejected(self):
        g = generate_disjoint_cliques(2, 3)
        with pytest.raises(ValueError):
            simulate_edge_compliance(g, np.ones(1), gamma=0.0, delta=0.0, seed=0)


class TestInfluenceOutcomes:
    def test_reduces_to_spillover_model_when_d_is_z(self):
        g = generate_random_graph(80, 0.08, seed=10)
        z = draw(IidBernoulli(0.5), g, "z").z
        params = SimParams(tau=1.0, rho=1.7, theta=1.7, noise_sd=1.0,
                           tau_het_sd=0.5, seed=21)
        assert np.array_equal(simulate_influence_outcomes(g, z, z, params),
                              simulate_outcomes(g, z, params))

    def test_theta_zero_ignores_adoption(self):
        g = generate_random_graph(40, 0.15, seed=11)
        z = draw(IidBernoulli(0.5), g, "z").z
        d = draw(IidBernoulli(0.3), g, "d").z
        params = SimParams(tau=1.0, theta=0.0, seed=5)
        y1 = simulate_influence_outcomes(g, z, d, params)
        y2 = simulate_influence_outcomes(g, z, np.random.default_rng(0).permutation(d),
                                         params)
        assert np.array_equal(y1, y2)

    def test_two_stage_least_squares_recovers_theta(self):
        # encouragement z shifts adoption d, whose peer fraction m drives y;
        # instrumenting m with the exposure T(z) identifies theta
        g = generate_random_graph(10_000, 8 / 9_999, seed=12)
        z = draw(IidBernoulli(0.5), g, "z").z
        params = SimParams(tau=1.0, theta=2.0, alpha=0.0, beta=3.0,
                           noise_sd=1.0, seed=33)
        d = simulate_compliance(z, params.alpha, params.beta, params.seed)
        y = simulate_influence_outcomes(g, z, d, params)
        m = fraction_adopting_peers(g, d).t
        t = fraction_treated_peers(g, z).t

        W = np.column_stack([np.ones(g.n), z, t])   # instruments
        X = np.column_stack([np.ones(g.n), z, m])   # regressors
        Xhat = W @ np.linalg.lstsq(W, X, rcond=None)[0]
        beta_iv = np.linalg.solve(Xhat.T @ X, Xhat.T @ y)
        resid = y - X @ beta_iv
        sigma2 = resid @ resid / (g.n - 3)
        cov = sigma2 * np.linalg.inv(Xhat.T @ Xhat)
        se = np.sqrt(np.diag(cov))
        assert abs(beta_iv[2] - 2.0) < 4 * se[2]


class TestCalibrate:
    GRAPH = generate_disjoint_cliques(6, 5)
    DESIGN = IidBernoulli(0.5)

    def test_requires_hundred_sims(self):
        with pytest.raises(SimulationError, match="100"):
            calibrate({"name": "sharp_null", "tau0": 0.0},
                      {"graph": self.GRAPH, "design": self.DESIGN,
                       "params": SimParams()}, n_sims=50)

    def test_rejects_unknown_test(self):
        with pytest.raises(SimulationError, match="test_spec"):
            calibrate({"name": "t_test"},
                      {"graph": self.GRAPH, "design": self.DESIGN,
                       "params": SimParams()}, n_sims=100)

    def test_reports_rates_and_ci(self):
        spec = {"name": "sharp_null", "tau0": 1.0, "R": 99}
        sim = {"graph": self.GRAPH, "design": self.DESIGN,
               "params": SimParams(tau=1.0, seed=7), "salt": "calA"}
        out = calibrate(spec, sim, n_sims=100, alpha=0.05)
        assert set(out) == {"rejection_rate", "ci_low", "ci_high", "mean_p",
                            "n_sims", "alpha"}
        assert 0.0 <= out["ci_low"] <= out["rejection_rate"] <= out["ci_high"] <= 1.0
        assert out["rejection_rate"] <= 0.15  # null is true here
        assert 0.0 < out["mean_p"] <= 1.0
        again = calibrate(spec, sim, n_sims=100, alpha=0.05)
        assert again == out

    def test_conditional_and_naive_specs_run(self):
        sim = {"graph": self.GRAPH, "design": self.DESIGN,
               "params": SimParams(tau=1.0, seed=9), "salt": "calB"}
        cond = calibrate({"name": "conditional_no_spillovers", "R": 60,
                          "focal": {"fraction": 0.4}}, sim, n_sims=100)
        assert 0.0 <= cond["rejection_rate"] <= 1.0
        naive = calibrate({"name": "naive_permutation", "R": 60}, sim, n_sims=100)
        assert naive["rejection_rate"] >= 0.0


class TestPowerCurve:
    def test_zero_effect_matches_calibrate(self):
        g = generate_disjoint_cliques(8, 5)
        spec = {"name": "sharp_null", "tau0": 0.0, "R": 99}
        sim = {"graph": g, "design": IidBernoulli(0.5),
               "params": SimParams(seed=11), "salt": "pc"}
        curve = power_curve(spec, sim, effect_grid=[0.0, 3.0], n_sims=100,
                            effect_param="rho")
        base = calibrate(spec, sim, n_sims=100)
        assert curve[0] == (0.0, base["rejection_rate"])
        assert curve[1][1] > curve[0][1]

    def test_empty_grid_rejected(self):
        with pytest.raises(SimulationError, match="grid"):
            power_curve({"name": "sharp_null", "tau0": 0.0},
                        {"graph": generate_disjoint_cliques(2, 3),
                         "design": IidBernoulli(0.5), "params": SimParams()},
                        effect_grid=[])
