import numpy as np
import pytest

from flowfit import (
    ConstantInput,
    ExponentialInput,
    FitOptions,
    ModelSpec,
    PiecewiseLinearInput,
    SyntheticScenario,
    YearGrid,
    eval_param_trajectories,
    generate,
    log_rmse,
    minimize_bfgs,
    scenario_from_dict,
)

from _scenarios import RECOVERY_SPEC, RECOVERY_THETA, recovery_scenario

GRID = YearGrid(1980, 1999)


class TestInputGenerators:
    def test_constant(self):
        assert np.all(ConstantInput(500.0).values(GRID) == 500.0)

    def test_exponential(self):
        vals = ExponentialInput(100.0, 0.05).values(GRID)
        assert vals[0] == pytest.approx(100.0)
        assert vals[10] == pytest.approx(100.0 * np.exp(0.5))

    def test_piecewise(self):
        vals = PiecewiseLinearInput(((1980, 0.0), (1990, 10.0), (1999, 1.0))).values(GRID)
        assert vals[0] == 0.0
        assert vals[10] == 10.0
        assert vals[5] == pytest.approx(5.0)

    def test_piecewise_validation(self):
        with pytest.raises(ValueError, match="two"):
            PiecewiseLinearInput(((1980, 1.0),)).values(GRID)
        with pytest.raises(ValueError, match="increasing"):
            PiecewiseLinearInput(((1990, 1.0), (1980, 2.0))).values(GRID)


class TestGenerate:
    def test_noise_free_flows_exact(self):
        obs, truth = generate(recovery_scenario(grid=GRID))
        assert np.array_equal(obs.m, truth.flow_m)
        assert np.array_equal(obs.p, truth.flow_p)

    def test_first_year_anchored_under_noise(self):
        obs, truth = generate(recovery_scenario(noise_sd=0.1, seed=3, grid=GRID))
        assert obs.m[0] == truth.flow_m[0]
        assert obs.p[0] == truth.flow_p[0]
        assert not np.array_equal(obs.m[1:], truth.flow_m[1:])

    def test_seed_determinism(self):
        a, _ = generate(recovery_scenario(noise_sd=0.05, seed=9, grid=GRID))
        b, _ = generate(recovery_scenario(noise_sd=0.05, seed=9, grid=GRID))
        c, _ = generate(recovery_scenario(noise_sd=0.05, seed=10, grid=GRID))
        assert np.array_equal(a.m, b.m)
        assert not np.array_equal(a.m, c.m)

    def test_generated_series_pass_validation(self):
        # ObservedSeries invariants are checked on construction inside generate
        obs, _ = generate(recovery_scenario(noise_sd=0.3, seed=1, grid=GRID))
        assert np.all(obs.m > 0) and np.all(obs.p > 0)

    def test_degenerate_input_rejected(self):
        scen = recovery_scenario(grid=GRID)
        scen.b_input = PiecewiseLinearInput(((1980, 1000.0), (1999, -50.0)))
        with pytest.raises(ValueError, match="degenerate"):
            generate(scen)

    def test_forcing_needs_p_intl_input(self):
        scen = recovery_scenario(grid=GRID)
        scen.spec = ModelSpec(2, 2, forcing=True)
        scen.theta_true = np.concatenate([RECOVERY_THETA, [-5.0]])
        with pytest.raises(ValueError, match="p_intl"):
            generate(scen)

    def test_forcing_scenario_generates_p_intl(self):
        scen = recovery_scenario(grid=GRID, p_intl=True)
        scen.spec = ModelSpec(2, 2, forcing=True)
        scen.theta_true = np.concatenate([RECOVERY_THETA, [0.5]])
        obs, truth = generate(scen)
        assert obs.p_intl is not None
        # forcing feeds the PhD stock: flows differ from the no-forcing run
        obs0, truth0 = generate(recovery_scenario(grid=GRID, p_intl=True))
        assert truth.flow_p[5] > truth0.flow_p[5]

    def test_invalid_stocks_rejected(self):
        scen = recovery_scenario(grid=GRID)
        scen.stock_m0 = 0.0
        with pytest.raises(ValueError, match="positive"):
            generate(scen)


class TestScenarioFromDict:
    def scenario_dict(self):
        return {
            "t_min": 1980,
            "t_max": 1999,
            "spec": {"deg_gamma": 2, "deg_rho": 2, "forcing": False},
            "theta_true": list(RECOVERY_THETA),
            "b_input": {"kind": "piecewise",
                        "points": [[1980, 20000], [1990, 15000], [1999, 24000]]},
            "stock_m0": 9000.0,
            "stock_p0": 4000.0,
            "noise_sd": 0.02,
            "seed": 11,
        }

    def test_round_trip(self):
        scen = scenario_from_dict(self.scenario_dict())
        obs, truth = generate(scen)
        assert obs.grid.n_years == 20

    def test_missing_field(self):
        d = self.scenario_dict()
        del d["stock_m0"]
        with pytest.raises(ValueError, match="stock_m0"):
            scenario_from_dict(d)

    def test_theta_length_checked(self):
        d = self.scenario_dict()
        d["theta_true"] = [0.0, 1.0]
        with pytest.raises(ValueError, match="length"):
            scenario_from_dict(d)

    def test_unknown_generator(self):
        d = self.scenario_dict()
        d["b_input"] = {"kind": "sinusoid"}
        with pytest.raises(ValueError, match="kind"):
            scenario_from_dict(d)


class TestMonteCarloRecovery:
    """Noise-floor and parameter-recovery experiments over 20 seeds each."""

    N_SEEDS = 20

    def warm_refit(self, obs, options=None):
        starts = [RECOVERY_THETA]
        return minimize_bfgs(RECOVERY_SPEC, obs, starts, options or FitOptions())

    def test_refit_rmse_matches_noise_floor(self):
        rmses = []
        for seed in range(self.N_SEEDS):
            obs, _ = generate(recovery_scenario(noise_sd=0.04, seed=seed))
            fit = self.warm_refit(obs)
            rmses.append(log_rmse(fit.sse, 2 * obs.grid.n_years))
        assert all(0.025 <= r <= 0.055 for r in rmses)

    def test_branching_fraction_recovery(self):
        true_traj = eval_param_trajectories(RECOVERY_THETA, RECOVERY_SPEC,
                                            YearGrid(1969, 2017))
        hits = 0
        for seed in range(self.N_SEEDS):
            obs, _ = generate(recovery_scenario(noise_sd=0.02, seed=1000 + seed))
            fit = self.warm_refit(obs)
            fitted = eval_param_trajectories(fit.theta_hat, RECOVERY_SPEC, obs.grid)
            if np.max(np.abs(fitted.rho_bm - true_traj.rho_bm)) <= 0.05:
                hits += 1
        assert hits >= 0.9 * self.N_SEEDS
