import math

import numpy as np
import pytest

from changefusion.control import amplitude_caps, optimal_alpha, optimal_c
from changefusion.dp import EnergyWeights, energy_bellman_solve, solve_value_function
from changefusion.model import (
    ChangeModel,
    NetworkModel,
    effective_variance,
    posterior_update,
    prior_update,
)
from changefusion.policies import (
    BeamformingPolicy,
    PolicyState,
    centralized_equivalent,
    energy_policy_step,
    kl_thresholds,
    mmse_channel_estimate,
    optimal_policy_step,
    quantizer_baseline_step,
    quantizer_posterior,
    quantizer_spec,
    required_quantizer_snr,
    solve_quantizer_value_function,
    suboptimal_policy_step,
)

SETUP1 = ChangeModel(m0=0.0, m1=0.75, p=0.05, nu=0.0)
SETUP1_NET = NetworkModel(
    sigma_obs_sq=[1.0, 1.0],
    gain=[1.0, 1.0],
    mac_sigma_sq=1.0,
    power=[7.5, 7.5],
)


@pytest.fixture(scope="module")
def vf():
    return solve_value_function(SETUP1, SETUP1_NET, 0.01, grid_points=400)


class TestOptimalStep:
    def test_stops_at_threshold(self, vf):
        state = PolicyState(mu=vf.mu_star + 1e-6)
        action, new = optimal_policy_step(state, None, vf, SETUP1, SETUP1_NET)
        assert action.stop
        assert new.stopped

    def test_continue_emits_variance_minimizing_control(self, vf):
        state = PolicyState(mu=0.2, energy_spent=np.zeros(2))
        action, new = optimal_policy_step(state, None, vf, SETUP1, SETUP1_NET)
        assert not action.stop
        beta = prior_update(0.2, SETUP1)
        caps = amplitude_caps(SETUP1_NET, beta, SETUP1)
        np.testing.assert_allclose(
            action.control.alpha, optimal_alpha(caps, SETUP1_NET)
        )
        assert action.control.c == pytest.approx(
            np.full(2, optimal_c(beta, SETUP1))
        )

    def test_absorbs_observation_before_deciding(self, vf):
        state = PolicyState(mu=0.2, energy_spent=np.zeros(2))
        _, state = optimal_policy_step(state, None, vf, SETUP1, SETUP1_NET)
        sig = effective_variance(SETUP1_NET, state.last_control.alpha)
        _, after = optimal_policy_step(state, 0.6, vf, SETUP1, SETUP1_NET)
        assert after.mu == pytest.approx(
            posterior_update(0.6, 0.2, sig, SETUP1), rel=1e-12
        )
        assert after.k == state.k + 1

    def test_observation_without_control_rejected(self, vf):
        with pytest.raises(ValueError):
            optimal_policy_step(PolicyState(mu=0.2), 0.1, vf, SETUP1, SETUP1_NET)

    def test_energy_ledger_accumulates(self, vf):
        state = PolicyState(mu=0.2, energy_spent=np.zeros(2))
        action, state = optimal_policy_step(state, None, vf, SETUP1, SETUP1_NET)
        beta = prior_update(0.2, SETUP1)
        expect = np.asarray(action.control.alpha) ** 2 * (
            SETUP1_NET.sigma_obs_sq + SETUP1.mean_gap**2 * beta * (1 - beta)
        )
        np.testing.assert_allclose(state.energy_spent, expect)


class TestSuboptimalStep:
    def test_controls_follow_prior_schedule(self, vf):
        # The amplitudes for sample k + 1 depend only on the stage index,
        # never on the realized belief.
        for mu in (0.05, 0.4):
            state = PolicyState(mu=mu, k=3, energy_spent=np.zeros(2))
            action, _ = suboptimal_policy_step(state, None, vf, SETUP1, SETUP1_NET)
            beta = 1.0 - (1.0 - SETUP1.nu) * (1.0 - SETUP1.p) ** 4
            caps = amplitude_caps(SETUP1_NET, beta, SETUP1)
            np.testing.assert_allclose(
                action.control.alpha, optimal_alpha(caps, SETUP1_NET)
            )

    def test_same_stopping_rule_as_optimal(self, vf):
        state = PolicyState(mu=vf.mu_star + 1e-6)
        action, _ = suboptimal_policy_step(state, None, vf, SETUP1, SETUP1_NET)
        assert action.stop


@pytest.fixture(scope="module")
def evf():
    net = NetworkModel(
        sigma_obs_sq=[1.0, 1.0],
        gain=[1.0, 1.0],
        mac_sigma_sq=1.0,
        energy_budget=[7.5, 7.5],
    )
    w = EnergyWeights([1e-3, 1e-3], 0.01)
    return net, energy_bellman_solve(
        SETUP1, net, w, grid_points=201, quad_nodes=15, golden_iters=30
    )


class TestEnergyStep:
    def test_requires_control_table(self, vf):
        bare = solve_value_function(SETUP1, SETUP1_NET, 0.01, grid_points=50)
        bare.per_mu_controls = None
        with pytest.raises(ValueError):
            energy_policy_step(
                PolicyState(mu=0.2), None, bare, SETUP1, SETUP1_NET
            )

    def test_amplitude_looked_up_from_table(self, evf):
        net, vfe = evf
        state = PolicyState(mu=0.37, energy_spent=np.zeros(2))
        action, _ = energy_policy_step(state, None, vfe, SETUP1, net)
        want = np.interp(0.37, vfe.grid, vfe.per_mu_controls.alpha[:, 0])
        assert action.control.alpha[0] == pytest.approx(want)


class TestQuantizer:
    def test_spec_hand_values(self):
        q = quantizer_spec(SETUP1, SETUP1_NET, [0.375, 0.375])
        # The midpoint threshold makes the two error rates symmetric.
        np.testing.assert_allclose(q.q0 + q.q1, 1.0)
        assert q.q0[0] == pytest.approx(0.5 * math.erfc(0.375 / math.sqrt(2)))

    def test_kl_thresholds_symmetric_frozen(self):
        t = kl_thresholds(SETUP1, SETUP1_NET)
        np.testing.assert_allclose(t, [0.59375, 0.59375])
        # The KL-optimal threshold for unequal-mean Gaussians sits past
        # the midpoint, toward the null mean's far side.
        assert t[0] > 0.5 * (SETUP1.m0 + SETUP1.m1)

    def test_required_snr(self):
        assert required_quantizer_snr(2, 2) == pytest.approx(7.5)
        assert required_quantizer_snr(2, 1) == pytest.approx(3.0)
        assert required_quantizer_snr(4, 2) == pytest.approx(127.5)

    def test_posterior_matches_bayes_oracle(self):
        q = quantizer_spec(SETUP1, SETUP1_NET, [0.5, 0.6])
        mu = 0.2
        beta = prior_update(mu, SETUP1)
        bits = [1, 0]
        p1 = q.q1[0] * (1 - q.q1[1])
        p0 = q.q0[0] * (1 - q.q0[1])
        want = beta * p1 / (beta * p1 + (1 - beta) * p0)
        assert quantizer_posterior(bits, mu, q, SETUP1) == pytest.approx(
            want, rel=1e-12
        )

    def test_posterior_martingale_over_patterns(self):
        q = quantizer_spec(SETUP1, SETUP1_NET, kl_thresholds(SETUP1, SETUP1_NET))
        mu = 0.3
        beta = prior_update(mu, SETUP1)
        total = 0.0
        for b0 in (0, 1):
            for b1 in (0, 1):
                p1 = (q.q1[0] if b0 else 1 - q.q1[0]) * (
                    q.q1[1] if b1 else 1 - q.q1[1]
                )
                p0 = (q.q0[0] if b0 else 1 - q.q0[0]) * (
                    q.q0[1] if b1 else 1 - q.q0[1]
                )
                h = beta * p1 + (1 - beta) * p0
                total += h * quantizer_posterior([b0, b1], mu, q, SETUP1)
        assert total == pytest.approx(beta, rel=1e-12)

    def test_value_function_dominated_by_analog_optimum(self, vf):
        q = quantizer_spec(SETUP1, SETUP1_NET, kl_thresholds(SETUP1, SETUP1_NET))
        qvf = solve_quantizer_value_function(SETUP1, q, 0.01, grid_points=400)
        assert qvf.threshold_found
        assert 0.0 < qvf.mu_star < 1.0
        # Coarser observations can never reduce the Bayes cost.
        assert np.all(qvf.values >= vf.values - 2e-3)

    def test_step_accounts_full_power_energy(self, vf):
        q = quantizer_spec(SETUP1, SETUP1_NET, kl_thresholds(SETUP1, SETUP1_NET))
        qvf = solve_quantizer_value_function(SETUP1, q, 0.01, grid_points=200)
        state = PolicyState(mu=0.1, energy_spent=np.zeros(2))
        _, state = quantizer_baseline_step(
            state, [1, 1], qvf, SETUP1, SETUP1_NET, q
        )
        np.testing.assert_allclose(state.energy_spent, SETUP1_NET.power)
        assert state.k == 1


class TestChannelEstimation:
    def test_rejects_bad_pilot_count(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            mmse_channel_estimate(SETUP1_NET, 0, [7.5, 7.5], rng)

    def test_unit_channel_variance(self):
        rng = np.random.default_rng(1)
        hs = np.stack(
            [
                mmse_channel_estimate(SETUP1_NET, 1, [7.5, 7.5], rng).h_true
                for _ in range(20000)
            ]
        )
        assert np.mean(np.abs(hs) ** 2) == pytest.approx(1.0, abs=0.02)

    def test_estimate_sharpens_with_pilot_count(self):
        errs = []
        for K in (1, 10, 1000):
            rng = np.random.default_rng(7)
            e = [
                mmse_channel_estimate(SETUP1_NET, K, [7.5, 7.5], rng)
                for _ in range(5000)
            ]
            errs.append(
                np.mean([np.abs(x.h_true - x.h_hat) ** 2 for x in e])
            )
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 0.01

    def test_fixed_stream_consumption(self):
        # Two estimates with different pilot counts advance the stream
        # identically, so downstream draws stay aligned.
        after = []
        for K in (1, 50):
            rng = np.random.default_rng(42)
            mmse_channel_estimate(SETUP1_NET, K, [7.5, 7.5], rng)
            after.append(rng.standard_normal())
        assert after[0] == after[1]

    def test_effective_real_gain_perfect_estimate(self):
        rng = np.random.default_rng(3)
        est = mmse_channel_estimate(SETUP1_NET, 1, [7.5, 7.5], rng)
        perfect = type(est)(
            h_true=est.h_true, h_hat=est.h_true, K=1, pilot_power=est.pilot_power
        )
        g = BeamformingPolicy.effective_real_gain(perfect)
        np.testing.assert_allclose(g, np.abs(est.h_true), rtol=1e-12)

    def test_effective_real_gain_bounded_by_magnitude(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            est = mmse_channel_estimate(SETUP1_NET, 1, [7.5, 7.5], rng)
            g = BeamformingPolicy.effective_real_gain(est)
            assert np.all(g <= np.abs(est.h_true) + 1e-12)


class TestCentralizedEquivalent:
    def test_harmonic_mean_variance(self):
        ref = centralized_equivalent(SETUP1_NET)
        assert ref.L == 1
        assert ref.sigma_obs_sq[0] == pytest.approx(0.5)
        assert ref.mac_sigma_sq == 0.0

    def test_unequal_sensors(self):
        net = NetworkModel(
            sigma_obs_sq=[1.0, 2.0], gain=[1.0, 1.0], mac_sigma_sq=1.0
        )
        ref = centralized_equivalent(net)
        assert ref.sigma_obs_sq[0] == pytest.approx(2.0 / 3.0)
