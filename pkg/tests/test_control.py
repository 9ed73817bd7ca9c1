import math
import time

import numpy as np
import pytest

from changefusion.control import (
    amplitude_caps,
    batch_optimal_controls,
    breakpoints,
    inner_solution,
    optimal_alpha,
    optimal_c,
)
from changefusion.model import ChangeModel, NetworkModel, effective_variance

SETUP1 = ChangeModel(m0=0.0, m1=0.75, p=0.05, nu=0.0)


def random_instance(rng, L=None):
    if L is None:
        L = int(rng.choice([2, 3, 5]))
    net = NetworkModel(
        sigma_obs_sq=rng.uniform(0.2, 3.0, L),
        gain=rng.uniform(0.1, 2.0, L),
        mac_sigma_sq=float(rng.uniform(0.05, 3.0)),
        power=rng.uniform(0.5, 12.0, L),
    )
    beta = float(rng.uniform(0.02, 0.98))
    return net, beta


def cvxpy_inner_oracle(a, caps, net):
    """Independent convex-QP solution of the fixed-coupling subproblem."""
    import cvxpy as cp

    L = caps.alpha_max.shape[0]
    x = cp.Variable(L)
    q = net.sigma_obs_sq * net.gain**2
    prob = cp.Problem(
        cp.Minimize(cp.sum(cp.multiply(q, cp.square(x)))),
        [net.gain @ x == a, x >= 0, x <= caps.alpha_max],
    )
    prob.solve(solver=cp.CLARABEL)
    assert prob.status == "optimal"
    return np.asarray(x.value), float(prob.value)


def grid_outer_oracle(caps, net, coarse=4001, refine=8):
    """1-D grid search over the coupling sum, golden-refined.

    Relies only on the verified inner subproblem; independent of the
    sandwich search in ``optimal_alpha``.
    """
    a_hi = float(np.sum(net.gain * caps.alpha_max))

    def f(a):
        if a <= 0:
            return math.inf
        sol = inner_solution(a, caps, net)
        return (sol.value + net.mac_sigma_sq) / (a * a)

    grid = np.linspace(a_hi * 1e-6, a_hi, coarse)
    vals = np.array([f(a) for a in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, coarse - 1)]
    phi = (math.sqrt(5) - 1) / 2
    for _ in range(60 * refine // refine):
        m1 = hi - phi * (hi - lo)
        m2 = lo + phi * (hi - lo)
        if f(m1) < f(m2):
            hi = m2
        else:
            lo = m1
    a_best = 0.5 * (lo + hi)
    return min(f(a_best), vals[i])


class TestOptimalC:
    def test_endpoints(self):
        assert optimal_c(0.0, SETUP1) == 0.0
        assert optimal_c(1.0, SETUP1) == 0.75

    def test_hand_value(self):
        assert optimal_c(0.24, SETUP1) == pytest.approx(0.18)


class TestAmplitudeCaps:
    def test_symmetric_hand_value(self):
        net = NetworkModel(
            sigma_obs_sq=[1.0, 1.0],
            gain=[1.0, 1.0],
            mac_sigma_sq=1.0,
            power=[7.5, 7.5],
        )
        caps = amplitude_caps(net, 0.24, SETUP1)
        want = math.sqrt(7.5 / (1.0 + 0.75**2 * 0.24 * 0.76))
        assert caps.alpha_max == pytest.approx([want, want])
        assert want == pytest.approx(2.60808438, abs=1e-8)

    def test_caps_shrink_with_belief_uncertainty(self):
        # The cap is smallest where beta(1-beta) peaks.
        net = NetworkModel(
            sigma_obs_sq=[1.0], gain=[1.0], mac_sigma_sq=1.0, power=[7.5]
        )
        a_mid = amplitude_caps(net, 0.5, SETUP1).alpha_max[0]
        a_edge = amplitude_caps(net, 0.05, SETUP1).alpha_max[0]
        assert a_mid < a_edge

    def test_order_sorts_scaled_noise_keys(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            keys = (net.sigma_obs_sq * net.gain * caps.alpha_max)[caps.order]
            assert np.all(np.diff(keys) >= -1e-12)

    def test_requires_power(self):
        net = NetworkModel(sigma_obs_sq=[1.0], gain=[1.0], mac_sigma_sq=1.0)
        with pytest.raises(ValueError):
            amplitude_caps(net, 0.2, SETUP1)


class TestBreakpoints:
    def test_sorted_and_bounded(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            bps = breakpoints(caps, net)
            assert bps[0] == 0.0
            assert np.all(np.diff(bps) >= -1e-10)
            assert bps[-1] == pytest.approx(
                float(np.sum(net.gain * caps.alpha_max))
            )


class TestInnerSolution:
    def test_matches_cvxpy_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            a_hi = float(np.sum(net.gain * caps.alpha_max))
            for frac in (0.15, 0.5, 0.9):
                a = frac * a_hi
                sol = inner_solution(a, caps, net)
                x_qp, v_qp = cvxpy_inner_oracle(a, caps, net)
                assert sol.value == pytest.approx(v_qp, rel=1e-6, abs=1e-8)
                assert np.allclose(sol.alpha, x_qp, atol=1e-5)

    def test_value_convex_in_coupling(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            a_hi = float(np.sum(net.gain * caps.alpha_max))
            grid = np.linspace(0, a_hi, 101)
            vals = np.array([inner_solution(a, caps, net).value for a in grid])
            d2 = np.diff(vals, 2)
            assert np.all(d2 >= -1e-8 * max(vals.max(), 1.0))

    def test_feasibility_of_returned_point(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            a_hi = float(np.sum(net.gain * caps.alpha_max))
            a = 0.6 * a_hi
            sol = inner_solution(a, caps, net)
            assert np.all(sol.alpha >= -1e-12)
            assert np.all(sol.alpha <= caps.alpha_max + 1e-10)
            assert float(net.gain @ sol.alpha) == pytest.approx(a, rel=1e-10)

    def test_rejects_out_of_range_coupling(self):
        net, beta = random_instance(np.random.default_rng(0), L=3)
        caps = amplitude_caps(net, beta, SETUP1)
        with pytest.raises(ValueError):
            inner_solution(-1.0, caps, net)


class TestOptimalAlpha:
    def test_symmetric_all_saturate(self):
        # Equal sensors saturate exactly at the common cap.
        for L in (2, 3, 5):
            net = NetworkModel(
                sigma_obs_sq=np.ones(L),
                gain=np.ones(L),
                mac_sigma_sq=1.0,
                power=np.full(L, 7.5),
            )
            caps = amplitude_caps(net, 0.24, SETUP1)
            alpha = optimal_alpha(caps, net, validate=True)
            np.testing.assert_array_equal(alpha, caps.alpha_max)

    def test_asymmetric_hand_instance(self):
        net = NetworkModel(
            sigma_obs_sq=[1.0, 1.0],
            gain=[1.0, 0.75],
            mac_sigma_sq=1.0,
            power=[7.5, 7.5],
        )
        caps = amplitude_caps(net, 0.24, SETUP1)
        alpha = optimal_alpha(caps, net, validate=True)
        assert alpha == pytest.approx([2.46729419, 2.60808438], abs=1e-7)
        assert effective_variance(net, alpha) == pytest.approx(
            0.5577876542, abs=1e-9
        )

    def test_matches_grid_oracle_hundred_instances(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(101)
        for _ in range(100):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            alpha = optimal_alpha(caps, net, validate=True)
            got = effective_variance(net, alpha)
            want = grid_outer_oracle(caps, net)
            assert got <= want * (1 + 1e-8) + 1e-12
            assert got == pytest.approx(want, rel=1e-6)
        assert time.monotonic() - t0 < 60.0

    def test_saturated_set_is_sorted_prefix(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            alpha = optimal_alpha(caps, net)
            sat = np.isclose(alpha, caps.alpha_max, rtol=1e-9)[caps.order]
            first_free = int(np.argmin(sat)) if not sat.all() else len(sat)
            assert sat[:first_free].all()
            assert not sat[first_free:].any() or sat.all()

    def test_least_noisy_sensor_always_saturates(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            alpha = optimal_alpha(caps, net)
            lead = caps.order[0]
            assert alpha[lead] == pytest.approx(caps.alpha_max[lead], rel=1e-12)

    def test_beats_any_feasible_scaling(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            net, beta = random_instance(rng)
            caps = amplitude_caps(net, beta, SETUP1)
            best = effective_variance(net, optimal_alpha(caps, net))
            for frac in rng.uniform(0.05, 1.0, 5):
                v = effective_variance(net, frac * caps.alpha_max)
                assert best <= v + 1e-10


class TestBatchOptimalControls:
    def test_rows_match_scalar_path(self):
        rng = np.random.default_rng(37)
        for L in (2, 3, 5):
            net, _ = random_instance(rng, L=L)
            betas = rng.uniform(0.02, 0.98, 64)
            alpha, c, s, sig = batch_optimal_controls(
                betas, SETUP1, net.sigma_obs_sq, net.power, net.gain,
                net.mac_sigma_sq,
            )
            for i, beta in enumerate(betas):
                caps = amplitude_caps(net, float(beta), SETUP1)
                want = optimal_alpha(caps, net)
                np.testing.assert_allclose(alpha[i], want, rtol=1e-12, atol=1e-12)
                assert c[i] == pytest.approx(optimal_c(float(beta), SETUP1))
                assert sig[i] == pytest.approx(
                    effective_variance(net, want), rel=1e-12
                )
                assert s[i] == pytest.approx(float(net.gain @ want), rel=1e-12)

    def test_per_row_gains(self):
        rng = np.random.default_rng(41)
        L = 3
        base, _ = random_instance(rng, L=L)
        betas = rng.uniform(0.05, 0.95, 32)
        gains = rng.uniform(0.05, 2.5, (32, L))
        alpha, c, s, sig = batch_optimal_controls(
            betas, SETUP1, base.sigma_obs_sq, base.power, gains,
            base.mac_sigma_sq,
        )
        for i in range(32):
            net = NetworkModel(
                sigma_obs_sq=base.sigma_obs_sq,
                gain=gains[i],
                mac_sigma_sq=base.mac_sigma_sq,
                power=base.power,
            )
            caps = amplitude_caps(net, float(betas[i]), SETUP1)
            want = optimal_alpha(caps, net)
            np.testing.assert_allclose(alpha[i], want, rtol=1e-12, atol=1e-12)
