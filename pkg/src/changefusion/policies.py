"""The executable fusion-center policies.

Five families: optimal power-constrained, reduced-feedback suboptimal,
energy-constrained, one-bit quantizer baseline on an error-free pipe,
and transmit beamforming with (possibly estimated) complex channels.
Each family exposes a pure per-stage step function plus a policy class
bundling the solved value function and the stage physics used by the
Monte Carlo engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import control as ctl
from .dp import ValueFunction, _iterate, _quad_points, DEFAULT_GRID_POINTS, DEFAULT_TOL, DEFAULT_MAX_ITER
from .model import (
    AffineControl,
    ChangeModel,
    NetworkModel,
    effective_variance,
    posterior_update,
    posterior_update_array,
    prior_update,
)

__all__ = [
    "PolicyState",
    "Action",
    "EstimatedChannel",
    "QuantizerSpec",
    "optimal_policy_step",
    "suboptimal_policy_step",
    "energy_policy_step",
    "quantizer_baseline_step",
    "mmse_channel_estimate",
    "kl_thresholds",
    "solve_quantizer_value_function",
    "required_quantizer_snr",
    "centralized_equivalent",
    "OptimalPolicy",
    "SuboptimalPolicy",
    "EnergyPolicy",
    "QuantizerPolicy",
    "BeamformingPolicy",
]


@dataclass(frozen=True)
class PolicyState:
    """Per-trial fusion-center state between stages."""

    mu: float
    k: int = 0
    stopped: bool = False
    last_control: AffineControl | None = None
    energy_spent: np.ndarray | None = None


@dataclass(frozen=True)
class Action:
    stop: bool
    control: AffineControl | None = None


@dataclass(frozen=True)
class EstimatedChannel:
    """True complex fading gains and their pilot-based MMSE estimates."""

    h_true: np.ndarray
    h_hat: np.ndarray
    K: int
    pilot_power: np.ndarray


def _stage_energy(alpha, beta, model: ChangeModel, net: NetworkModel):
    """Per-sensor expected transmit energy for one sample."""
    prior_var = model.mean_gap**2 * beta * (1.0 - beta)
    return alpha**2 * (net.sigma_obs_sq + prior_var)


def _absorb(state: PolicyState, y_hat, model, net) -> PolicyState:
    """Fold one fused observation into the belief."""
    if y_hat is None:
        return state
    ctrl = state.last_control
    if ctrl is None:
        raise ValueError("observation supplied before any continue action")
    s = float(np.dot(net.gain, ctrl.alpha))
    if s > 0:
        sig = effective_variance(net, ctrl.alpha)
        mu = posterior_update(y_hat, state.mu, sig, model)
    else:
        mu = prior_update(state.mu, model)  # silent stage: uninformative
    return replace(state, mu=mu, k=state.k + 1)


def _continue_with(state, alpha, beta, model, net):
    c = ctl.optimal_c(beta, model)
    ctrl = AffineControl(alpha=alpha, c=np.full(net.L, c))
    energy = state.energy_spent
    if energy is None:
        energy = np.zeros(net.L)
    energy = energy + _stage_energy(np.asarray(alpha), beta, model, net)
    new = replace(state, last_control=ctrl, energy_spent=energy)
    return Action(stop=False, control=ctrl), new


def optimal_policy_step(
    state: PolicyState, y_hat, vf: ValueFunction, model: ChangeModel, net: NetworkModel
):
    """Belief update, threshold test, and variance-minimizing control."""
    state = _absorb(state, y_hat, model, net)
    if state.mu >= vf.mu_star:
        return Action(stop=True), replace(state, stopped=True)
    beta = prior_update(state.mu, model)
    caps = ctl.amplitude_caps(net, beta, model)
    alpha = ctl.optimal_alpha(caps, net)
    return _continue_with(state, alpha, beta, model, net)


def suboptimal_policy_step(
    state: PolicyState, y_hat, vf: ValueFunction, model: ChangeModel, net: NetworkModel
):
    """Same stopping rule, but controls use only the prior change law.

    The control for sample k+1 is built from beta_k = 1 - (1 - nu)
    (1 - p)^(k+1), so only the binary stop/continue decision needs to be
    fed back each stage.
    """
    state = _absorb(state, y_hat, model, net)
    if state.mu >= vf.mu_star:
        return Action(stop=True), replace(state, stopped=True)
    beta = 1.0 - (1.0 - model.nu) * (1.0 - model.p) ** (state.k + 1)
    caps = ctl.amplitude_caps(net, beta, model)
    alpha = ctl.optimal_alpha(caps, net)
    return _continue_with(state, alpha, beta, model, net)


def energy_policy_step(
    state: PolicyState, y_hat, vf: ValueFunction, model: ChangeModel, net: NetworkModel
):
    """Looks the amplitude up in the per-belief table of the energy solve."""
    if vf.per_mu_controls is None:
        raise ValueError("energy policy needs a value function with a control table")
    state = _absorb(state, y_hat, model, net)
    if state.mu >= vf.mu_star:
        return Action(stop=True), replace(state, stopped=True)
    beta = prior_update(state.mu, model)
    tab = vf.per_mu_controls
    alpha = np.array(
        [np.interp(state.mu, vf.grid, tab.alpha[:, l]) for l in range(net.L)]
    )
    return _continue_with(state, alpha, beta, model, net)


@dataclass(frozen=True)
class QuantizerSpec:
    """One-bit quantizer per sensor with its induced Bernoulli laws."""

    thresholds: np.ndarray
    q0: np.ndarray  # Pr{bit = 1 | pre-change}
    q1: np.ndarray  # Pr{bit = 1 | post-change}


def _exceed_prob(t, mean, sigma):
    return 0.5 * math.erfc((t - mean) / (sigma * math.sqrt(2.0)))


def quantizer_spec(model: ChangeModel, net: NetworkModel, thresholds) -> QuantizerSpec:
    t = np.asarray(thresholds, dtype=float)
    sig = np.sqrt(net.sigma_obs_sq)
    q0 = np.array([_exceed_prob(tl, model.m0, s) for tl, s in zip(t, sig)])
    q1 = np.array([_exceed_prob(tl, model.m1, s) for tl, s in zip(t, sig)])
    return QuantizerSpec(thresholds=t, q0=q0, q1=q1)


def kl_thresholds(model: ChangeModel, net: NetworkModel, grid_size: int = 2001) -> np.ndarray:
    """Per-sensor threshold maximizing KL(Bern(q1) || Bern(q0))."""

    def kl(q1, q0):
        eps = 1e-300
        return q1 * math.log((q1 + eps) / (q0 + eps)) + (1 - q1) * math.log(
            (1 - q1 + eps) / (1 - q0 + eps)
        )

    lo = min(model.m0, model.m1)
    hi = max(model.m0, model.m1)
    out = np.empty(net.L)
    for l in range(net.L):
        s = math.sqrt(net.sigma_obs_sq[l])
        ts = np.linspace(lo - 4 * s, hi + 4 * s, grid_size)
        vals = [
            kl(_exceed_prob(t, model.m1, s), _exceed_prob(t, model.m0, s)) for t in ts
        ]
        out[l] = ts[int(np.argmax(vals))]
    return out


def required_quantizer_snr(D: int, L: int) -> float:
    """Sum-rate SNR needed to carry L error-free D-level quantizer outputs."""
    return (D ** (2 * L) - 1) / L


def _bit_tables(quant: QuantizerSpec):
    """Likelihoods of each of the 2^L bit patterns under both hypotheses."""
    L = quant.thresholds.shape[0]
    patterns = np.array(
        [[(b >> l) & 1 for l in range(L)] for b in range(2**L)], dtype=float
    )
    p0 = np.prod(np.where(patterns > 0, quant.q0, 1.0 - quant.q0), axis=1)
    p1 = np.prod(np.where(patterns > 0, quant.q1, 1.0 - quant.q1), axis=1)
    return patterns, p0, p1


def solve_quantizer_value_function(
    model: ChangeModel,
    quant: QuantizerSpec,
    lam: float,
    grid_points: int = DEFAULT_GRID_POINTS,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ValueFunction:
    """Value iteration over the discrete bit-pattern observation law."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    grid = np.linspace(0.0, 1.0, grid_points)
    beta = prior_update(grid, model)
    _, p0, p1 = _bit_tables(quant)
    h = beta[:, None] * p1 + (1.0 - beta[:, None]) * p0  # [M, B]
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(h > 0, beta[:, None] * p1 / np.where(h > 0, h, 1.0), beta[:, None])
    post = np.clip(post, 0.0, 1.0)
    stop_cost = 1.0 - grid
    run_cost = lam * grid

    def continue_cost(J):
        return run_cost + np.sum(h * np.interp(post, grid, J), axis=1)

    J, it, residual = _iterate(grid, stop_cost, continue_cost, tol, max_iter)
    cont = continue_cost(J)
    dvals = cont - stop_cost
    neg = np.where(dvals < 0)[0]
    if neg.size == 0:
        mu_star, found = 0.0, False
    elif neg[-1] == grid.size - 1:
        mu_star, found = 1.0, True
    else:
        i = neg[-1]
        d0, d1 = dvals[i], dvals[i + 1]
        t = d0 / (d0 - d1) if d1 != d0 else 0.5
        mu_star, found = float(grid[i] + t * (grid[i + 1] - grid[i])), True
    return ValueFunction(
        grid=grid,
        values=J,
        mu_star=mu_star,
        lam=lam,
        iterations=it,
        residual=residual,
        threshold_found=found,
        meta={"mode": "quantizer", "tol": tol},
    )


def quantizer_posterior(bits, mu, quant: QuantizerSpec, model: ChangeModel) -> float:
    beta = prior_update(mu, model)
    bits = np.asarray(bits, dtype=float)
    p1 = float(np.prod(np.where(bits > 0, quant.q1, 1.0 - quant.q1)))
    p0 = float(np.prod(np.where(bits > 0, quant.q0, 1.0 - quant.q0)))
    den = beta * p1 + (1.0 - beta) * p0
    if den <= 0:
        return beta
    return min(max(beta * p1 / den, 0.0), 1.0)


def quantizer_baseline_step(
    state: PolicyState,
    bits,
    vf: ValueFunction,
    model: ChangeModel,
    net: NetworkModel,
    quant: QuantizerSpec,
):
    """One-bit-per-sensor baseline; the bit pipe is error-free at sum rate."""
    if bits is not None:
        mu = quantizer_posterior(bits, state.mu, quant, model)
        energy = state.energy_spent
        if energy is None:
            energy = np.zeros(net.L)
        if net.power is not None:
            energy = energy + net.power
        state = replace(state, mu=mu, k=state.k + 1, energy_spent=energy)
    if state.mu >= vf.mu_star:
        return Action(stop=True), replace(state, stopped=True)
    return Action(stop=False, control=None), state


def mmse_channel_estimate(
    net: NetworkModel,
    K: int,
    pilot_power,
    rng: np.random.Generator,
) -> EstimatedChannel:
    """Draw a block-fading channel and its pilot-based MMSE estimate.

    Gains are unit-variance circular complex Gaussians; the estimate is
    h_hat = (h + r Z) / (1 + r^2) with r = sigma_MAC / sqrt(K P_pilot).
    Consumes 4 L standard normals in a fixed order.
    """
    if K < 1:
        raise ValueError("pilot sample count must be at least 1")
    L = net.L
    pilot_power = np.asarray(pilot_power, dtype=float)
    zh = rng.standard_normal(2 * L)
    h = (zh[:L] + 1j * zh[L:]) / math.sqrt(2.0)
    zz = rng.standard_normal(2 * L)
    z = (zz[:L] + 1j * zz[L:]) / math.sqrt(2.0)
    r = math.sqrt(net.mac_sigma_sq) / np.sqrt(K * pilot_power)
    h_hat = (h + r * z) / (1.0 + r**2)
    return EstimatedChannel(h_true=h, h_hat=h_hat, K=K, pilot_power=pilot_power)


def centralized_equivalent(net: NetworkModel) -> NetworkModel:
    """Noise-free-fusion reference: one sensor at the harmonic-mean variance."""
    sig = 1.0 / float(np.sum(1.0 / net.sigma_obs_sq))
    return NetworkModel(
        sigma_obs_sq=[sig], gain=[1.0], mac_sigma_sq=0.0, power=[1.0]
    )


# ---------------------------------------------------------------------------
# Policy classes used by the Monte Carlo engine.  Each bundles the solved
# value function with the stage physics: given the current beliefs and the
# stage's standard-normal draws, produce the next beliefs and the energy
# spent.  Scalar stepping via the module functions above must agree with
# the batched implementation; the simulator test suite asserts this.
# ---------------------------------------------------------------------------


class _PolicyBase:
    name = "base"
    uses_channel_draw = False

    def __init__(self, model: ChangeModel, net: NetworkModel, vf: ValueFunction):
        self.model = model
        self.net = net
        self.vf = vf

    @property
    def threshold(self) -> float:
        return self.vf.mu_star

    def initial_state(self) -> PolicyState:
        return PolicyState(mu=self.model.nu, energy_spent=np.zeros(self.net.L))

    def trial_setup(self, rng):
        return None

    def step(self, state, observation, ctx):
        raise NotImplementedError

    def observe(self, theta, state, ctx, rng):
        """Simulate one stage of sensing and channel use.

        Always consumes L + 1 standard normals (L observation, one MAC)
        so that every policy walks its random stream at the same pace as
        the batched runner.
        """
        z = rng.standard_normal(self.net.L + 1)
        return self._observe_z(theta, state, ctx, z)

    def _observe_z(self, theta, state, ctx, z):
        raise NotImplementedError

    def batch_setup(self, gens):
        """Per-trial context arrays for a batch (default: none)."""
        return None

    def batch_stage(self, mu, k, z_obs, z_mac, theta, ctx, idx):
        """Advance active trials one stage; returns (mu_next, energy [n, L])."""
        raise NotImplementedError


class _AnalogPolicy(_PolicyBase):
    """Common machinery for policies that amplify-and-forward real signals."""

    def _controls(self, mu, k, ctx, idx):
        """(alpha [n,L], c [n], s_assumed [n], sig_assumed [n], env_gain, env_mac)."""
        raise NotImplementedError

    def _env_gains(self, ctx):
        """(true channel gains, channel noise variance, gains assumed by fusion)."""
        g = self.net.gain
        return g, self.net.mac_sigma_sq, g

    def _observe_z(self, theta, state, ctx, z):
        net = self.net
        ctrl = state.last_control
        env_gain, env_mac, assumed_gain = self._env_gains(ctx)
        x = theta + np.sqrt(net.sigma_obs_sq) * z[: net.L]
        y_tilde = float(np.sum(env_gain * ctrl.alpha * (x - ctrl.c)))
        y_tilde += math.sqrt(env_mac) * z[net.L]
        s = float(np.dot(assumed_gain, ctrl.alpha))
        if s <= 0:
            return 0.0  # silent stage; the update ignores the value
        return (y_tilde + float(np.dot(assumed_gain * ctrl.alpha, ctrl.c))) / s

    def batch_stage(self, mu, k, z_obs, z_mac, theta, ctx, idx):
        model, net = self.model, self.net
        alpha, c, s, sig, env_gain, env_mac = self._controls(mu, k, ctx, idx)
        x = theta[:, None] + np.sqrt(net.sigma_obs_sq) * z_obs
        y_tilde = np.sum(env_gain * alpha * (x - c[:, None]), axis=1)
        y_tilde += math.sqrt(env_mac) * z_mac
        beta = prior_update(mu, model)
        silent = s <= 0
        y_hat = np.where(silent, 0.0, (y_tilde + s * c) / np.where(silent, 1.0, s))
        mu_next = posterior_update_array(y_hat, beta, np.where(silent, 1.0, sig), model)
        mu_next = np.where(silent, beta, mu_next)
        beta_ctrl = self._control_beta(mu, k)
        prior_var = model.mean_gap**2 * beta_ctrl * (1.0 - beta_ctrl)
        energy = alpha**2 * (net.sigma_obs_sq[None, :] + prior_var[:, None])
        return mu_next, energy

    def _control_beta(self, mu, k):
        return prior_update(mu, self.model)


class OptimalPolicy(_AnalogPolicy):
    name = "optimal"

    def step(self, state, observation, ctx):
        return optimal_policy_step(state, observation, self.vf, self.model, self.net)

    def _controls(self, mu, k, ctx, idx):
        net = self.net
        beta = prior_update(mu, self.model)
        alpha, c, s, sig = ctl.batch_optimal_controls(
            beta, self.model, net.sigma_obs_sq, net.power, net.gain, net.mac_sigma_sq
        )
        return alpha, c, s, sig, net.gain[None, :], net.mac_sigma_sq


class SuboptimalPolicy(_AnalogPolicy):
    name = "suboptimal"

    def step(self, state, observation, ctx):
        return suboptimal_policy_step(state, observation, self.vf, self.model, self.net)

    def _schedule_beta(self, k):
        m = self.model
        return 1.0 - (1.0 - m.nu) * (1.0 - m.p) ** (k + 1)

    def _control_beta(self, mu, k):
        return np.full_like(mu, self._schedule_beta(k))

    def _controls(self, mu, k, ctx, idx):
        net = self.net
        beta = np.array([self._schedule_beta(k)])
        alpha, c, s, sig = ctl.batch_optimal_controls(
            beta, self.model, net.sigma_obs_sq, net.power, net.gain, net.mac_sigma_sq
        )
        n = mu.shape[0]
        return (
            np.broadcast_to(alpha, (n, net.L)),
            np.full(n, c[0]),
            np.full(n, s[0]),
            np.full(n, sig[0]),
            net.gain[None, :],
            net.mac_sigma_sq,
        )


class EnergyPolicy(_AnalogPolicy):
    name = "energy"

    def step(self, state, observation, ctx):
        return energy_policy_step(state, observation, self.vf, self.model, self.net)

    def _controls(self, mu, k, ctx, idx):
        net, vf = self.net, self.vf
        tab = vf.per_mu_controls
        alpha = np.stack(
            [np.interp(mu, vf.grid, tab.alpha[:, l]) for l in range(net.L)], axis=1
        )
        beta = prior_update(mu, self.model)
        c = self.model.m1 * beta + self.model.m0 * (1.0 - beta)
        s = np.sum(net.gain * alpha, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            sig = np.where(
                s > 0,
                (
                    np.sum(net.sigma_obs_sq * (net.gain * alpha) ** 2, axis=1)
                    + net.mac_sigma_sq
                )
                / np.where(s > 0, s**2, 1.0),
                np.inf,
            )
        return alpha, c, s, sig, net.gain[None, :], net.mac_sigma_sq


class BeamformingPolicy(_AnalogPolicy):
    """Transmit beamforming over complex block-fading channels.

    Controls run the power-constrained algorithm with the estimated gain
    magnitudes and half the MAC variance (only the real dimension is
    kept); the channel applies the true complex gains, so estimation
    error shows up as both gain mismatch and phase misalignment.
    """

    name = "beamforming"
    uses_channel_draw = True

    def __init__(self, model, net, vf, K=1, pilot_power=None, perfect=False):
        super().__init__(model, net, vf)
        self.K = K
        self.pilot_power = (
            np.asarray(pilot_power, dtype=float) if pilot_power is not None else net.power
        )
        self.perfect = perfect
        if perfect:
            self.name = "beamforming-perfect"

    def trial_setup(self, rng):
        est = mmse_channel_estimate(self.net, self.K, self.pilot_power, rng)
        if self.perfect:
            est = EstimatedChannel(
                h_true=est.h_true, h_hat=est.h_true, K=est.K, pilot_power=est.pilot_power
            )
        return est

    def _assumed_net(self, h_hat_abs) -> NetworkModel:
        return NetworkModel(
            sigma_obs_sq=self.net.sigma_obs_sq,
            gain=h_hat_abs,
            mac_sigma_sq=self.net.mac_sigma_sq / 2.0,
            power=self.net.power,
        )

    @staticmethod
    def effective_real_gain(est: EstimatedChannel) -> np.ndarray:
        """Real gain after beamforming with the estimated phase."""
        mag = np.abs(est.h_hat)
        safe = np.where(mag > 0, mag, 1.0)
        return np.where(mag > 0, np.real(est.h_true * np.conj(est.h_hat)) / safe, 0.0)

    def step(self, state, observation, ctx):
        est = ctx
        assumed = self._assumed_net(np.abs(est.h_hat))
        state = _absorb(state, observation, self.model, assumed)
        if state.mu >= self.vf.mu_star:
            return Action(stop=True), replace(state, stopped=True)
        beta = prior_update(state.mu, self.model)
        caps = ctl.amplitude_caps(assumed, beta, self.model)
        gamma = ctl.optimal_alpha(caps, assumed)
        return _continue_with(state, gamma, beta, self.model, assumed)

    def _env_gains(self, ctx):
        est = ctx
        return (
            self.effective_real_gain(est),
            self.net.mac_sigma_sq / 2.0,
            np.abs(est.h_hat),
        )

    def batch_setup(self, gens):
        ests = [self.trial_setup(g) for g in gens]
        h_hat_abs = np.stack([np.abs(e.h_hat) for e in ests])
        g_eff = np.stack([self.effective_real_gain(e) for e in ests])
        return {"h_hat_abs": h_hat_abs, "g_eff": g_eff}

    def _controls(self, mu, k, ctx, idx):
        net = self.net
        beta = prior_update(mu, self.model)
        h_hat_abs = ctx["h_hat_abs"][idx]
        alpha, c, s, sig = ctl.batch_optimal_controls(
            beta,
            self.model,
            net.sigma_obs_sq,
            net.power,
            h_hat_abs,
            net.mac_sigma_sq / 2.0,
        )
        return alpha, c, s, sig, ctx["g_eff"][idx], net.mac_sigma_sq / 2.0


class QuantizerPolicy(_PolicyBase):
    name = "quantizer"

    def __init__(self, model, net, vf, quant: QuantizerSpec):
        super().__init__(model, net, vf)
        self.quant = quant

    def step(self, state, observation, ctx):
        return quantizer_baseline_step(
            state, observation, self.vf, self.model, self.net, self.quant
        )

    def _observe_z(self, theta, state, ctx, z):
        x = theta + np.sqrt(self.net.sigma_obs_sq) * z[: self.net.L]
        return x > self.quant.thresholds

    def batch_stage(self, mu, k, z_obs, z_mac, theta, ctx, idx):
        model, net, quant = self.model, self.net, self.quant
        x = theta[:, None] + np.sqrt(net.sigma_obs_sq) * z_obs
        bits = x > quant.thresholds
        beta = prior_update(mu, model)
        p1 = np.prod(np.where(bits, quant.q1, 1.0 - quant.q1), axis=1)
        p0 = np.prod(np.where(bits, quant.q0, 1.0 - quant.q0), axis=1)
        den = beta * p1 + (1.0 - beta) * p0
        mu_next = np.where(den > 0, beta * p1 / np.where(den > 0, den, 1.0), beta)
        mu_next = np.clip(mu_next, 0.0, 1.0)
        if net.power is not None:
            energy = np.broadcast_to(net.power, (mu.shape[0], net.L)).copy()
        else:
            energy = np.zeros((mu.shape[0], net.L))
        return mu_next, energy
