"""Monte Carlo engine: seeded trials, estimators, and lambda sweeps.

Every trial owns a counter-based random stream keyed by (seed,
trial_index), so adding trials never perturbs earlier ones and results
are independent of batching.  ``run_trial`` is the scalar reference;
``run_trials`` walks the identical streams in vectorized lockstep and
produces bit-identical outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ChangeModel, sample_change_time
from .dp import ValueIterationError

__all__ = [
    "TrialRecord",
    "CurvePoint",
    "RunawayTrialError",
    "trial_rng",
    "run_trial",
    "run_trials",
    "estimate",
    "sweep_lambda",
    "edd_at_pfa",
]

DEFAULT_MAX_HORIZON = 10**6
_BLOCK = 64  # stages of normals pre-drawn per trial in the batched runner


class RunawayTrialError(RuntimeError):
    """A trial exceeded the horizon guard; the threshold is mis-configured."""


@dataclass(frozen=True)
class TrialRecord:
    tau: int
    gamma: int
    delay: int
    false_alarm: bool
    energy: np.ndarray


@dataclass(frozen=True)
class CurvePoint:
    """One aggregated (P_FA, E_DD) operating point."""

    lam: float
    mu_star: float
    pfa: float
    pfa_stderr: float
    edd: float
    edd_stderr: float
    trials: int
    policy: str
    seed: int
    mean_tau: float = 0.0
    mean_energy: float = 0.0


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based per-trial stream; the documented splitting rule."""
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + int(trial_index)))


def run_trial(
    policy,
    seed: int,
    trial_index: int,
    max_horizon: int = DEFAULT_MAX_HORIZON,
    collect_trace: bool = False,
):
    """Simulate one full trial of a policy; deterministic in (seed, index).

    Stream layout: change-time draws first, then any per-trial channel
    draws, then L + 1 standard normals per stage.
    """
    rng = trial_rng(seed, trial_index)
    model: ChangeModel = policy.model
    gamma = sample_change_time(model, rng)
    ctx = policy.trial_setup(rng)
    state = policy.initial_state()
    action, state = policy.step(state, None, ctx)
    trace = [] if collect_trace else None
    while not action.stop:
        if state.k >= max_horizon:
            raise RunawayTrialError(
                f"trial {trial_index} exceeded {max_horizon} stages "
                f"(mu_star={policy.threshold})"
            )
        if trace is not None:
            ctrl = action.control
            trace.append(
                (
                    state.k,
                    float(ctrl.alpha[0]) ** 2 if ctrl is not None else float("nan"),
                    float(ctrl.c[0]) if ctrl is not None else float("nan"),
                    state.mu,
                )
            )
        theta = model.m1 if gamma <= state.k + 1 else model.m0
        obs = policy.observe(theta, state, ctx, rng)
        action, state = policy.step(state, obs, ctx)
    tau = state.k
    energy = state.energy_spent
    if energy is None:
        energy = np.zeros(policy.net.L)
    rec = TrialRecord(
        tau=tau,
        gamma=gamma,
        delay=max(0, tau - gamma),
        false_alarm=tau < gamma,
        energy=energy,
    )
    if collect_trace:
        return rec, trace
    return rec


def run_trials(
    policy,
    n_trials: int,
    seed: int,
    max_horizon: int = DEFAULT_MAX_HORIZON,
    batch_size: int = 20000,
    start_index: int = 0,
):
    """Vectorized lockstep simulation of many independent trials.

    Returns (tau [n], gamma [n], energy [n, L]); row i matches
    ``run_trial(policy, seed, start_index + i)`` exactly.
    """
    model: ChangeModel = policy.model
    L = policy.net.L
    thr = policy.threshold
    tau = np.empty(n_trials, dtype=np.int64)
    gamma = np.empty(n_trials, dtype=np.int64)
    energy = np.zeros((n_trials, L))
    width = L + 1
    for lo in range(0, n_trials, batch_size):
        hi = min(lo + batch_size, n_trials)
        nb = hi - lo
        gens = [trial_rng(seed, start_index + i) for i in range(lo, hi)]
        g = np.array([sample_change_time(model, gn) for gn in gens], dtype=np.int64)
        gamma[lo:hi] = g
        ctx = policy.batch_setup(gens)
        mu = np.full(nb, float(model.nu))
        tau_c = np.zeros(nb, dtype=np.int64)
        alive = np.where(mu < thr)[0]
        buf = np.empty((nb, _BLOCK, width))
        for i in range(nb):
            buf[i] = gens[i].standard_normal(_BLOCK * width).reshape(_BLOCK, width)
        k = 0
        while alive.size:
            k += 1
            if k > max_horizon:
                raise RunawayTrialError(
                    f"batch starting at trial {start_index + lo} exceeded "
                    f"{max_horizon} stages (mu_star={thr})"
                )
            bi = (k - 1) % _BLOCK
            if bi == 0 and k > 1:
                for i in alive:
                    buf[i] = gens[i].standard_normal(_BLOCK * width).reshape(
                        _BLOCK, width
                    )
            z = buf[alive, bi, :]
            theta = np.where(g[alive] <= k, model.m1, model.m0)
            mu_a, e = policy.batch_stage(
                mu[alive], k - 1, z[:, :L], z[:, L], theta, ctx, alive
            )
            energy[lo + alive] += e
            mu[alive] = mu_a
            stopped = mu_a >= thr
            tau_c[alive[stopped]] = k
            alive = alive[~stopped]
        tau[lo:hi] = tau_c
    return tau, gamma, energy


def estimate(
    policy,
    n_trials: int,
    seed: int,
    max_horizon: int = DEFAULT_MAX_HORIZON,
) -> CurvePoint:
    """Sample-mean (P_FA, E_DD) point with normal-approximation errors.

    E_DD is the unconditional mean of (tau - gamma)^+ over all trials.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    tau, gamma, energy = run_trials(policy, n_trials, seed, max_horizon)
    fa = tau < gamma
    delay = np.maximum(tau - gamma, 0)
    pfa = float(np.mean(fa))
    edd = float(np.mean(delay))
    pfa_se = math.sqrt(pfa * (1.0 - pfa) / n_trials)
    edd_se = float(np.std(delay, ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0
    return CurvePoint(
        lam=policy.vf.lam,
        mu_star=policy.vf.mu_star,
        pfa=pfa,
        pfa_stderr=pfa_se,
        edd=edd,
        edd_stderr=edd_se,
        trials=n_trials,
        policy=policy.name,
        seed=seed,
        mean_tau=float(np.mean(tau)),
        mean_energy=float(np.mean(energy.sum(axis=1))),
    )


def sweep_lambda(
    policy_factory,
    lambdas,
    n_trials: int,
    seed: int,
    max_horizon: int = DEFAULT_MAX_HORIZON,
):
    """Solve-and-estimate one point per lambda; output sorted by P_FA.

    ``policy_factory(lam)`` must return a ready policy (value function
    solved for that lambda).
    """
    if not lambdas:
        raise ValueError("need at least one lambda")
    points = []
    for lam in lambdas:
        try:
            policy = policy_factory(lam)
        except ValueIterationError as exc:
            raise ValueIterationError(
                f"value iteration failed at lambda={lam}: {exc}",
                residual=exc.residual,
                iterations=exc.iterations,
            ) from exc
        points.append(estimate(policy, n_trials, seed, max_horizon))
    return sorted(points, key=lambda pt: pt.pfa)


def edd_at_pfa(points, pfa_target: float):
    """Interpolate a sweep's delay at a target false-alarm rate.

    Piecewise linear in log(P_FA); returns (edd, edd_stderr).  Raises if
    the target lies outside the swept range.
    """
    pts = sorted(points, key=lambda pt: pt.pfa)
    pfas = np.array([pt.pfa for pt in pts])
    if np.any(pfas <= 0):
        raise ValueError("cannot log-interpolate through a zero P_FA point")
    x = np.log(pfas)
    xt = math.log(pfa_target)
    if not (x[0] <= xt <= x[-1]):
        raise ValueError(
            f"target P_FA {pfa_target} outside swept range "
            f"[{pfas[0]:.4g}, {pfas[-1]:.4g}]"
        )
    edd = float(np.interp(xt, x, [pt.edd for pt in pts]))
    se = float(np.interp(xt, x, [pt.edd_stderr for pt in pts]))
    return edd, se
