"""Per-stage optimal power-constrained transmit controls.

The centering c is the MMSE estimate of the current mean; the per-sensor
amplitude caps come from the power constraint written at that centering.
The optimal amplitudes minimize the fused effective variance over the
box [0, alpha_max]; the minimization is non-convex but splits into a
separable convex inner problem (quadratic cost under a coupling-sum
constraint, solved in closed form interval by interval) and an outer
scalar problem solved by a finite sandwich search over the intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChangeModel, NetworkModel

__all__ = [
    "AmplitudeCaps",
    "InnerSolution",
    "optimal_c",
    "amplitude_caps",
    "breakpoints",
    "inner_solution",
    "optimal_alpha",
    "batch_optimal_controls",
]

_SLACK = 1e-12  # absolute slack on the sandwich inequalities


@dataclass(frozen=True)
class AmplitudeCaps:
    """Per-sensor amplitude caps and the scaled-noise sort order.

    ``order`` sorts sensors by sigma_obs^2 * h * alpha_max ascending,
    ties broken by ascending sensor index.
    """

    alpha_max: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_max, dtype=float).copy()
        a.setflags(write=False)
        object.__setattr__(self, "alpha_max", a)
        o = np.asarray(self.order, dtype=int).copy()
        o.setflags(write=False)
        object.__setattr__(self, "order", o)


@dataclass(frozen=True)
class InnerSolution:
    """Solution of the coupling-constrained quadratic subproblem."""

    alpha: np.ndarray
    value: float
    a: float


def optimal_c(beta: float, model: ChangeModel) -> float:
    """MMSE centering: the prior-predictive mean of the state."""
    return model.m1 * beta + model.m0 * (1.0 - beta)


def amplitude_caps(net: NetworkModel, beta: float, model: ChangeModel) -> AmplitudeCaps:
    """Amplitude caps implied by the power constraint at the MMSE centering."""
    if net.power is None:
        raise ValueError("network has no per-sensor power constraint")
    prior_var = model.mean_gap**2 * beta * (1.0 - beta)
    alpha_max = np.sqrt(net.power / (net.sigma_obs_sq + prior_var))
    keys = _sort_keys(net, alpha_max)
    order = np.argsort(keys, kind="stable")
    return AmplitudeCaps(alpha_max=alpha_max, order=order)


def _sort_keys(net: NetworkModel, alpha_max: np.ndarray) -> np.ndarray:
    keys = net.sigma_obs_sq * net.gain * alpha_max
    # Zero-gain sensors contribute nothing; push them past every live one.
    return np.where(net.gain > 0, keys, np.inf)


def _sorted_parts(caps: AmplitudeCaps, net: NetworkModel):
    """Per-sensor quantities in sort order plus prefix/suffix sums."""
    o = caps.order
    amax = caps.alpha_max[o]
    h = net.gain[o]
    sig2 = net.sigma_obs_sq[o]
    alive = h > 0
    ha = np.where(alive, h * amax, 0.0)
    key = np.where(alive, sig2 * ha, np.inf)
    inv = np.where(alive & (sig2 > 0), 1.0 / np.where(sig2 > 0, sig2, 1.0), 0.0)
    S = np.cumsum(ha)  # S[k-1] = sum over first k sorted sensors of h*amax
    Q = np.cumsum((sig2 * ha) ** 2 / np.where(sig2 > 0, sig2, 1.0))
    # Q as written is sum of (sigma_obs * h * amax)^2: (sig2*ha)^2/sig2.
    T = np.cumsum(inv[::-1])[::-1]  # T[k] = sum_{l > k (0-based >= k)} 1/sig2
    return amax, h, sig2, ha, key, inv, S, Q, T


def breakpoints(caps: AmplitudeCaps, net: NetworkModel) -> np.ndarray:
    """Interval endpoints a_0 = 0 <= a_1 <= ... <= a_{L-1} <= a_max.

    For coupling values a in [a_k, a_{k+1}] exactly the first k sorted
    sensors sit at their caps in the inner problem.
    """
    _, _, _, ha, key, inv, S, Q, T = _sorted_parts(caps, net)
    L = ha.shape[0]
    a = np.zeros(L + 1)
    for k in range(1, L):
        tail = T[k] if k < L else 0.0
        a[k] = S[k - 1] + (key[k - 1] * tail if np.isfinite(key[k - 1]) else 0.0)
    a[L] = S[L - 1]
    return a


def inner_solution(a: float, caps: AmplitudeCaps, net: NetworkModel) -> InnerSolution:
    """Minimize sum sigma_obs^2 h^2 alpha^2 over the box at fixed coupling a."""
    amax, h, sig2, ha, key, inv, S, Q, T = _sorted_parts(caps, net)
    L = amax.shape[0]
    a_max = S[L - 1]
    if not (-1e-12 <= a <= a_max * (1 + 1e-12) + 1e-12):
        raise ValueError(f"coupling a={a} outside [0, {a_max}]")
    a = min(max(a, 0.0), a_max)
    bps = breakpoints(caps, net)
    # k = number of saturated sensors for this interval.
    k = int(np.searchsorted(bps[1:L], a, side="left"))
    alpha_sorted = np.zeros(L)
    if k > 0:
        alpha_sorted[:k] = amax[:k]
    Sk = S[k - 1] if k > 0 else 0.0
    Qk = Q[k - 1] if k > 0 else 0.0
    if k < L:
        Tk = T[k]
        if Tk > 0:
            common = (a - Sk) / Tk
            rest = np.where(h[k:] > 0, inv[k:] / np.where(h[k:] > 0, h[k:], 1.0), 0.0)
            alpha_sorted[k:] = rest * common
            value = Qk + (a - Sk) ** 2 / Tk
        else:
            value = Qk
    else:
        value = Qk
    alpha = np.empty(L)
    alpha[caps.order] = alpha_sorted
    return InnerSolution(alpha=alpha, value=float(value), a=float(a))


def optimal_alpha(
    caps: AmplitudeCaps, net: NetworkModel, validate: bool = False
) -> np.ndarray:
    """Global minimizer of the effective variance over the amplitude box.

    Scans the sandwich condition over the sorted prefix sizes; when no
    interior index satisfies it, every sensor saturates.
    """
    amax, h, sig2, ha, key, inv, S, Q, T = _sorted_parts(caps, net)
    L = amax.shape[0]
    mac = net.mac_sigma_sq
    chosen = None
    for k in range(1, L):
        if S[k - 1] <= 0:
            continue
        mid = (Q[k - 1] + mac) / S[k - 1]
        lo = key[k - 1] if np.isfinite(key[k - 1]) else np.inf
        hi = key[k]  # may be inf for dead sensors
        if lo <= mid + _SLACK and mid <= hi + _SLACK:
            if chosen is None:
                chosen = k
                if not validate:
                    break
            elif validate and k != chosen:
                raise AssertionError(
                    f"sandwich condition satisfied at both k={chosen} and k={k}"
                )
    alpha_sorted = amax.copy()
    if chosen is not None:
        k = chosen
        Sk = S[k - 1]
        Tk = T[k]
        a_star = Sk + (Tk / Sk) * (Q[k - 1] + mac)
        alpha_sorted[k:] = np.where(
            h[k:] > 0, inv[k:] / np.where(h[k:] > 0, h[k:], 1.0), 0.0
        ) * ((a_star - Sk) / Tk if Tk > 0 else 0.0)
        np.minimum(alpha_sorted, amax, out=alpha_sorted)
    alpha_sorted[h <= 0] = 0.0
    alpha = np.empty(L)
    alpha[caps.order] = alpha_sorted
    return alpha


def batch_optimal_controls(
    beta: np.ndarray,
    model: ChangeModel,
    sigma_obs_sq: np.ndarray,
    power: np.ndarray,
    gain: np.ndarray,
    mac_sigma_sq: float,
):
    """Vectorized per-row optimal controls.

    ``beta`` has shape [N]; ``gain`` is [L] or per-row [N, L] (per-trial
    fading magnitudes).  Returns (alpha [N, L], c [N], s [N], sigma_sq
    [N]) where s is the coupling sum and sigma_sq the fused effective
    variance.  Row i reproduces ``optimal_alpha`` at beta[i].
    """
    beta = np.asarray(beta, dtype=float)
    N = beta.shape[0]
    L = sigma_obs_sq.shape[0]
    gain = np.asarray(gain, dtype=float)
    if gain.ndim == 1:
        gain = np.broadcast_to(gain, (N, L))
    prior_var = model.mean_gap**2 * beta * (1.0 - beta)
    amax = np.sqrt(power / (sigma_obs_sq + prior_var[:, None]))
    alive = gain > 0
    ha = np.where(alive, gain * amax, 0.0)
    key = np.where(alive, sigma_obs_sq * ha, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    key_s = np.take_along_axis(key, order, axis=1)
    ha_s = np.take_along_axis(ha, order, axis=1)
    gain_s = np.take_along_axis(gain, order, axis=1)
    amax_s = np.take_along_axis(amax, order, axis=1)
    sig2_s = sigma_obs_sq[order]
    inv_s = np.where(
        (gain_s > 0) & (sig2_s > 0), 1.0 / np.where(sig2_s > 0, sig2_s, 1.0), 0.0
    )
    S = np.cumsum(ha_s, axis=1)
    # key * ha = sigma_obs^2 (h amax)^2, so Q[:, k-1] is the prefix sum
    # of (sigma_obs h amax)^2 over the first k sorted sensors.
    Q = np.cumsum(np.where(np.isfinite(key_s), key_s, 0.0) * ha_s, axis=1)
    T = np.cumsum(inv_s[:, ::-1], axis=1)[:, ::-1]
    alpha_s = amax_s.copy()
    if L > 1:
        Sk = S[:, :-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            mid = np.where(Sk > 0, (Q[:, :-1] + mac_sigma_sq) / Sk, np.inf)
        cond = (
            (key_s[:, :-1] <= mid + _SLACK)
            & (mid <= key_s[:, 1:] + _SLACK)
            & (Sk > 0)
        )
        has = cond.any(axis=1)
        kidx = np.argmax(cond, axis=1)  # 0-based; prefix size k = kidx + 1
        rows = np.where(has)[0]
        if rows.size:
            k = kidx[rows]
            Skr = S[rows, k]
            Qkr = Q[rows, k]
            # T at suffix starting after prefix of size k+1 -> column k+1.
            Tkr = np.where(k + 1 < L, T[rows, np.minimum(k + 1, L - 1)], 0.0)
            a_star = Skr + np.where(Skr > 0, Tkr / Skr, 0.0) * (Qkr + mac_sigma_sq)
            with np.errstate(divide="ignore", invalid="ignore"):
                common = np.where(Tkr > 0, (a_star - Skr) / Tkr, 0.0)
            coef = np.where(
                gain_s[rows] > 0,
                inv_s[rows] / np.where(gain_s[rows] > 0, gain_s[rows], 1.0),
                0.0,
            )
            cols = np.arange(L)[None, :]
            freemask = cols > k[:, None]
            vals = np.minimum(coef * common[:, None], amax_s[rows])
            alpha_s[rows] = np.where(freemask, vals, alpha_s[rows])
    alpha_s[gain_s <= 0] = 0.0
    alpha = np.empty((N, L))
    np.put_along_axis(alpha, order, alpha_s, axis=1)
    c = model.m1 * beta + model.m0 * (1.0 - beta)
    s = np.sum(gain * alpha, axis=1)
    sigma_sq = (
        np.sum(sigma_obs_sq * (gain * alpha) ** 2, axis=1) + mac_sigma_sq
    ) / (s * s)
    return alpha, c, s, sigma_sq
