"""Stochastic environment and fusion-center arithmetic.

A hidden two-state mean process jumps from m0 to m1 at a random change
time with geometric tail.  Sensors observe the mean in Gaussian noise,
amplify-and-forward affine transforms of their observations over a
Gaussian multiple-access channel, and the fusion center reduces the
superposed signal to a single equivalent observation and a posterior
probability of change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChangeModel",
    "NetworkModel",
    "AffineControl",
    "DegenerateControlError",
    "NEVER",
    "sample_change_time",
    "effective_variance",
    "fuse_received",
    "prior_update",
    "posterior_update",
]

# Sentinel change time for p == 0, nu == 0 (change never arrives).  Any
# finite horizon guard trips long before this.
NEVER = 2**62

# Log-likelihood-ratio clamp; exp(700) is near the float64 overflow edge.
_LLR_CLAMP = 700.0


class DegenerateControlError(ValueError):
    """Raised when the fusion denominator sum_l h_l * alpha_l is zero."""


@dataclass(frozen=True)
class ChangeModel:
    """Pre/post-change means, geometric hazard and prior change mass."""

    m0: float
    m1: float
    p: float
    nu: float

    def __post_init__(self):
        if not (math.isfinite(self.m0) and math.isfinite(self.m1)):
            raise ValueError("m0 and m1 must be finite")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"hazard p must lie in [0, 1], got {self.p}")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"prior nu must lie in [0, 1], got {self.nu}")

    @property
    def mean_gap(self) -> float:
        return self.m1 - self.m0


def _as_readonly(x, n=None) -> np.ndarray:
    a = np.asarray(x, dtype=float).copy()
    if a.ndim != 1:
        raise ValueError("per-sensor fields must be one-dimensional")
    if n is not None and a.shape[0] != n:
        raise ValueError("per-sensor fields must share one length")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkModel:
    """Sensor-array parameters and the MAC noise level.

    Exactly one of ``power`` (per-sample constraint) or ``energy_budget``
    (expected-total constraint) is normally set; both may be present when
    an energy run is matched against a power run.
    """

    sigma_obs_sq: np.ndarray
    gain: np.ndarray
    mac_sigma_sq: float
    power: np.ndarray | None = None
    energy_budget: np.ndarray | None = None

    def __post_init__(self):
        s = _as_readonly(self.sigma_obs_sq)
        n = s.shape[0]
        object.__setattr__(self, "sigma_obs_sq", s)
        object.__setattr__(self, "gain", _as_readonly(self.gain, n))
        if self.power is not None:
            object.__setattr__(self, "power", _as_readonly(self.power, n))
        if self.energy_budget is not None:
            object.__setattr__(
                self, "energy_budget", _as_readonly(self.energy_budget, n)
            )
        if n < 1:
            raise ValueError("need at least one sensor")
        if np.any(s < 0):
            raise ValueError("observation variances must be nonnegative")
        if np.any(self.gain < 0):
            raise ValueError("channel gains must be nonnegative")
        if not np.any(self.gain > 0):
            raise ValueError("at least one channel gain must be positive")
        if self.mac_sigma_sq < 0:
            raise ValueError("MAC noise variance must be nonnegative")
        if self.power is not None and np.any(self.power <= 0):
            raise ValueError("per-sensor powers must be positive")
        if self.energy_budget is not None and np.any(self.energy_budget <= 0):
            raise ValueError("per-sensor energy budgets must be positive")

    @property
    def L(self) -> int:
        return self.sigma_obs_sq.shape[0]


@dataclass(frozen=True)
class AffineControl:
    """Per-stage amplitudes and the common centering sent to the sensors."""

    alpha: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = _as_readonly(self.alpha)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "c", _as_readonly(self.c, a.shape[0]))
        if np.any(a < 0):
            raise ValueError("amplitudes must be nonnegative")


def sample_change_time(model: ChangeModel, rng: np.random.Generator) -> int:
    """Draw the change time: mass nu at 0, geometric(p) tail on k >= 1.

    Pr{Gamma = k} = (1 - nu) p (1 - p)^(k-1) for k >= 1, the unique
    convention under which Pr{Gamma <= k+1 | Gamma > k} = p matches the
    one-step prior update beta = mu + (1 - mu) p.

    Consumes one uniform, plus a second one when the change is not at 0;
    the inverse-CDF form keeps scalar and batched simulation aligned.
    """
    if rng.random() < model.nu:
        return 0
    if model.p <= 0.0:
        rng.random()  # keep stream consumption shape-independent of p
        return NEVER
    u = rng.random()
    if model.p >= 1.0:
        return 1
    # Inverse CDF of the geometric distribution on {1, 2, ...}.
    return 1 + int(math.log1p(-u) / math.log1p(-model.p))


def _coupling(net: NetworkModel, alpha) -> float:
    return float(np.dot(net.gain, np.asarray(alpha, dtype=float)))


def effective_variance(net: NetworkModel, alpha) -> float:
    """Variance of the equivalent single observation after fusion."""
    alpha = np.asarray(alpha, dtype=float)
    s = _coupling(net, alpha)
    if s <= 0.0:
        raise DegenerateControlError("sum_l h_l alpha_l must be positive")
    num = float(np.sum(net.sigma_obs_sq * (net.gain * alpha) ** 2)) + net.mac_sigma_sq
    return num / (s * s)


def fuse_received(y_tilde: float, control: AffineControl, net: NetworkModel) -> float:
    """Invert the affine superposition: returns theta plus equivalent noise."""
    if not math.isfinite(y_tilde):
        raise ValueError("received sample must be finite")
    s = _coupling(net, control.alpha)
    if s <= 0.0:
        raise DegenerateControlError("sum_l h_l alpha_l must be positive")
    shift = float(np.dot(net.gain * control.alpha, control.c))
    return (y_tilde + shift) / s


def prior_update(mu: float, model: ChangeModel) -> float:
    """One-step prior probability of change: beta = mu + (1 - mu) p."""
    return mu + (1.0 - mu) * model.p


def posterior_update(
    y_hat: float, mu: float, sigma_sq: float, model: ChangeModel
) -> float:
    """Bayes update of the change probability from one fused observation.

    Computed through the log-likelihood ratio so large |y_hat| cannot
    underflow the direct density ratio.
    """
    if sigma_sq <= 0.0:
        raise ValueError("sigma_sq must be positive")
    if not math.isfinite(y_hat):
        raise ValueError("fused observation must be finite")
    beta = prior_update(mu, model)
    # log f0(y) - log f1(y) for equal-variance Gaussians.
    llr = ((y_hat - model.m1) ** 2 - (y_hat - model.m0) ** 2) / (2.0 * sigma_sq)
    llr = min(max(llr, -_LLR_CLAMP), _LLR_CLAMP)
    post = beta / (beta + (1.0 - beta) * math.exp(llr))
    return min(max(post, 0.0), 1.0)


def posterior_update_array(y_hat, beta, sigma_sq, model: ChangeModel):
    """Vectorized posterior update from the one-step prior beta.

    Same arithmetic as :func:`posterior_update` with beta precomputed;
    used by the quadrature and batched-trial hot paths.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    llr = ((y_hat - model.m1) ** 2 - (y_hat - model.m0) ** 2) / (2.0 * sigma_sq)
    np.clip(llr, -_LLR_CLAMP, _LLR_CLAMP, out=llr)
    post = beta / (beta + (1.0 - beta) * np.exp(llr))
    return np.clip(post, 0.0, 1.0)
