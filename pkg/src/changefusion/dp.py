"""Belief-grid value iteration for the optimal stopping problem.

The cost-to-go J on [0, 1] solves J = min{1 - mu, lambda mu + A_J(mu)}
where A_J is the expected next-stage cost under the variance-minimizing
control.  Because the inner minimization over (alpha, c) reduces to
minimizing the fused effective variance (a fact independent of J), the
quadrature structure per grid point is fixed and each sweep is a single
vectorized interpolation pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import control as ctl
from .model import ChangeModel, NetworkModel, posterior_update_array, prior_update

__all__ = [
    "ValueFunction",
    "EnergyWeights",
    "ControlTable",
    "ValueIterationError",
    "expected_cost_to_go",
    "solve_value_function",
    "stopping_threshold",
    "energy_bellman_solve",
]

DEFAULT_GRID_POINTS = 1000
DEFAULT_TOL = 1e-4
DEFAULT_QUAD_NODES = 33
DEFAULT_MAX_ITER = 100_000


class ValueIterationError(RuntimeError):
    """Raised when value iteration fails to reach the tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class ControlTable:
    """Per-grid-point minimizing controls (alpha rows, centering, variance)."""

    alpha: np.ndarray  # [M, L]
    c: np.ndarray  # [M]
    sigma_sq: np.ndarray  # [M]


@dataclass(frozen=True)
class EnergyWeights:
    """Lagrange weights of the energy-constrained Bayes cost."""

    lambda_energy: np.ndarray
    lambda_delay: float

    def __post_init__(self):
        le = np.asarray(self.lambda_energy, dtype=float).copy()
        le.setflags(write=False)
        object.__setattr__(self, "lambda_energy", le)
        if np.any(le < 0):
            raise ValueError("energy weights must be nonnegative")
        if self.lambda_delay <= 0:
            raise ValueError("delay weight must be positive")


@dataclass
class ValueFunction:
    """Converged cost-to-go on a uniform belief grid plus the threshold."""

    grid: np.ndarray
    values: np.ndarray
    mu_star: float
    lam: float
    iterations: int = 0
    residual: float = 0.0
    threshold_found: bool = True
    per_mu_controls: ControlTable | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, mu):
        return np.interp(mu, self.grid, self.values)


def _gh_nodes(quad_nodes: int):
    x, w = np.polynomial.hermite.hermgauss(quad_nodes)
    return x, w / np.sqrt(np.pi)


def _quad_points(beta, sigma_sq, model: ChangeModel, quad_nodes: int):
    """Observation nodes and weights of the two-component mixture density.

    beta and sigma_sq broadcast over leading axes; returns (y, w) with a
    trailing axis of 2 * quad_nodes.
    """
    x, w = _gh_nodes(quad_nodes)
    beta = np.asarray(beta, dtype=float)[..., None]
    sig = np.sqrt(2.0 * np.asarray(sigma_sq, dtype=float))[..., None]
    y1 = model.m1 + sig * x
    y0 = model.m0 + sig * x
    y = np.concatenate([y1, y0], axis=-1)
    wts = np.concatenate(
        [np.broadcast_to(w, y1.shape) * beta, np.broadcast_to(w, y0.shape) * (1.0 - beta)],
        axis=-1,
    )
    return y, wts


def expected_cost_to_go(
    mu: float,
    sigma_sq: float,
    vf: ValueFunction,
    model: ChangeModel,
    quad_nodes: int = DEFAULT_QUAD_NODES,
) -> float:
    """E[J(posterior)] under the mixture law of the next fused observation.

    Gauss-Hermite quadrature applied separately to the two Gaussian
    components; J evaluated by linear interpolation on the grid.
    """
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    beta = prior_update(mu, model)
    y, w = _quad_points(beta, sigma_sq, model, quad_nodes)
    post = posterior_update_array(y, beta, sigma_sq, model)
    return float(np.sum(w * vf(post)))


def _power_quadrature(model, net, grid, quad_nodes):
    """Fixed per-grid quadrature structure for the power-constrained solve."""
    beta = prior_update(grid, model)
    alpha, c, s, sigma_sq = ctl.batch_optimal_controls(
        beta, model, net.sigma_obs_sq, net.power, net.gain, net.mac_sigma_sq
    )
    y, w = _quad_points(beta, sigma_sq, model, quad_nodes)
    post = posterior_update_array(y, beta[:, None], sigma_sq[:, None], model)
    return ControlTable(alpha=alpha, c=c, sigma_sq=sigma_sq), post, w


def _iterate(grid, stop_cost, continue_cost, tol, max_iter):
    """Generic sweep loop: J <- min(stop_cost, continue_cost(J))."""
    J = stop_cost.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        Jn = np.minimum(stop_cost, continue_cost(J))
        residual = float(np.max(np.abs(Jn - J)))
        J = Jn
        if residual < tol:
            return J, it, residual
    raise ValueIterationError(
        f"value iteration did not converge: residual {residual:.3e} "
        f"after {max_iter} sweeps",
        residual=residual,
        iterations=max_iter,
    )


def solve_value_function(
    model: ChangeModel,
    net: NetworkModel,
    lam: float,
    grid_points: int = DEFAULT_GRID_POINTS,
    tol: float = DEFAULT_TOL,
    quad_nodes: int = DEFAULT_QUAD_NODES,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ValueFunction:
    """Value-iterate the power-constrained Bellman operator to tolerance."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = np.linspace(0.0, 1.0, grid_points)
    table, post, w = _power_quadrature(model, net, grid, quad_nodes)
    stop_cost = 1.0 - grid
    run_cost = lam * grid

    def continue_cost(J):
        A = np.sum(w * np.interp(post, grid, J), axis=1)
        return run_cost + A

    J, it, residual = _iterate(grid, stop_cost, continue_cost, tol, max_iter)
    vf = ValueFunction(
        grid=grid,
        values=J,
        mu_star=1.0,
        lam=lam,
        iterations=it,
        residual=residual,
        per_mu_controls=table,
        meta={"quad_nodes": quad_nodes, "tol": tol, "mode": "power"},
    )
    vf.mu_star, vf.threshold_found = stopping_threshold(
        vf, lam, model, net, quad_nodes=quad_nodes, return_flag=True
    )
    return vf


def stopping_threshold(
    vf: ValueFunction,
    lam: float,
    model: ChangeModel,
    net: NetworkModel,
    quad_nodes: int = DEFAULT_QUAD_NODES,
    bisect_tol: float = 1e-10,
    return_flag: bool = False,
):
    """Unique root of lambda mu + A_J(mu) - (1 - mu) on the belief grid.

    Brackets on the grid, then bisects; when the gap is nonnegative
    everywhere stopping is immediately optimal and 0 is reported with
    the found-flag cleared.
    """

    def gap(mu):
        beta = prior_update(mu, model)
        caps = ctl.amplitude_caps(net, beta, model)
        alpha = ctl.optimal_alpha(caps, net)
        from .model import effective_variance

        sig = effective_variance(net, alpha)
        return lam * mu + expected_cost_to_go(mu, sig, vf, model, quad_nodes) - (1.0 - mu)

    grid = vf.grid
    d = lam * grid + _grid_continue_values(vf, model, net, quad_nodes) - (1.0 - grid)
    neg = np.where(d < 0)[0]
    if neg.size == 0:
        result = (0.0, False)
        return result if return_flag else 0.0
    lo_idx = neg[-1]
    if lo_idx == grid.size - 1:
        result = (1.0, True)
        return result if return_flag else 1.0
    lo, hi = grid[lo_idx], grid[lo_idx + 1]
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    mu_star = float(0.5 * (lo + hi))
    return (mu_star, True) if return_flag else mu_star


def _grid_continue_values(vf, model, net, quad_nodes):
    grid = vf.grid
    if vf.per_mu_controls is not None and vf.meta.get("mode") == "power":
        table = vf.per_mu_controls
        beta = prior_update(grid, model)
        y, w = _quad_points(beta, table.sigma_sq, model, quad_nodes)
        post = posterior_update_array(y, beta[:, None], table.sigma_sq[:, None], model)
        return np.sum(w * vf(post), axis=1)
    # Fallback: recompute controls per grid point.
    table, post, w = _power_quadrature(model, net, grid, quad_nodes)
    return np.sum(w * vf(post), axis=1)


def _energy_stage_cost(alpha_common, grid_beta, J, grid, model, net, weights, quad_nodes):
    """Expected continue-cost for a common amplitude per grid point.

    alpha_common and grid_beta have shape [M]; zero amplitude means no
    transmission, which leaves the belief at its one-step prior.
    """
    le_sum = float(np.sum(weights.lambda_energy))
    prior_var = model.mean_gap**2 * grid_beta * (1.0 - grid_beta)
    energy = alpha_common**2 * (
        np.sum(weights.lambda_energy * net.sigma_obs_sq[None, :], axis=1)
        + le_sum * prior_var
    )
    s = alpha_common * np.sum(net.gain)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_sq = np.where(
            s > 0,
            (
                alpha_common**2 * np.sum(net.sigma_obs_sq * net.gain**2)
                + net.mac_sigma_sq
            )
            / np.where(s > 0, s**2, 1.0),
            np.inf,
        )
    out = np.empty_like(alpha_common)
    live = (alpha_common > 0) & np.isfinite(sigma_sq)
    if np.any(live):
        y, w = _quad_points(grid_beta[live], sigma_sq[live], model, quad_nodes)
        post = posterior_update_array(
            y, grid_beta[live, None], sigma_sq[live, None], model
        )
        out[live] = energy[live] + np.sum(w * np.interp(post, grid, J), axis=1)
    if np.any(~live):
        out[~live] = np.interp(grid_beta[~live], grid, J)
    return out


def _energy_stage_cost_multi(alpha, grid_beta, J, grid, model, net, weights, quad_nodes):
    """Expected continue-cost for per-sensor amplitudes ``alpha`` [M, L]."""
    prior_var = model.mean_gap**2 * grid_beta * (1.0 - grid_beta)
    energy = np.sum(
        weights.lambda_energy[None, :]
        * alpha**2
        * (net.sigma_obs_sq[None, :] + prior_var[:, None]),
        axis=1,
    )
    s = np.sum(net.gain[None, :] * alpha, axis=1)
    num = (
        np.sum(net.sigma_obs_sq[None, :] * (net.gain[None, :] * alpha) ** 2, axis=1)
        + net.mac_sigma_sq
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_sq = np.where(s > 0, num / np.where(s > 0, s**2, 1.0), np.inf)
    out = np.empty(alpha.shape[0])
    live = (s > 0) & np.isfinite(sigma_sq)
    if np.any(live):
        y, w = _quad_points(grid_beta[live], sigma_sq[live], model, quad_nodes)
        post = posterior_update_array(
            y, grid_beta[live, None], sigma_sq[live, None], model
        )
        out[live] = energy[live] + np.sum(w * np.interp(post, grid, J), axis=1)
    if np.any(~live):
        out[~live] = np.interp(grid_beta[~live], grid, J)
    return out


def _coordinate_descent_min(f, start, alpha_hi, cycles=3, golden_iters=30):
    """Cyclic per-coordinate golden-section descent on rows of ``start``.

    ``f`` maps an [M, L] amplitude matrix to per-row costs.  Each cycle
    sweeps the coordinates once; the bracket for every coordinate is the
    full [0, alpha_hi] range since the per-coordinate cost is unimodal.
    """
    alpha = start.copy()
    M, L = alpha.shape
    lo = np.full(M, 0.0)
    hi = np.full(M, alpha_hi)
    for _ in range(cycles):
        for l in range(L):
            def fl(x, _l=l):
                trial = alpha.copy()
                trial[:, _l] = x
                return f(trial)

            x, _ = _golden_min(fl, lo, hi, iters=golden_iters)
            alpha[:, l] = x
    return alpha, f(alpha)


def _golden_min(f, lo, hi, iters=60):
    """Vectorized golden-section minimization on per-row brackets."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a = lo.copy()
    b = hi.copy()
    for _ in range(iters):
        c1 = b - invphi * (b - a)
        c2 = a + invphi * (b - a)
        take_left = f(c1) < f(c2)
        b = np.where(take_left, c2, b)
        a = np.where(take_left, a, c1)
    x = 0.5 * (a + b)
    return x, f(x)


def energy_bellman_solve(
    model: ChangeModel,
    net: NetworkModel,
    weights: EnergyWeights,
    grid_points: int = DEFAULT_GRID_POINTS,
    tol: float = DEFAULT_TOL,
    quad_nodes: int = DEFAULT_QUAD_NODES,
    max_iter: int = DEFAULT_MAX_ITER,
    golden_iters: int = 40,
    descent_cycles: int = 3,
) -> ValueFunction:
    """Value iteration trading quadratic transmit energy against cost-to-go.

    For identically-configured sensors the inner minimization is a
    golden-section search on the common amplitude; heterogeneous sensors
    fall back to cyclic coordinate descent with per-coordinate golden
    sections.  A zero-amplitude (skip-the-sample) candidate is always
    compared in as well.  The centering is the same MMSE estimate as in
    the power-constrained case.
    """
    if weights.lambda_energy.shape[0] != net.L:
        raise ValueError("need one energy weight per sensor")
    symmetric = (
        np.ptp(net.sigma_obs_sq) == 0
        and np.ptp(net.gain) == 0
        and np.ptp(weights.lambda_energy) == 0
    )
    grid = np.linspace(0.0, 1.0, grid_points)
    beta = prior_update(grid, model)
    budget = net.energy_budget if net.energy_budget is not None else net.power
    if budget is None:
        budget = np.ones(net.L)
    alpha_hi = 10.0 * float(np.max(np.sqrt(budget / np.maximum(net.sigma_obs_sq, 1e-300))))
    stop_cost = 1.0 - grid
    lam = weights.lambda_delay
    run_cost = lam * grid
    lo = np.full(grid_points, 1e-9)
    hi = np.full(grid_points, alpha_hi)
    best_alpha = np.full((grid_points, net.L), 0.25 * alpha_hi)

    def continue_cost(J):
        nonlocal best_alpha
        f0 = np.interp(beta, grid, J)  # no-transmission candidate
        if symmetric:
            def f(ac):
                return _energy_stage_cost(
                    ac, beta, J, grid, model, net, weights, quad_nodes
                )

            x, fx = _golden_min(f, lo, hi, iters=golden_iters)
            best_alpha = np.where(
                (f0 < fx)[:, None], 0.0, np.repeat(x[:, None], net.L, axis=1)
            )
        else:
            def f(mat):
                return _energy_stage_cost_multi(
                    mat, beta, J, grid, model, net, weights, quad_nodes
                )

            start = np.where(
                best_alpha.sum(axis=1)[:, None] > 0, best_alpha, 0.25 * alpha_hi
            )
            x, fx = _coordinate_descent_min(
                f, start, alpha_hi, cycles=descent_cycles,
                golden_iters=golden_iters,
            )
            best_alpha = np.where((f0 < fx)[:, None], 0.0, x)
        return run_cost + np.minimum(fx, f0)

    J, it, residual = _iterate(grid, stop_cost, continue_cost, tol, max_iter)
    # One final pass fixes the control table and gap to the converged J.
    cont = continue_cost(J)
    alpha_tab = best_alpha.copy()
    c_tab = model.m1 * beta + model.m0 * (1.0 - beta)
    s = np.sum(net.gain[None, :] * alpha_tab, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sig_tab = np.where(
            s > 0,
            (
                np.sum(
                    net.sigma_obs_sq[None, :] * (net.gain[None, :] * alpha_tab) ** 2,
                    axis=1,
                )
                + net.mac_sigma_sq
            )
            / np.where(s > 0, s**2, 1.0),
            np.inf,
        )
    vf = ValueFunction(
        grid=grid,
        values=J,
        mu_star=1.0,
        lam=lam,
        iterations=it,
        residual=residual,
        per_mu_controls=ControlTable(alpha=alpha_tab, c=c_tab, sigma_sq=sig_tab),
        meta={
            "quad_nodes": quad_nodes,
            "tol": tol,
            "mode": "energy",
            "alpha_hi": alpha_hi,
            "lambda_energy": [float(x) for x in weights.lambda_energy],
        },
    )
    dvals = cont - stop_cost
    neg = np.where(dvals < 0)[0]
    if neg.size == 0:
        vf.mu_star, vf.threshold_found = 0.0, False
    else:
        i = neg[-1]
        if i == grid.size - 1:
            vf.mu_star, vf.threshold_found = 1.0, True
        else:
            # Linear crossing between adjacent grid points.
            d0, d1 = dvals[i], dvals[i + 1]
            t = d0 / (d0 - d1) if d1 != d0 else 0.5
            vf.mu_star = float(grid[i] + t * (grid[i + 1] - grid[i]))
            vf.threshold_found = True
    return vf
