"""Experiment orchestration: JSON config in, CSV artifacts out.

Subcommands: solve (value function + threshold), run (one operating
point, optionally with a per-stage trace), sweep (delay-vs-false-alarm
curve over lambdas), compare (sweeps for several policies plus a
matched-P_FA ordering report).  Exit codes: 0 success, 2 config error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import dp, policies, sim
from .dp import EnergyWeights, ValueIterationError
from .model import ChangeModel, NetworkModel
from .sim import RunawayTrialError

__all__ = ["main", "ExperimentConfig", "ConfigError", "load_config", "build_policy"]

SWEEP_COLUMNS = [
    "lambda",
    "mu_star",
    "pfa",
    "pfa_stderr",
    "edd",
    "edd_stderr",
    "trials",
    "policy",
    "seed",
]

_DEFAULT_PFA_ABSCISSAE = [math.exp(-i) for i in range(1, 6)]

_SCHEMA = {
    "model": {"m0", "m1", "p", "nu"},
    "sensors": {"sigma_obs_sq", "gain", "power", "energy_budget"},
    "energy": {"lambda_energy", "lambda_delay"},
    "channel_estimation": {"K", "pilot_power", "block_length"},
    "quantizer": {"thresholds"},
    "top": {
        "model",
        "sensors",
        "mac_sigma_sq",
        "policy",
        "policies",
        "lambda",
        "lambdas",
        "energy",
        "grid_points",
        "vi_tol",
        "quad_nodes",
        "trials",
        "seed",
        "max_horizon",
        "channel_estimation",
        "quantizer",
        "pfa_abscissae",
    },
}

_POLICY_NAMES = (
    "optimal",
    "suboptimal",
    "energy",
    "quantizer",
    "centralized",
    "beamforming",
    "beamforming-perfect",
)


class ConfigError(ValueError):
    pass


def _check_keys(section: dict, allowed: set, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {where}")


class ExperimentConfig:
    """Validated experiment parameters with defaults made explicit."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        _check_keys(raw, _SCHEMA["top"], "config")
        try:
            model_raw = raw["model"]
            sensors_raw = raw["sensors"]
            mac = float(raw["mac_sigma_sq"])
        except KeyError as exc:
            raise ConfigError(f"missing required key {exc}") from exc
        _check_keys(model_raw, _SCHEMA["model"], "model")
        try:
            self.model = ChangeModel(
                m0=float(model_raw["m0"]),
                m1=float(model_raw["m1"]),
                p=float(model_raw["p"]),
                nu=float(model_raw["nu"]),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid model block: {exc}") from exc
        if not isinstance(sensors_raw, list) or not sensors_raw:
            raise ConfigError("sensors must be a nonempty list")
        for s in sensors_raw:
            _check_keys(s, _SCHEMA["sensors"], "sensors[]")
        has_power = all("power" in s for s in sensors_raw)
        has_energy = all("energy_budget" in s for s in sensors_raw)
        try:
            self.net = NetworkModel(
                sigma_obs_sq=[float(s["sigma_obs_sq"]) for s in sensors_raw],
                gain=[float(s.get("gain", 1.0)) for s in sensors_raw],
                mac_sigma_sq=mac,
                power=[float(s["power"]) for s in sensors_raw] if has_power else None,
                energy_budget=(
                    [float(s["energy_budget"]) for s in sensors_raw]
                    if has_energy
                    else None
                ),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid sensors block: {exc}") from exc
        self.policy = raw.get("policy", "optimal")
        if self.policy not in _POLICY_NAMES:
            raise ConfigError(f"unknown policy '{self.policy}'")
        self.policies = raw.get(
            "policies", ["optimal", "suboptimal", "quantizer", "centralized"]
        )
        for name in self.policies:
            if name not in _POLICY_NAMES:
                raise ConfigError(f"unknown policy '{name}' in policies")
        if "lambda" in raw and "lambdas" in raw:
            raise ConfigError("give either 'lambda' or 'lambdas', not both")
        if "lambdas" in raw:
            self.lambdas = [float(x) for x in raw["lambdas"]]
        elif "lambda" in raw:
            self.lambdas = [float(raw["lambda"])]
        else:
            self.lambdas = [0.01]
        if any(lam <= 0 for lam in self.lambdas):
            raise ConfigError("lambdas must be positive")
        self.grid_points = int(raw.get("grid_points", dp.DEFAULT_GRID_POINTS))
        self.vi_tol = float(raw.get("vi_tol", dp.DEFAULT_TOL))
        self.quad_nodes = int(raw.get("quad_nodes", dp.DEFAULT_QUAD_NODES))
        self.trials = int(raw.get("trials", 100000))
        self.seed = int(raw.get("seed", 0))
        self.max_horizon = int(raw.get("max_horizon", sim.DEFAULT_MAX_HORIZON))
        energy_raw = raw.get("energy")
        self.energy = None
        if energy_raw is not None:
            _check_keys(energy_raw, _SCHEMA["energy"], "energy")
            try:
                self.energy = {
                    "lambda_energy": [float(x) for x in energy_raw["lambda_energy"]],
                    "lambda_delay": float(energy_raw.get("lambda_delay", 0.01)),
                }
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"invalid energy block: {exc}") from exc
        ce = raw.get("channel_estimation")
        self.channel_estimation = None
        if ce is not None:
            _check_keys(ce, _SCHEMA["channel_estimation"], "channel_estimation")
            self.channel_estimation = {
                "K": int(ce.get("K", 1)),
                "pilot_power": (
                    [float(x) for x in ce["pilot_power"]]
                    if "pilot_power" in ce
                    else None
                ),
                "block_length": int(ce.get("block_length", 10**9)),
            }
        q = raw.get("quantizer")
        self.quantizer = None
        if q is not None:
            _check_keys(q, _SCHEMA["quantizer"], "quantizer")
            th = q.get("thresholds", "auto-kl")
            if th != "auto-kl":
                th = [float(x) for x in th]
            self.quantizer = {"thresholds": th}
        self.raw = raw

    def effective(self) -> dict:
        """Full parameterization with defaults resolved, for provenance."""
        return {
            "model": {
                "m0": self.model.m0,
                "m1": self.model.m1,
                "p": self.model.p,
                "nu": self.model.nu,
            },
            "sensors": [
                {
                    "sigma_obs_sq": float(self.net.sigma_obs_sq[i]),
                    "gain": float(self.net.gain[i]),
                    **(
                        {"power": float(self.net.power[i])}
                        if self.net.power is not None
                        else {}
                    ),
                    **(
                        {"energy_budget": float(self.net.energy_budget[i])}
                        if self.net.energy_budget is not None
                        else {}
                    ),
                }
                for i in range(self.net.L)
            ],
            "mac_sigma_sq": self.net.mac_sigma_sq,
            "policy": self.policy,
            "policies": self.policies,
            "lambdas": self.lambdas,
            "energy": self.energy,
            "grid_points": self.grid_points,
            "vi_tol": self.vi_tol,
            "quad_nodes": self.quad_nodes,
            "trials": self.trials,
            "seed": self.seed,
            "max_horizon": self.max_horizon,
            "channel_estimation": self.channel_estimation,
            "quantizer": self.quantizer,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig(raw)


def _solve_vf(cfg: ExperimentConfig, lam: float, net=None):
    return dp.solve_value_function(
        cfg.model,
        net if net is not None else cfg.net,
        lam,
        grid_points=cfg.grid_points,
        tol=cfg.vi_tol,
        quad_nodes=cfg.quad_nodes,
    )


def build_policy(cfg: ExperimentConfig, name: str, lam: float):
    """Solve whatever value function the named policy needs and wrap it."""
    model, net = cfg.model, cfg.net
    if name == "optimal":
        return policies.OptimalPolicy(model, net, _solve_vf(cfg, lam))
    if name == "suboptimal":
        return policies.SuboptimalPolicy(model, net, _solve_vf(cfg, lam))
    if name == "centralized":
        cnet = policies.centralized_equivalent(net)
        return policies.OptimalPolicy(model, cnet, _solve_vf(cfg, lam, net=cnet))
    if name == "energy":
        le = (
            cfg.energy["lambda_energy"]
            if cfg.energy is not None
            else [1e-3] * net.L
        )
        weights = EnergyWeights(lambda_energy=le, lambda_delay=lam)
        vf = dp.energy_bellman_solve(
            model,
            net,
            weights,
            grid_points=cfg.grid_points,
            tol=cfg.vi_tol,
            quad_nodes=cfg.quad_nodes,
        )
        return policies.EnergyPolicy(model, net, vf)
    if name == "quantizer":
        th = (
            cfg.quantizer["thresholds"]
            if cfg.quantizer is not None
            else "auto-kl"
        )
        if th == "auto-kl":
            th = policies.kl_thresholds(model, net)
        quant = policies.quantizer_spec(model, net, th)
        vf = policies.solve_quantizer_value_function(
            model, quant, lam, grid_points=cfg.grid_points, tol=cfg.vi_tol
        )
        return policies.QuantizerPolicy(model, net, vf, quant)
    if name in ("beamforming", "beamforming-perfect"):
        half = NetworkModel(
            sigma_obs_sq=net.sigma_obs_sq,
            gain=net.gain,
            mac_sigma_sq=net.mac_sigma_sq / 2.0,
            power=net.power,
        )
        vf = _solve_vf(cfg, lam, net=half)
        ce = cfg.channel_estimation or {"K": 1, "pilot_power": None}
        return policies.BeamformingPolicy(
            model,
            net,
            vf,
            K=ce["K"],
            pilot_power=ce["pilot_power"],
            perfect=(name == "beamforming-perfect"),
        )
    raise ConfigError(f"unknown policy '{name}'")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def _write_csv(path: str, header, rows, cfg: ExperimentConfig):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config-hash: {cfg.config_hash()}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _point_row(pt: sim.CurvePoint):
    return [
        pt.lam,
        pt.mu_star,
        pt.pfa,
        pt.pfa_stderr,
        pt.edd,
        pt.edd_stderr,
        pt.trials,
        pt.policy,
        pt.seed,
    ]


def cmd_solve(cfg: ExperimentConfig, out_dir: str) -> int:
    lam = cfg.lambdas[0]
    if cfg.policy == "energy":
        policy = build_policy(cfg, "energy", lam)
    else:
        policy = build_policy(cfg, cfg.policy, lam)
    vf = policy.vf
    rows = list(zip(vf.grid.tolist(), vf.values.tolist()))
    path = os.path.join(out_dir, "value_function.csv")
    _write_csv(path, ["mu", "J"], rows, cfg)
    print(f"mu_star={vf.mu_star!r} iterations={vf.iterations} residual={vf.residual!r}")
    print(f"wrote {path}")
    return 0


def cmd_run(cfg: ExperimentConfig, out_dir: str, trace: bool = False) -> int:
    lam = cfg.lambdas[0]
    policy = build_policy(cfg, cfg.policy, lam)
    pt = sim.estimate(policy, cfg.trials, cfg.seed, max_horizon=cfg.max_horizon)
    path = os.path.join(out_dir, "results.csv")
    new = not os.path.exists(path)
    with open(path, "a", newline="\n") as fh:
        if new:
            fh.write(f"# config-hash: {cfg.config_hash()}\n")
            fh.write(",".join(SWEEP_COLUMNS) + "\n")
        fh.write(",".join(_fmt(v) for v in _point_row(pt)) + "\n")
    print(
        f"policy={pt.policy} lambda={pt.lam!r} pfa={pt.pfa!r} edd={pt.edd!r} "
        f"trials={pt.trials}"
    )
    if trace:
        rec, tr = sim.run_trial(
            policy, cfg.seed, 0, max_horizon=cfg.max_horizon, collect_trace=True
        )
        tpath = os.path.join(out_dir, "trace.csv")
        with open(tpath, "w", newline="\n") as fh:
            fh.write(f"# config-hash: {cfg.config_hash()}\n")
            fh.write(f"# gamma: {rec.gamma}\n")
            fh.write("stage,alpha_sq,c,mu,policy\n")
            for (k, a, c, mu) in tr:
                fh.write(
                    ",".join(_fmt(v) for v in [k, a, c, mu, policy.name]) + "\n"
                )
        print(f"wrote {tpath}")
    return 0


def _sweep_one(cfg: ExperimentConfig, name: str, out_dir: str):
    points = sim.sweep_lambda(
        lambda lam: build_policy(cfg, name, lam),
        cfg.lambdas,
        cfg.trials,
        cfg.seed,
        max_horizon=cfg.max_horizon,
    )
    path = os.path.join(out_dir, f"sweep_{name}.csv")
    _write_csv(path, SWEEP_COLUMNS, [_point_row(pt) for pt in points], cfg)
    print(f"wrote {path}")
    return points


def cmd_sweep(cfg: ExperimentConfig, out_dir: str) -> int:
    _sweep_one(cfg, cfg.policy, out_dir)
    return 0


def cmd_compare(cfg: ExperimentConfig, out_dir: str) -> int:
    abscissae = [
        float(x) for x in cfg.raw.get("pfa_abscissae", _DEFAULT_PFA_ABSCISSAE)
    ]
    curves = {name: _sweep_one(cfg, name, out_dir) for name in cfg.policies}
    rows = []
    for target in abscissae:
        for name, points in curves.items():
            try:
                edd, se = sim.edd_at_pfa(points, target)
            except ValueError:
                edd, se = float("nan"), float("nan")
            rows.append([target, name, edd, se])
    path = os.path.join(out_dir, "compare_report.csv")
    _write_csv(path, ["pfa_target", "policy", "edd", "edd_stderr"], rows, cfg)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="changefusion",
        description="Decentralized change detection over a Gaussian MAC: "
        "solver and Monte Carlo simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "run", "sweep", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--trials", type=int, default=None, help="override trial count")
        p.add_argument("--policy", default=None, help="override config policy")
        if name == "run":
            p.add_argument(
                "--trace", action="store_true", help="emit a per-stage trace CSV"
            )
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.trials is not None:
            cfg.trials = args.trials
        if args.policy is not None:
            if args.policy not in _POLICY_NAMES:
                raise ConfigError(f"unknown policy '{args.policy}'")
            cfg.policy = args.policy
        os.makedirs(args.out, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, args.out)
        if args.command == "run":
            return cmd_run(cfg, args.out, trace=args.trace)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out)
        return cmd_compare(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueIterationError, RunawayTrialError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
