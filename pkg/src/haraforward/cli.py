"""Scenario runner: config file in, per-node CSV and a check report out.

A scenario is a single JSON document naming the market (binomial
parameters or an explicit branch list), the utility (power exponent and
terminal coefficient, or the log terminal pair) and run controls
(tolerances, sample counts, seed, which checks to run).  ``run_scenario``
builds the tree, synthesizes the forward utility, derives the minimal
Hellinger density and its increments, runs the requested checks and writes

* ``result.csv``  - one row per node with prices, coefficients, optimal
  rate, wealth at unit capital, density ratio and Hellinger increment;
* ``report.json`` - every check verdict with its metrics, tolerances and
  the seed (no timestamps, so identical runs are byte-identical).

Exit codes: 0 all requested checks pass; 1 a check failed; 2 the config is
invalid; 3 a node solve failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hellinger import (
    DensityProcess,
    check_log_identity,
    check_reconstruction_power,
    hellinger_process,
    mhm_density_from_theta,
    reweighted_tree,
    verify_mhm_domination,
)
from .optimizer import SolverFailure, binomial_log_closed_form, binomial_power_closed_form
from .synthesis import ForwardUtilityResult, HaraSpec, binomial_a_D, synthesize_log, synthesize_power
from .tree import AdaptedProcess, MarketTree, build_binomial, build_explicit
from .verifier import RandomFieldUtility, verify_forward

ALL_CHECKS = ("verify", "mhm", "reconstruction", "log_identity", "closed_form_crosscheck")
DEFAULT_RUN = {
    "tol_foc": 1e-12,
    "tol_verify": 1e-11,
    "n_random_strategies": 200,
    "n_competitor_densities": 50,
    "seed": 0,
}
X0_LIST = (0.5, 1.0, 10.0)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    """Invalid scenario file; carries the offending field path."""

    def __init__(self, fieldpath: str, message: str):
        super().__init__(f"{fieldpath}: {message}")
        self.fieldpath = fieldpath


def _require(mapping, key, fieldpath, types=None):
    if key not in mapping:
        raise ConfigError(f"{fieldpath}.{key}", "missing required field")
    value = mapping[key]
    if types is not None and not isinstance(value, types):
        raise ConfigError(f"{fieldpath}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


@dataclass
class ScenarioConfig:
    market: dict
    utility: dict
    run: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError("$", "top level must be an object")
        market = _require(doc, "market", "$", dict)
        utility = _require(doc, "utility", "$", dict)
        run = dict(DEFAULT_RUN)
        run.update(doc.get("run", {}) or {})

        kind = _require(market, "kind", "market", str)
        if kind == "binomial":
            T = _require(market, "T", "market", int)
            if T < 1:
                raise ConfigError("market.T", f"must be >= 1, got {T}")
            for key in ("xi_u", "xi_d", "prob_up"):
                val = _require(market, key, "market")
                if isinstance(val, list) and len(val) != T:
                    raise ConfigError(f"market.{key}", f"expected {T} per-period values")
        elif kind == "explicit":
            _require(market, "s0", "market")
            levels = _require(market, "levels", "market", list)
            for j, level in enumerate(levels, start=1):
                if not isinstance(level, list) or not level:
                    raise ConfigError(f"market.levels[{j - 1}]", "must be a non-empty list")
                for k, node in enumerate(level):
                    for key in ("parent", "prob", "delta_S"):
                        _require(node, key, f"market.levels[{j - 1}][{k}]")
        else:
            raise ConfigError("market.kind", f"unknown kind {kind!r}")

        ukind = _require(utility, "kind", "utility", str)
        if ukind == "power":
            p = _require(utility, "p", "utility", (int, float))
            if not (p < 1.0 and p != 0.0):
                raise ConfigError("utility.p", f"must satisfy p < 1, p != 0, got {p}")
            _require(utility, "terminal_D", "utility")
        elif ukind == "log":
            _require(utility, "terminal_D_hat", "utility")
        else:
            raise ConfigError("utility.kind", f"unknown kind {ukind!r}")

        checks = run.get("checks")
        if checks is None:
            checks = ["verify", "mhm",
                      "reconstruction" if ukind == "power" else "log_identity"]
            if kind == "binomial":
                checks.append("closed_form_crosscheck")
            run["checks"] = checks
        for name in run["checks"]:
            if name not in ALL_CHECKS:
                raise ConfigError("run.checks", f"unknown check {name!r}")
        if "reconstruction" in run["checks"] and ukind != "power":
            raise ConfigError("run.checks", "reconstruction applies to power utilities only")
        if "log_identity" in run["checks"] and ukind != "log":
            raise ConfigError("run.checks", "log_identity applies to log utilities only")
        adv = run.get("adversarial")
        if adv is not None:
            for key in ("depth", "index", "bump"):
                _require(adv, key, "run.adversarial")
        return cls(market, utility, run)


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("$", f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return ScenarioConfig.from_dict(doc)


def build_market(market: dict) -> MarketTree:
    if market["kind"] == "binomial":
        return build_binomial(market["T"], market["s0"], market["xi_u"],
                              market["xi_d"], market["prob_up"])
    return build_explicit(market["s0"], market["levels"])


def tree_to_explicit_market(tree: MarketTree) -> dict:
    """Explicit-market section reproducing this tree node for node."""
    levels = []
    for j in range(1, tree.horizon + 1):
        levels.append([
            {"parent": int(tree.parent[j][i]),
             "prob": float(tree.prob[j][i]),
             "delta_S": [float(v) for v in tree.delta_S[j][i]]}
            for i in range(tree.n_nodes(j))
        ])
    return {"kind": "explicit", "s0": [float(v) for v in tree.S[0][0]], "levels": levels}


@dataclass
class ScenarioRun:
    """Everything a scenario produced, for emission and inspection."""

    config: ScenarioConfig
    tree: MarketTree
    result: ForwardUtilityResult
    z_tilde: DensityProcess
    hellinger: object
    field_checked: RandomFieldUtility
    reports: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    worst_margin: float = 0.0


def _bump_field(tree: MarketTree, result: ForwardUtilityResult, adv: dict) -> RandomFieldUtility:
    depth, index, bump = int(adv["depth"]), int(adv["index"]), float(adv["bump"])
    if not (0 <= depth <= tree.horizon and 0 <= index < tree.n_nodes(depth)):
        raise ConfigError("run.adversarial", f"node ({depth},{index}) is not in the tree")
    if result.kind == "power":
        vals = [v.copy() for v in result.D.values]
        vals[depth][index] *= 1.0 + bump
        return RandomFieldUtility.from_power(tree, AdaptedProcess(tree, vals), result.p)
    vals = [v.copy() for v in result.D_hat.values]
    vals[depth][index] *= 1.0 + bump
    return RandomFieldUtility.from_log(tree, AdaptedProcess(tree, vals), result.D_bar)


def _closed_form_crosscheck(tree: MarketTree, result: ForwardUtilityResult,
                            spec: HaraSpec) -> dict:
    coeff = result.D if result.kind == "power" else result.D_hat
    max_theta = 0.0
    for k in range(tree.horizon):
        j = k + 1
        bounds = tree.child_slice[k]
        for i in range(tree.n_nodes(k)):
            sl = slice(int(bounds[i]), int(bounds[i + 1]))
            if sl.stop - sl.start != 2 or tree.n_assets != 1:
                raise ValueError("closed_form_crosscheck requires a binomial-shaped market")
            dS = tree.delta_S[j][sl][:, 0]
            pb = tree.prob[j][sl]
            cc = coeff.values[j][sl]
            up, dn = (0, 1) if dS[0] > dS[1] else (1, 0)
            s_prev = tree.S[k][i, 0]
            xi_u = 1.0 + dS[up] / s_prev
            xi_d = 1.0 + dS[dn] / s_prev
            q_up = pb[up] * cc[up] / (pb[up] * cc[up] + pb[dn] * cc[dn])
            if result.kind == "power":
                th, _ = binomial_power_closed_form(xi_u, xi_d, s_prev, q_up, result.p)
            else:
                th = binomial_log_closed_form(xi_u, xi_d, s_prev, q_up)
            max_theta = max(max_theta, abs(th - float(result.theta_hat.values[k][i])))
    out = {"max_theta_diff": max_theta, "tol_theta": 1e-9}
    verdict = max_theta <= 1e-9
    if result.kind == "power":
        closed = binomial_a_D(tree, spec, result)
        diff = max(float(np.max(np.abs(closed.values[k] - result.a_D.values[k])))
                   for k in range(tree.horizon))
        out.update({"max_a_D_diff": diff, "tol_a_D": 1e-10})
        verdict = verdict and diff <= 1e-10
    out["verdict"] = verdict
    return out


def execute_scenario(config: ScenarioConfig) -> ScenarioRun:
    tree = build_market(config.market)
    run = config.run
    ukind = config.utility["kind"]
    if ukind == "power":
        spec = HaraSpec.power(config.utility["p"], config.utility["terminal_D"])
        result = synthesize_power(tree, spec, tol=run["tol_foc"])
        q = result.p / (result.p - 1.0)
    else:
        spec = HaraSpec.log(config.utility["terminal_D_hat"],
                            config.utility.get("terminal_D_bar", 0.0))
        result = synthesize_log(tree, spec, tol=run["tol_foc"])
        q = 0.0

    z_d = DensityProcess.from_values(result.Z_D)
    z_tilde = mhm_density_from_theta(tree, result.theta_hat, result.p, base=z_d)
    hell = hellinger_process(tree, z_tilde, q, base=z_d)

    adv = run.get("adversarial")
    checked = _bump_field(tree, result, adv) if adv else RandomFieldUtility.from_result(result)

    reports: dict = {}
    failures: list[float] = []
    for name in run["checks"]:
        if name == "verify":
            rep = verify_forward(tree, checked, result.theta_hat, x0_list=X0_LIST,
                                 n_random_strategies=run["n_random_strategies"],
                                 seed=run["seed"], tol_m=run["tol_verify"],
                                 tol_s=run["tol_verify"])
            reports[name] = {
                "verdict": rep.verdict,
                "martingale_max_error": rep.martingale_max_error,
                "supermartingale_worst_violation": rep.supermartingale_worst_violation,
                "strategies_tested": rep.strategies_tested,
                "x0_list": list(X0_LIST),
            }
            if not rep.verdict:
                failures.append(max(rep.martingale_max_error,
                                    rep.supermartingale_worst_violation))
        elif name == "mhm":
            base_tree = reweighted_tree(tree, z_d)
            rep = verify_mhm_domination(base_tree, z_tilde, q,
                                        competitors=run["n_competitor_densities"],
                                        seed=run["seed"])
            reports[name] = {
                "verdict": rep.verdict,
                "worst_margin": rep.worst_margin,
                "competitors": rep.competitors,
                "skipped_nodes": [list(n) for n in rep.skipped_nodes],
            }
            if not rep.verdict:
                failures.append(-rep.worst_margin)
        elif name == "reconstruction":
            rep = check_reconstruction_power(result)
            reports[name] = {
                "verdict": rep.verdict,
                "max_reconstruction_error": rep.max_reconstruction_error,
                "max_gamma_identity_error": rep.max_gamma_identity_error,
                "tol": rep.tol,
            }
            if not rep.verdict:
                failures.append(max(rep.max_reconstruction_error,
                                    rep.max_gamma_identity_error))
        elif name == "log_identity":
            rep = check_log_identity(result)
            reports[name] = {
                "verdict": rep.verdict,
                "max_ratio_error": rep.max_ratio_error,
                "max_increment_error": rep.max_increment_error,
                "max_martingale_error": rep.max_martingale_error,
            }
            if not rep.verdict:
                failures.append(max(rep.max_ratio_error, rep.max_increment_error,
                                    rep.max_martingale_error))
        elif name == "closed_form_crosscheck":
            rep = _closed_form_crosscheck(tree, result, spec)
            reports[name] = rep
            if not rep["verdict"]:
                failures.append(rep["max_theta_diff"])

    exit_code = EXIT_OK if not failures else EXIT_CHECK_FAILED
    return ScenarioRun(config, tree, result, z_tilde, hell, checked, reports,
                       exit_code, max(failures) if failures else 0.0)


# -- emission -----------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def emit_result_csv(run: ScenarioRun, out_path) -> None:
    tree, result = run.tree, run.result
    d = tree.n_assets
    price_cols = [f"S_{k}" for k in range(d)]
    coeff_cols = ["D"] if result.kind == "power" else ["D_hat", "D_bar"]
    theta_cols = [f"theta_hat_{k}" for k in range(d)]
    header = (["depth", "node_id"] + price_cols + coeff_cols + theta_cols
              + ["wealth_x1", "z_tilde_ratio", "hellinger_increment"])
    wealth = [np.ones(1)]
    for j in range(1, tree.horizon + 1):
        th = result.theta_hat.values[j - 1]
        th = th.reshape(-1, 1) if th.ndim == 1 and d == 1 else th
        fac = 1.0 + np.sum(th[tree.parent[j]] * tree.delta_S[j], axis=1)
        wealth.append(wealth[j - 1][tree.parent[j]] * fac)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j in range(tree.horizon + 1):
            for i in range(tree.n_nodes(j)):
                row = [str(j), str(i)]
                row += [_fmt(v) for v in tree.S[j][i]]
                if result.kind == "power":
                    row.append(_fmt(result.D.values[j][i]))
                else:
                    row.append(_fmt(result.D_hat.values[j][i]))
                    row.append(_fmt(result.D_bar.values[j][i]))
                if j < tree.horizon:
                    th = np.atleast_1d(result.theta_hat.values[j][i])
                    row += [_fmt(v) for v in th]
                else:
                    row += [""] * d
                row.append(_fmt(wealth[j][i]))
                row.append(_fmt(run.z_tilde.ratios[j - 1][i]) if j >= 1 else "")
                row.append(_fmt(run.hellinger.increments[j][i]) if j < tree.horizon else "")
                w.writerow(row)


def emit_plot_data(run: ScenarioRun, out_path) -> None:
    """Long-format table (time, quantity, path_id, value) along every
    root-to-leaf path; values reuse the CSV float formatting so joins
    against ``result.csv`` match byte for byte."""
    tree, result = run.tree, run.result
    d = tree.n_assets
    wealth = [np.ones(1)]
    for j in range(1, tree.horizon + 1):
        th = result.theta_hat.values[j - 1]
        th = th.reshape(-1, 1) if th.ndim == 1 and d == 1 else th
        fac = 1.0 + np.sum(th[tree.parent[j]] * tree.delta_S[j], axis=1)
        wealth.append(wealth[j - 1][tree.parent[j]] * fac)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "quantity", "path_id", "value"])
        n_leaf = tree.n_nodes(tree.horizon)
        for leaf in range(n_leaf):
            path = tree.path_to(tree.horizon, leaf)
            for t in range(1, tree.horizon + 1):
                node = path[t]
                step_node = path[t - 1]
                if result.kind == "power":
                    w.writerow([t, "D", leaf, _fmt(result.D.values[t][node])])
                else:
                    w.writerow([t, "D_hat", leaf, _fmt(result.D_hat.values[t][node])])
                    w.writerow([t, "D_bar", leaf, _fmt(result.D_bar.values[t][node])])
                w.writerow([t, "wealth", leaf, _fmt(wealth[t][node])])
                th = np.atleast_1d(result.theta_hat.values[t - 1][step_node])
                for k in range(d):
                    name = "theta_hat" if d == 1 else f"theta_hat_{k}"
                    w.writerow([t, name, leaf, _fmt(th[k])])
                w.writerow([t, "hellinger_cum", leaf,
                            _fmt(run.hellinger.cumulative.values[t - 1][step_node])])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def emit_report_json(run: ScenarioRun, out_path) -> None:
    doc = {
        "scenario": {
            "market_kind": run.config.market["kind"],
            "utility_kind": run.config.utility["kind"],
            "T": run.tree.horizon,
            "d": run.tree.n_assets,
        },
        "seed": run.config.run["seed"],
        "tolerances": {
            "tol_foc": run.config.run["tol_foc"],
            "tol_verify": run.config.run["tol_verify"],
        },
        "checks": run.reports,
        "worst_margin": run.worst_margin,
        "exit_code": run.exit_code,
    }
    with open(out_path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def run_scenario(config_path, out_dir=None, checks=None, seed=None,
                 tol_foc=None, tol_verify=None, quiet=False) -> int:
    """Run one scenario file end to end; returns the process exit code."""
    def say(msg):
        if not quiet:
            print(msg)

    try:
        config = load_config(config_path)
        if checks is not None:
            config.run["checks"] = list(checks)
            ScenarioConfig.from_dict({"market": config.market, "utility": config.utility,
                                      "run": config.run})
        if seed is not None:
            config.run["seed"] = int(seed)
        if tol_foc is not None:
            config.run["tol_foc"] = float(tol_foc)
        if tol_verify is not None:
            config.run["tol_verify"] = float(tol_verify)
        out = Path(out_dir) if out_dir is not None else Path(config_path).parent
        out.mkdir(parents=True, exist_ok=True)
        run = execute_scenario(config)
    except ConfigError as exc:
        say(f"config error: {exc}")
        return EXIT_BAD_CONFIG
    except SolverFailure as exc:
        say(f"solver failure at node {exc.node}: {exc}")
        return EXIT_SOLVER
    except ValueError as exc:
        say(f"config error: {exc}")
        return EXIT_BAD_CONFIG

    emit_result_csv(run, out / "result.csv")
    emit_report_json(run, out / "report.json")
    for name, rep in run.reports.items():
        verdict = rep["verdict"] if isinstance(rep, dict) else rep.verdict
        say(f"check {name}: {'pass' if verdict else 'FAIL'}")
    if run.exit_code != EXIT_OK:
        say(f"worst margin: {run.worst_margin:.3e}")
    return run.exit_code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="haraforward",
        description="Synthesize HARA forward utilities on event trees and verify them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config", help="path to the scenario JSON file")
    p_run.add_argument("--out-dir", default=None, help="directory for result.csv/report.json")
    p_run.add_argument("--checks", default=None,
                       help=f"comma-separated subset of {','.join(ALL_CHECKS)}")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--tol-foc", type=float, default=None)
    p_run.add_argument("--tol-verify", type=float, default=None)
    p_run.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    checks = args.checks.split(",") if args.checks else None
    code = run_scenario(args.config, out_dir=args.out_dir, checks=checks, seed=args.seed,
                        tol_foc=args.tol_foc, tol_verify=args.tol_verify, quiet=args.quiet)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
