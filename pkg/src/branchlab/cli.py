"""Command-line entry point: ``branchlab <command> CONFIG [options]``.

Every command writes one JSON artifact (to ``--out``, ``output.json`` in the
config, or stdout) holding the tool version, the command, the fully resolved
config and the result. Some commands also write a CSV (``--csv`` or
``output.csv``). The worker thread count is deliberately left out of the
artifact: results do not depend on it.

Exit status: 0 success, 2 configuration error, 3 numerical failure,
4 a statistical test or bound check failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from branchlab import __version__
from branchlab import estimate as est
from branchlab.config import ConfigError, ExperimentConfig, load, workspace_root
from branchlab.kinetic import KineticSolverError, hopf_cole_oracle
from branchlab.lq import RiccatiError, lq_value
from branchlab.policy import ActionDomainError
from branchlab.scenario import InvalidScenario
from branchlab.simulate import ExplosionError, SimulationError, simulate_path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERDICT = 0, 2, 3, 4


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _rows_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _floats(cfg: ExperimentConfig, section: str, key: str) -> list[float]:
    v = cfg.resolved[section].get(key)
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{section}.{key}: expected a list of numbers")
    return [float(x) for x in v]


# --------------------------------------------------------------------------
# commands; each returns (result, csv text or None, verdict ok)


def cmd_simulate(cfg: ExperimentConfig, threads: int):
    pol = cfg.policy()
    try:
        rec = simulate_path(cfg.scenario, pol, cfg.t0, cfg.initial, cfg.sim, cfg.seed)
    except ExplosionError as e:
        raise SimulationError(f"{e}; partial record has {len(e.partial.events)} events") from e
    return {"policy": pol.name, "path": rec.to_json()}, rec.states_csv(), True


def cmd_estimate_cost(cfg: ExperimentConfig, threads: int):
    pol = cfg.policy()
    res = est.estimate_cost(cfg.scenario, pol, cfg.t0, cfg.initial, cfg.sim, cfg.replications, cfg.seed, threads)
    text = _rows_csv(["policy", "mean", "standard_error", "replications", "seed"],
                     [[pol.name, res.mean, res.standard_error, res.replications, res.seed]])
    return {"policy": pol.name, "estimate": res.to_json()}, text, True


def cmd_moments(cfg: ExperimentConfig, threads: int):
    pol = cfg.policy()
    rep = est.check_moment_bounds(cfg.scenario, pol, cfg.t0, cfg.initial, cfg.sim, cfg.replications, cfg.seed, threads)
    rows = [[c.name, c.estimate, c.standard_error, c.bound, "pass" if c.ok else "fail"] for c in rep.checks]
    text = _rows_csv(["quantity", "estimate", "SE", "bound", "verdict"], rows)
    return {"policy": pol.name, "moments": rep.to_json()}, text, rep.ok


def cmd_martingale_test(cfg: ExperimentConfig, threads: int):
    m = cfg.resolved["martingale"]
    pol = cfg.policy()
    pairs = []
    for i, pr in enumerate(m["pairs"]):
        if not (isinstance(pr, list) and len(pr) == 2 and all(isinstance(s, str) for s in pr)):
            raise ConfigError(f"martingale.pairs[{i}]: expected [F, phi] names")
        try:
            pairs.append((est.outer_function(pr[0]), est.test_function(pr[1])))
        except ValueError as e:
            raise ConfigError(f"martingale.pairs[{i}]: {e}") from e
    reports = est.martingale_tests(
        cfg.scenario, pol, cfg.t0, cfg.initial, cfg.sim, cfg.replications, pairs,
        _floats(cfg, "martingale", "checkpoints"), seed=cfg.seed,
        threshold=float(m["threshold"]), quadratic_variation=bool(m["quadratic_variation"]), threads=threads,
    )
    text = "".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(reports))
    ok = all(r.passed for r in reports)
    return {"policy": pol.name, "tests": [r.to_json() for r in reports], "passed": ok}, text, ok


def cmd_verify(cfg: ExperimentConfig, threads: int):
    v = cfg.resolved["verify"]
    pol = cfg.policy()
    w = cfg.value_field(str(v["value_field"]))
    mode = v["mode"]
    if mode not in ("martingale", "submartingale"):
        raise ConfigError("verify.mode: expected 'martingale' or 'submartingale'")
    rep = est.submartingale_test(
        cfg.scenario, pol, cfg.t0, cfg.initial, w, cfg.sim, cfg.replications,
        _floats(cfg, "verify", "checkpoints"), seed=cfg.seed, mode=mode,
        threshold=float(v["threshold"]), threads=threads,
    )
    return {"policy": pol.name, "value_at_start": w(cfg.t0, cfg.initial), "test": rep.to_json()}, rep.to_csv(), rep.passed


def cmd_compare(cfg: ExperimentConfig, threads: int):
    names = cfg.resolved["compare"]["policies"]
    if not (isinstance(names, list) and len(names) == 2):
        raise ConfigError("compare.policies: expected two policy names")
    a = cfg.policy(names[0], "compare.policies[0]")
    b = cfg.policy(names[1], "compare.policies[1]")
    res = est.compare(cfg.scenario, a, b, cfg.t0, cfg.initial, cfg.sim, cfg.replications, cfg.seed, threads)
    rows = [[n, r.mean, r.standard_error, r.replications, r.seed]
            for n, r in ((a.name, res.first), (b.name, res.second), ("difference", res.difference))]
    text = _rows_csv(["policy", "mean", "standard_error", "replications", "seed"], rows)
    return {"comparison": res.to_json()}, text, True


def cmd_lq_solve(cfg: ExperimentConfig, threads: int):
    sol = cfg.riccati()
    out = {
        "steps": len(sol.grid) - 1,
        "Q0": sol.Q[0],
        "p0": sol.p[0],
        "pbar0": sol.pbar[0],
        "Q_psd": sol.is_psd(),
        "value_at_start": lq_value(cfg.t0, cfg.initial, sol),
    }
    return out, sol.to_csv(), True


def cmd_kinetic_solve(cfg: ExperimentConfig, threads: int):
    sol = cfg.kinetic()
    probes = _floats(cfg, "kinetic_probes", "points")
    parts = cfg.scenario.details["kinetic"]
    t0 = cfg.t0
    rows = []
    # the Monte Carlo oracle applies only without drift and branching potential
    xs = sol.grid.x[:, None]
    ts = np.full(len(xs), t0)
    linear = np.all(parts.drift(ts, xs) == 0) and np.all(parts.potential(ts, xs) == 0)
    samples = int(cfg.resolved["kinetic_probes"]["samples"])
    for j, x in enumerate(probes):
        row = {"x": x, "h": float(sol.value(t0, x)), "Dh": float(sol.gradient(t0, x))}
        if linear:
            val, se = hopf_cole_oracle(parts.terminal, cfg.sim.horizon - t0, [x], samples, cfg.seed + j)
            row.update(oracle=val, oracle_se=se)
        rows.append(row)
    stride = int(cfg.resolved["kinetic_grid"].get("csv_stride", 1))
    return {"grid": sol.grid.to_json(), "probes": rows, "oracle_applies": bool(linear)}, sol.to_csv(stride), True


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-cost": cmd_estimate_cost,
    "moments": cmd_moments,
    "martingale-test": cmd_martingale_test,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "lq-solve": cmd_lq_solve,
    "kinetic-solve": cmd_kinetic_solve,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="branchlab", description="Controlled branching diffusion lab")
    ap.add_argument("--version", action="version", version=f"branchlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="TOML experiment config")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
        p.add_argument("--workspace", help="workspace root for output paths (default: $BRANCHLAB_WORKSPACE, then cwd)")
        p.add_argument("--out", help="JSON artifact path, relative to the workspace root")
        p.add_argument("--csv", help="CSV artifact path, relative to the workspace root")
    return ap


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
        cfg = load(args.config, workspace_root(args.workspace))
        json_path = cfg.output_path("json", args.out)
        csv_path = cfg.output_path("csv", args.csv)
        result, text, ok = COMMANDS[args.command](cfg, args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ArithmeticError, InvalidScenario, ActionDomainError, RiccatiError, KineticSolverError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    artifact = {
        "tool": "branchlab",
        "version": __version__,
        "command": args.command,
        "seed": cfg.seed,
        "config": cfg.resolved,
        "scenario": cfg.scenario.describe(),
        "result": result,
        "verdict": "pass" if ok else "fail",
    }
    _write(json_path, dumps(artifact))
    if csv_path is not None and text is not None:
        _write(csv_path, text)
    return EXIT_OK if ok else EXIT_VERDICT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
