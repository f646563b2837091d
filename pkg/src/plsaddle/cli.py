"""Benchmark harness: run / sweep / compare experiments from JSON specs.

Specs are fail-closed JSON documents (unknown keys are rejected).  Every run
writes a ``trace.csv`` (fixed column order, LF endings, locale-independent
floats) and a ``summary.json`` embedding the fully resolved configuration, so
any run can be reproduced bit-for-bit by pointing ``run`` at its own summary
file.  Exit codes: 0 success, 2 configuration error, 3 solver divergence
(partial trace still flushed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import metrics, problems, solvers
from .core import ConfigError, DivergenceError, RunConfig, make_schedule
from .metrics import TRACE_COLUMNS, TraceRecord, gap_function, rate_fit, stationarity_measure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def derive_seed(master: int, solver_name: str, horizon: int) -> int:
    """Stable per-run seed for sweeps and comparisons (process-independent)."""
    digest = hashlib.sha256(f"{master}:{solver_name}:{horizon}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="")


def write_trace(path: Path, records: Sequence[TraceRecord]) -> None:
    rows = [
        (r.k, r.oracle_calls, r.stationarity, r.grad_x_norm, r.primal_value, r.wall_ns, r.best_so_far)
        for r in records
    ]
    write_csv(path, TRACE_COLUMNS, rows)


# ---------------------------------------------------------------------------
# spec validation / resolution
# ---------------------------------------------------------------------------


def _check_keys(block: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(block)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")


def _resolve_problem_block(block: dict) -> dict:
    if not isinstance(block, dict) or "kind" not in block:
        raise ConfigError('problem block must carry a "kind"')
    kind = block["kind"]
    if kind == "synthetic":
        _check_keys(
            block,
            {"kind", "dim_x", "dim_y", "mu", "rank_deficiency", "coupling_scale", "seed", "noise_x", "noise_y"},
            {"kind", "dim_x", "dim_y", "mu"},
            "problem(synthetic)",
        )
        return {
            "kind": "synthetic",
            "dim_x": int(block["dim_x"]),
            "dim_y": int(block["dim_y"]),
            "mu": float(block["mu"]),
            "rank_deficiency": int(block.get("rank_deficiency", 0)),
            "coupling_scale": float(block.get("coupling_scale", 1.0)),
            "seed": int(block.get("seed", 0)),
            "noise_x": float(block.get("noise_x", 0.0)),
            "noise_y": float(block.get("noise_y", 0.0)),
        }
    if kind == "dro":
        _check_keys(
            block,
            {"kind", "dataset", "synth", "delta", "rho", "radius", "mu"},
            {"kind"},
            "problem(dro)",
        )
        if ("dataset" in block) == ("synth" in block):
            raise ConfigError('problem(dro): provide exactly one of "dataset" or "synth"')
        if "rho" in block and "radius" in block:
            raise ConfigError('problem(dro): "rho" and "radius" are mutually exclusive')
        radius = float(block["radius"]) if "radius" in block else 2.0 * float(block.get("rho", 50.0))
        out = {
            "kind": "dro",
            "delta": float(block.get("delta", 0.01)),
            "radius": radius,
            "mu": float(block.get("mu", 0.1)),
        }
        if "dataset" in block:
            out["dataset"] = str(block["dataset"])
        else:
            synth = block["synth"]
            _check_keys(synth, {"n", "d", "seed", "margin_noise"}, {"n", "d"}, "problem(dro).synth")
            out["synth"] = {
                "n": int(synth["n"]),
                "d": int(synth["d"]),
                "seed": int(synth.get("seed", 0)),
                "margin_noise": float(synth.get("margin_noise", 0.3)),
            }
        return out
    if kind == "lqr":
        _check_keys(
            block,
            {
                "kind", "d", "k", "seed", "alpha_q", "beta_q", "alpha_r", "beta_r",
                "mu", "l_xx", "l_xy", "reg_coeff", "plant_rho", "policy_offset",
            },
            {"kind", "d", "k"},
            "problem(lqr)",
        )
        return {
            "kind": "lqr",
            "d": int(block["d"]),
            "k": int(block["k"]),
            "seed": int(block.get("seed", 0)),
            "alpha_q": float(block.get("alpha_q", 0.1)),
            "beta_q": float(block.get("beta_q", 100.0)),
            "alpha_r": float(block.get("alpha_r", 0.1)),
            "beta_r": float(block.get("beta_r", 100.0)),
            "mu": float(block.get("mu", 0.1)),
            "l_xx": float(block.get("l_xx", 2500.0)),
            "l_xy": float(block.get("l_xy", 1.0)),
            "reg_coeff": float(block.get("reg_coeff", 0.0)),
            "plant_rho": float(block.get("plant_rho", 0.8)),
            "policy_offset": float(block.get("policy_offset", 0.3)),
        }
    raise ConfigError(f"unknown problem kind {kind!r}")


def build_problem(block: dict):
    block = _resolve_problem_block(block)
    if block["kind"] == "synthetic":
        return problems.make_synthetic(
            dim_x=block["dim_x"],
            dim_y=block["dim_y"],
            mu=block["mu"],
            rank_deficiency=block["rank_deficiency"],
            coupling_scale=block["coupling_scale"],
            seed=block["seed"],
            noise=(block["noise_x"], block["noise_y"]),
        )
    if block["kind"] == "dro":
        if "dataset" in block:
            data, labels = problems.load_libsvm(block["dataset"])
        else:
            synth = block["synth"]
            data, labels = problems.make_dro_synthetic_data(
                synth["n"], synth["d"], synth["seed"], synth["margin_noise"]
            )
        return problems.make_dro(data, labels, delta=block["delta"], radius=block["radius"], mu=block["mu"])
    return problems.make_lqr(
        d=block["d"],
        k=block["k"],
        seed=block["seed"],
        alpha_q=block["alpha_q"],
        beta_q=block["beta_q"],
        alpha_r=block["alpha_r"],
        beta_r=block["beta_r"],
        mu=block["mu"],
        l_xx=block["l_xx"],
        l_xy=block["l_xy"],
        reg_coeff=block["reg_coeff"],
        plant_rho=block["plant_rho"],
        policy_offset=block["policy_offset"],
    )


def _resolve_schedule_block(block: Optional[dict]) -> dict:
    if block is None:
        return {}
    _check_keys(block, {"alpha", "gamma", "lambda", "sigma"}, set(), "solver.schedule")
    out = {}
    for key, value in block.items():
        if value is None:
            continue
        if key == "gamma" and value == "lambda":
            out[key] = "lambda"
        else:
            out[key] = float(value)
    return out


def resolve_spec(doc: dict) -> dict:
    """Validate a spec document and materialize every default."""
    _check_keys(doc, {"problem", "solver", "output", "metadata"}, {"problem", "solver"}, "spec")
    solver_block = doc["solver"]
    _check_keys(
        solver_block,
        {"name", "horizon", "seed", "batch_size", "sampling", "trace_every", "schedule", "sigma_preset"},
        {"name", "horizon"},
        "solver",
    )
    output_block = doc.get("output", {})
    _check_keys(output_block, {"dir", "gap", "gap_budget", "wall_clock"}, set(), "output")
    resolved = {
        "problem": _resolve_problem_block(doc["problem"]),
        "solver": {
            "name": str(solver_block["name"]),
            "horizon": int(solver_block["horizon"]),
            "seed": int(solver_block.get("seed", 0)),
            "batch_size": None if solver_block.get("batch_size") is None else int(solver_block["batch_size"]),
            "sampling": str(solver_block.get("sampling", "iid")),
            "trace_every": int(solver_block.get("trace_every", 1)),
            "schedule": _resolve_schedule_block(solver_block.get("schedule")),
            "sigma_preset": str(solver_block.get("sigma_preset", "theorem")),
        },
        "output": {
            "dir": str(output_block.get("dir", "runs")),
            "gap": bool(output_block.get("gap", False)),
            "gap_budget": int(output_block.get("gap_budget", 1000)),
            "wall_clock": bool(output_block.get("wall_clock", False)),
        },
        "metadata": doc.get("metadata", {}),
    }
    return resolved


def build_run_config(resolved: dict) -> RunConfig:
    s = resolved["solver"]
    return RunConfig(
        solver=s["name"],
        horizon=s["horizon"],
        seed=s["seed"],
        batch_size=s["batch_size"],
        sampling=s["sampling"],
        trace_every=s["trace_every"],
        schedule_overrides=s["schedule"] or None,
        sigma_preset=s["sigma_preset"],
        wall_clock=resolved["output"]["wall_clock"],
    )


# ---------------------------------------------------------------------------
# run execution
# ---------------------------------------------------------------------------


def _initial_record(problem, resolved: dict) -> TraceRecord:
    # zero-horizon runs still report the start point
    schedule = make_schedule(
        problem.constants, 1, resolved["solver"]["schedule"] or None, resolved["solver"]["sigma_preset"]
    )
    reading = stationarity_measure(problem, problem.x0, problem.y0, float(schedule.sigma(0)))
    primal = problem.oracle.value(problem.x0, problem.y0) - problem.h_prox.h_value(problem.y0)
    return TraceRecord(
        k=0,
        oracle_calls=0,
        stationarity=reading.value,
        grad_x_norm=float(np.sqrt(reading.grad_x_sq)),
        primal_value=primal,
        wall_ns=0,
        best_so_far=reading.value,
    )


def run_one(resolved: dict, out_dir: Path) -> Tuple[int, dict]:
    """Execute one resolved spec, writing trace.csv and summary.json into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(resolved["problem"])
    config = build_run_config(resolved)

    status = "ok"
    divergence_iteration = None
    try:
        result = solvers.run(problem, config)
    except DivergenceError as exc:
        result = exc.partial
        status = "diverged"
        divergence_iteration = exc.iteration

    records = list(result.records)
    if not records:
        records = [_initial_record(problem, resolved)]
    write_trace(out_dir / "trace.csv", records)

    gap_info = None
    if resolved["output"]["gap"] and status == "ok":
        est = gap_function(problem, result.state.x, result.state.y, resolved["output"]["gap_budget"])
        gap_info = {
            "gap": est.gap,
            "sup_value": est.sup_value,
            "inf_value": est.inf_value,
            "sup_residual": est.sup_residual,
            "inf_grad_norm": est.inf_grad_norm,
        }

    if config.horizon >= 1:
        schedule = make_schedule(
            problem.constants, config.horizon, config.schedule_overrides, config.sigma_preset
        )
        from .core import c_k as _c_k

        schedule_info = {
            "alpha_0": float(schedule.alpha(0)),
            "lambda_0": float(schedule.lam(0)),
            "gamma_0": float(schedule.gamma(0)),
            "sigma_0": float(schedule.sigma(0)),
            "min_c_k": min(_c_k(schedule, problem.constants, k) for k in range(config.horizon)),
        }
    else:
        schedule_info = {}

    best = result.best
    summary = {
        "config": resolved,
        "schedule": schedule_info,
        "result": {
            "status": status,
            "divergence_iteration": divergence_iteration,
            "horizon": config.horizon,
            "oracle_calls": result.oracle_calls,
            "final_stationarity": records[-1].stationarity,
            "best_stationarity": best.stationarity if best is not None else records[-1].stationarity,
            "k_star": best.k if best is not None else records[-1].k,
            "elapsed_ns": result.elapsed_ns,
            "gap": gap_info,
        },
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    return (EXIT_OK if status == "ok" else EXIT_DIVERGED), summary


def _load_spec(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    if isinstance(doc, dict) and "config" in doc and "result" in doc:
        doc = doc["config"]  # re-run straight from an emitted summary.json
    if not isinstance(doc, dict):
        raise ConfigError("spec document must be a JSON object")
    return doc


def _apply_flag_overrides(resolved: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        resolved["solver"]["seed"] = int(args.seed)
    if getattr(args, "out_dir", None) is not None:
        resolved["output"]["dir"] = str(args.out_dir)
    if getattr(args, "gap_budget", None) is not None:
        resolved["output"]["gap"] = True
        resolved["output"]["gap_budget"] = int(args.gap_budget)
    if getattr(args, "wall_clock", False):
        resolved["output"]["wall_clock"] = True
    return resolved


def cmd_run(args) -> int:
    resolved = _apply_flag_overrides(resolve_spec(_load_spec(args.spec)), args)
    code, summary = run_one(resolved, Path(resolved["output"]["dir"]))
    print(json.dumps(summary["result"], indent=2, sort_keys=True))
    return code


def cmd_sweep(args) -> int:
    resolved = _apply_flag_overrides(resolve_spec(_load_spec(args.spec)), args)
    horizons = [int(t) for t in str(args.horizons).split(",") if t]
    if len(horizons) < 2:
        raise ConfigError("sweep needs at least two horizons")
    base_dir = Path(resolved["output"]["dir"])
    master = resolved["solver"]["seed"]
    name = resolved["solver"]["name"]

    worst = EXIT_OK
    points: List[Tuple[int, float]] = []
    for horizon in horizons:
        sub = json.loads(json.dumps(resolved))
        sub["solver"]["horizon"] = horizon
        sub["solver"]["seed"] = derive_seed(master, name, horizon)
        sub["output"]["dir"] = str(base_dir / f"T{horizon}")
        code, summary = run_one(sub, Path(sub["output"]["dir"]))
        worst = max(worst, code)
        points.append((horizon, summary["result"]["best_stationarity"]))

    try:
        slope = rate_fit(points)
    except ValueError:
        slope, _ = np.polyfit(
            np.log([float(t) for t, _ in points]), np.log([float(v) for _, v in points]), 1
        )
        slope = float(slope)
    write_csv(
        base_dir / "rate.csv",
        ("T", "best_stationarity", "slope"),
        [(t, v, slope) for t, v in points],
    )
    print(f"fitted log-log slope: {slope}")
    return worst


def _dedupe_labels(names: Sequence[str]) -> List[str]:
    seen: dict = {}
    labels = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return labels


def cmd_compare(args) -> int:
    resolved = _apply_flag_overrides(resolve_spec(_load_spec(args.spec)), args)
    names = [s for s in str(args.solvers).split(",") if s]
    if len(names) < 2:
        raise ConfigError("compare needs at least two solvers")
    base_dir = Path(resolved["output"]["dir"])
    master = resolved["solver"]["seed"]
    horizon = resolved["solver"]["horizon"]
    labels = _dedupe_labels(names)

    worst = EXIT_OK
    traces: List[List[TraceRecord]] = []
    for name, label in zip(names, labels):
        sub = json.loads(json.dumps(resolved))
        sub["solver"]["name"] = name
        sub["solver"]["seed"] = derive_seed(master, name, horizon)
        sub["output"]["dir"] = str(base_dir / label)
        code, _ = run_one(sub, Path(sub["output"]["dir"]))
        worst = max(worst, code)
        rows = []
        with open(Path(sub["output"]["dir"]) / "trace.csv", encoding="ascii") as fh:
            next(fh)
            for line in fh:
                f = line.split(",")
                rows.append(
                    TraceRecord(int(f[0]), int(f[1]), float(f[2]), float(f[3]), float(f[4]), int(f[5]), float(f[6]))
                )
        traces.append(rows)

    budgets = [r.oracle_calls for r in traces[0]]
    header = ["oracle_calls"]
    for label in labels:
        header += [f"{label}_k", f"{label}_stationarity", f"{label}_best_so_far"]
    rows = []
    for budget in budgets:
        row: List = [budget]
        for trace in traces:
            nearest = min(trace, key=lambda r: (abs(r.oracle_calls - budget), r.k))
            row += [nearest.k, nearest.stationarity, nearest.best_so_far]
        rows.append(row)
    write_csv(base_dir / "compare.csv", header, rows)
    return worst


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="plsaddle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("spec", help="path to a JSON experiment spec (or an emitted summary.json)")
        p.add_argument("--seed", type=int, default=None, help="override the solver seed")
        p.add_argument("--out-dir", default=None, help="override the output directory")
        p.add_argument("--gap-budget", type=int, default=None, help="compute the gap estimate with this inner budget")
        p.add_argument("--wall-clock", action="store_true", help="record wall time (breaks byte reproducibility)")

    common(sub.add_parser("run", help="execute one experiment"))
    p_sweep = sub.add_parser("sweep", help="run the same experiment over several horizons")
    common(p_sweep)
    p_sweep.add_argument("--horizons", required=True, help="comma-separated horizons, e.g. 100,200,400")
    p_compare = sub.add_parser("compare", help="run several solvers on the same problem")
    common(p_compare)
    p_compare.add_argument("--solvers", required=True, help="comma-separated solver names, e.g. pdm,agda")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_compare(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
