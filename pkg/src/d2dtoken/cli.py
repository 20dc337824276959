"""Experiment runner: solve, sweep, simulate, network, learn, compare.

Every command loads a model config, runs its experiment, and writes
delimited tables (with reproducibility preambles) into the output directory.
Exit codes: 0 success, 2 config/validation failure, 3 solver failure,
4 structural-check failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, LoadedModel, load_model
from .learning import QLearningAgent, policy_agreement
from .model import IDLE, InvalidModelError, MdpModel, enumerate_states
from .network import NetworkConfig, run_fixed_point, run_network
from .output import write_table
from .sim import EVENT_NAMES, SimConfig, SimTrace, build_greedy_policy, run_single
from .solver import (
    ConvergenceError,
    NotThresholdError,
    Policy,
    SolverConfig,
    SolverError,
    TREND_DIRECTIONS,
    ValueFunction,
    apply_parameter,
    check_concavity,
    check_monotone_tokens,
    check_one_shot_deviation,
    evaluate_policy_exact,
    extract_thresholds,
    sweep,
    threshold_trends,
    value_iteration,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_STRUCTURE = 4

OUT_DIR_ENV = "D2DTOKEN_OUT"


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="d2dtoken",
        description="Token-game transmission-mode selection: solver and simulators.",
    )
    top.add_argument("--version", action="version", version=f"d2dtoken {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="model config file (YAML or JSON)")
        p.add_argument(
            "--out",
            default=os.environ.get(OUT_DIR_ENV, "out"),
            help=f"output directory (default: ${OUT_DIR_ENV} or ./out)",
        )
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument(
            "--log-base",
            choices=["natural", "base10"],
            default=None,
            help="override the MOS log base from the config",
        )

    p = sub.add_parser("solve", help="optimal policy, values, thresholds, structure checks")
    common(p)
    p.add_argument("--eps", type=float, default=1e-9, help="value-iteration tolerance")
    p.add_argument("--max-iter", type=int, default=100_000, help="iteration cap")

    p = sub.add_parser("sweep", help="thresholds across a parameter grid")
    common(p)
    p.add_argument("--param", required=True, help="beta | p | q | c | b<i>")
    p.add_argument("--grid", required=True, help="comma-separated parameter values")
    p.add_argument("--eps", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=100_000)

    p = sub.add_parser("simulate", help="single-UE Monte-Carlo run")
    common(p)
    p.add_argument("--policy", choices=["optimal", "greedy", "never"], default="optimal")
    p.add_argument("--slots", type=int, default=1_000_000)
    p.add_argument("--initial-tokens", type=int, default=None)
    p.add_argument("--full-trace", action="store_true", help="also write the per-slot trace")

    p = sub.add_parser("network", help="multi-UE token-economy run")
    common(p)
    p.add_argument("--ues", type=int, default=20)
    p.add_argument("--policy", choices=["optimal", "greedy"], default="optimal")
    p.add_argument("--slots", type=int, default=20_000)
    p.add_argument("--initial-tokens", type=int, default=None)
    p.add_argument(
        "--fixed-point-rounds",
        type=int,
        default=0,
        help="re-solve against measured rates this many times and report",
    )

    p = sub.add_parser("learn", help="train a Q-learning agent against the sampled kernel")
    common(p)
    p.add_argument("--slots", type=int, default=200_000, help="interaction budget")

    p = sub.add_parser("compare", help="optimal vs greedy across a discount grid")
    common(p)
    p.add_argument("--grid", default="0.3,0.5,0.7,0.9,0.99", help="discount grid")
    p.add_argument("--seeds", type=int, default=20, help="replications per grid point")
    p.add_argument("--slots", type=int, default=1_000_000, help="token-usage run length")
    p.add_argument(
        "--compare-slots", type=int, default=100_000, help="per-replication run length"
    )
    return top


def _parse_grid(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from exc


def _meta(args: argparse.Namespace, loaded: LoadedModel, **extra: Any) -> Dict[str, Any]:
    meta: Dict[str, Any] = {
        "command": args.command,
        "seed": args.seed,
        "config": loaded.resolved,
    }
    meta.update(extra)
    return meta


def _write_solution(
    out: Path, name: str, meta: Dict[str, Any], model: MdpModel, vf: ValueFunction, policy: Policy
) -> None:
    rows = [
        (s.type_index, s.tokens, vf.value(s), policy.action(s))
        for s in enumerate_states(model)
    ]
    write_table(out / name, "solution", meta, ["type_index", "tokens", "value", "action"], rows)


def _write_thresholds(out: Path, name: str, meta: Dict[str, Any], model: MdpModel, table) -> None:
    rows = [
        (s, model.traffic.label_of(s) if s != IDLE else "idle", table.threshold(s))
        for s in range(model.n_types + 1)
    ]
    write_table(out / name, "thresholds", meta, ["type_index", "label", "threshold"], rows)


def _write_benefits(out: Path, meta: Dict[str, Any], loaded: LoadedModel) -> None:
    if not any(rec.get("kind") != "direct" for rec in loaded.benefit_provenance):
        return
    keys = ["label", "kind", "benefit", "log_base",
            "d2d_psnr", "cellular_psnr", "d2d_throughput", "cellular_throughput"]
    rows = [[rec.get(k, "") for k in keys] for rec in loaded.benefit_provenance]
    write_table(out / "benefits.csv", "benefits", meta, keys, rows)
    print("derived benefits:")
    for rec in loaded.benefit_provenance:
        print(f"  {rec['label']}: {rec['benefit']:.6g} ({rec.get('kind')})")


def cmd_solve(args: argparse.Namespace, loaded: LoadedModel) -> int:
    out = Path(args.out)
    model = loaded.model
    cfg = SolverConfig(epsilon=args.eps, max_iterations=args.max_iter)

    worst_concavity = [0.0]

    def watch(_n: int, values: np.ndarray, _acts: np.ndarray) -> None:
        rep = check_concavity(ValueFunction(values))
        worst_concavity[0] = max(worst_concavity[0], rep.max_violation)

    vf, policy, n_iter = value_iteration(model, cfg, on_iterate=watch)
    meta = _meta(args, loaded, epsilon=args.eps, iterations=n_iter)
    _write_benefits(out, meta, loaded)
    _write_solution(out, "solution.csv", meta, model, vf, policy)

    checks: List[List[Any]] = []
    failed = False

    v_exact = evaluate_policy_exact(model, policy)
    deviation = check_one_shot_deviation(model, v_exact, policy)
    checks.append(["one_shot_deviation", deviation.ok, f"{len(deviation.violations)} violations"])
    failed |= not deviation.ok

    checks.append(
        ["concavity_all_iterations", worst_concavity[0] <= 1e-9,
         f"max violation {worst_concavity[0]:.3e}"]
    )
    failed |= worst_concavity[0] > 1e-9

    monotone = check_monotone_tokens(vf)
    checks.append(["monotone_in_tokens", monotone, ""])
    failed |= not monotone

    try:
        table = extract_thresholds(model, policy)
        _write_thresholds(out, "thresholds.csv", meta, model, table)
        checks.append(["threshold_structure", True, ""])
        cuts = [table.threshold(s) for s in range(1, model.n_types + 1)]
        ordered = all(a >= b for a, b in zip(cuts, cuts[1:]))
        checks.append(
            ["threshold_monotone_in_benefit", ordered, f"cutoffs {cuts}"]
        )
        failed |= not ordered
    except NotThresholdError as exc:
        checks.append(["threshold_structure", False, str(exc)])
        failed = True

    write_table(out / "structure_checks.csv", "checks", meta, ["check", "ok", "detail"], checks)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    return EXIT_STRUCTURE if failed else EXIT_OK


def cmd_sweep(args: argparse.Namespace, loaded: LoadedModel) -> int:
    out = Path(args.out)
    model = loaded.model
    grid = _parse_grid(args.grid)
    cfg = SolverConfig(epsilon=args.eps, max_iterations=args.max_iter)
    result = sweep(model, args.param, grid, cfg)
    meta = _meta(args, loaded, parameter=args.param, grid=grid)

    rows: List[List[Any]] = []
    for point in result.points:
        if point.thresholds is None:
            rows.append([point.value, "", "", "", point.error])
            continue
        for s in range(model.n_types + 1):
            label = model.traffic.label_of(s) if s != IDLE else "idle"
            rows.append([point.value, s, label, point.thresholds.threshold(s), ""])
    write_table(
        out / "sweep.csv", "sweep", meta,
        [args.param, "type_index", "label", "threshold", "error"], rows,
    )

    direction = TREND_DIRECTIONS.get(args.param)
    verdict_rows: List[List[Any]] = []
    failed = False
    for v in threshold_trends(result, direction if direction is not None else +1):
        expected = {+1: "non-decreasing", -1: "non-increasing"}.get(direction, "none")
        ok = v.monotone if direction is not None else True
        verdict_rows.append(
            [v.type_index, model.traffic.label_of(v.type_index), expected, v.monotone, v.strict_somewhere, ok]
        )
        failed |= not ok
    write_table(
        out / "sweep_verdicts.csv", "sweep-verdicts", meta,
        ["type_index", "label", "expected_trend", "monotone", "strict_somewhere", "ok"],
        verdict_rows,
    )
    for row in verdict_rows:
        print(f"{'PASS' if row[5] else 'FAIL'} trend {row[1]}: monotone={row[3]} strict={row[4]}")
    return EXIT_STRUCTURE if failed else EXIT_OK


def _policy_for(model: MdpModel, name: str) -> Policy:
    if name == "optimal":
        _, policy, _ = value_iteration(model)
        return policy
    if name == "greedy":
        return build_greedy_policy(model)
    if name == "never":
        return Policy.never_act(model)
    raise ValueError(f"unknown policy {name!r}")


def _write_usage(
    out: Path, name: str, meta: Dict[str, Any], model: MdpModel, traces: Dict[str, SimTrace]
) -> None:
    probs = model.traffic.stationary_array()
    conditional = probs[1:] / probs[1:].sum()
    rows: List[List[Any]] = []
    for policy_name, trace in traces.items():
        shares = trace.spend_shares(model.n_types)
        counts = trace.spend_counts()
        for s in range(1, model.n_types + 1):
            rows.append(
                [policy_name, s, model.traffic.label_of(s), counts.get(s, 0),
                 shares[s - 1], conditional[s - 1]]
            )
    write_table(
        out / name, "token-usage", meta,
        ["policy", "type_index", "label", "spend_count", "share", "conditional_prob"], rows,
    )


def cmd_simulate(args: argparse.Namespace, loaded: LoadedModel) -> int:
    out = Path(args.out)
    model = loaded.model
    policy = _policy_for(model, args.policy)
    cfg = SimConfig(slots=args.slots, rng_seed=args.seed, initial_tokens=args.initial_tokens)
    trace = run_single(model, policy, cfg)
    meta = _meta(args, loaded, policy=args.policy, slots=args.slots,
                 initial_tokens=cfg.start_tokens(model))

    write_table(
        out / "sim_summary.csv", "sim-summary", meta,
        ["policy", "slots", "seed", "average_utility", "discounted_utility",
         "tokens_earned", "tokens_spent", "final_tokens"],
        [[args.policy, trace.slots, args.seed, trace.average_utility,
          trace.discounted_utility, trace.earn_count,
          int(np.sum(trace.token_delta == -1)),
          int(trace.tokens[-1] + trace.token_delta[-1])]],
    )
    _write_usage(out, "token_usage.csv", meta, model, {args.policy: trace})
    if args.full_trace:
        rows = (
            (t, trace.types[t], trace.tokens[t], trace.actions[t],
             EVENT_NAMES[int(trace.events[t])], trace.rewards[t], trace.token_delta[t])
            for t in range(trace.slots)
        )
        write_table(
            out / "trace.csv", "trace", meta,
            ["slot", "type_index", "tokens", "action", "event", "reward", "token_delta"],
            rows,
        )
    print(f"average utility {trace.average_utility:.6g} over {trace.slots} slots")
    return EXIT_OK


def cmd_network(args: argparse.Namespace, loaded: LoadedModel) -> int:
    out = Path(args.out)
    model = loaded.model
    cfg = NetworkConfig(
        num_ues=args.ues, slots=args.slots, policies=args.policy,
        rng_seed=args.seed, initial_tokens=args.initial_tokens,
    )
    result = run_network(model, cfg)
    meta = _meta(
        args, loaded, ues=args.ues, slots=args.slots, policy=args.policy,
        initial_total_tokens=result.initial_total_tokens,
        final_total_tokens=result.final_total_tokens,
        clipped_transfers=result.clipped_transfers,
        tokens_conserved=result.tokens_conserved,
    )
    write_table(
        out / "network_rates.csv", "network-rates", meta,
        ["ue", "accepting_slots", "request_received_slots", "requests_issued",
         "requests_served", "p_hat", "q_hat"],
        [
            [u, r.accepting_slots, r.request_received_slots, r.requests_issued,
             r.requests_served, r.p_hat, r.q_hat]
            for u, r in enumerate(result.rates)
        ],
    )
    write_table(
        out / "network_summary.csv", "network-summary", meta,
        ["ue", "average_utility", "tokens_spent", "tokens_earned"],
        [
            [u, tr.average_utility, int(np.sum(tr.token_delta == -1)), tr.earn_count]
            for u, tr in enumerate(result.traces)
        ],
    )
    print(
        f"tokens: {result.initial_total_tokens} -> {result.final_total_tokens} "
        f"(clipped {result.clipped_transfers}); conserved={result.tokens_conserved}"
    )
    if args.fixed_point_rounds > 0:
        fp = run_fixed_point(model, cfg, max_rounds=args.fixed_point_rounds)
        write_table(
            out / "fixed_point.csv", "fixed-point",
            {**meta, "converged": fp.converged},
            ["round", "p_model", "q_model", "p_hat", "q_hat"],
            [
                [i, r.p_model, r.q_model, r.p_hat, r.q_hat]
                for i, r in enumerate(fp.rounds)
            ],
        )
        print(f"fixed-point rounds: {len(fp.rounds)}, converged={fp.converged}")
    return EXIT_OK


def cmd_learn(args: argparse.Namespace, loaded: LoadedModel) -> int:
    out = Path(args.out)
    model = loaded.model
    agent = QLearningAgent(slots=args.slots, rng_seed=args.seed)
    agent.fit(model)
    meta = _meta(args, loaded, slots=args.slots)

    rows = []
    for s in range(model.n_types + 1):
        for k in range(model.token_cap + 1):
            for a in (0, 1):
                q = agent.q_.q[s, k, a]
                if np.isnan(q):
                    continue
                rows.append([s, k, a, float(q), int(agent.q_.visits[s, k, a])])
    write_table(out / "qtable.csv", "qtable", meta,
                ["type_index", "tokens", "action", "q", "visits"], rows)
    _write_solution(out, "learned_policy.csv", meta, model,
                    ValueFunction(np.nanmax(agent.q_.q, axis=2)), agent.policy_)
    write_table(out / "training_curve.csv", "training-curve", meta,
                ["slot", "cumulative_discounted_reward"], agent.training_curve_)

    _, optimal, _ = value_iteration(model)
    agreement = policy_agreement(agent.policy_, optimal)
    write_table(out / "learn_summary.csv", "learn-summary", meta,
                ["slots", "seed", "agreement_with_optimal"],
                [[args.slots, args.seed, agreement]])
    print(f"greedy policy agrees with optimal on {agreement:.1%} of states")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, loaded: LoadedModel) -> int:
    out = Path(args.out)
    model = loaded.model
    grid = _parse_grid(args.grid)
    meta = _meta(args, loaded, grid=grid, seeds=args.seeds,
                 slots=args.slots, compare_slots=args.compare_slots)

    run_rows: List[List[Any]] = []
    summary_rows: List[List[Any]] = []
    for beta in grid:
        m = apply_parameter(model, "beta", beta)
        _, optimal, _ = value_iteration(m)
        greedy = build_greedy_policy(m)
        diffs = []
        means = {"optimal": [], "greedy": []}
        for j in range(args.seeds):
            cfg = SimConfig(slots=args.compare_slots, rng_seed=args.seed + j)
            pair = {}
            for name, policy in (("optimal", optimal), ("greedy", greedy)):
                trace = run_single(m, policy, cfg)
                pair[name] = trace.average_utility
                means[name].append(trace.average_utility)
                run_rows.append([beta, args.seed + j, name, trace.average_utility])
            diffs.append(pair["optimal"] - pair["greedy"])
        diffs_arr = np.asarray(diffs)
        pooled_se = float(diffs_arr.std(ddof=1) / np.sqrt(len(diffs_arr))) if len(diffs_arr) > 1 else 0.0
        summary_rows.append([
            beta, float(np.mean(means["optimal"])), float(np.mean(means["greedy"])),
            float(diffs_arr.mean()), pooled_se,
        ])

    write_table(out / "compare_runs.csv", "compare-runs", meta,
                ["beta", "seed", "policy", "average_utility"], run_rows)
    write_table(out / "compare_summary.csv", "compare-summary", meta,
                ["beta", "optimal_mean", "greedy_mean", "gap", "pooled_se"], summary_rows)

    _, optimal, _ = value_iteration(model)
    greedy = build_greedy_policy(model)
    usage_cfg = SimConfig(slots=args.slots, rng_seed=args.seed)
    traces = {
        "optimal": run_single(model, optimal, usage_cfg),
        "greedy": run_single(model, greedy, usage_cfg),
    }
    _write_usage(out, "token_usage_compare.csv", meta, model, traces)

    for row in summary_rows:
        print(f"beta={row[0]}: optimal {row[1]:.6g} greedy {row[2]:.6g} gap {row[3]:.6g} (se {row[4]:.2g})")
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "network": cmd_network,
    "learn": cmd_learn,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        loaded = load_model(args.config, log_base=args.log_base)
    except (ConfigError, InvalidModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args, loaded)
    except (ConfigError, InvalidModelError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
