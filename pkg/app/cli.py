"""
Command-line front end.

    paxraft run <scenario.yaml> [--seed N] [--out DIR] [--mutation ID] [--algorithm A] [--duration T]
    paxraft explore [--algorithm A] [--n N] [--ops K] [--max-term T] [--depth D] [--mutation ID] ...
    paxraft bench <comparison.yaml> [--reps R] [--out DIR] [--jobs J]

Exit statuses: 0 ok, 1 usage or configuration error, 2 violations or a
counterexample, 3 exploration inconclusive.
"""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from app.check.explorer import SmallConfig, explore
from app.check.oracles import Violation, check_all
from app.core.config import ConfigError, Scenario, ScenarioFile, build, load_scenario_file
from app.core.metrics import write_metrics
from app.core.observability import configure_logging, get_logger, log_error
from app.sim.measure import RunMetrics
from app.sim.simulator import run as simulate
from app.sim.trace import EventKind, Trace

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATIONS = 2
EXIT_INCONCLUSIVE = 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit status 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def write_violations(path: Path, violations: List[Violation]) -> None:
    path.write_text("".join(v.to_json() + "\n" for v in violations), encoding="utf-8")


def write_outputs(out: Path, algorithm: str, trace: Trace, metrics: RunMetrics, violations: List[Violation]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.jsonl")
    (out / "metrics.tsv").write_text(metrics.to_tsv(), encoding="utf-8")
    write_metrics(out / "metrics.prom", algorithm, metrics.scalars())
    if violations:
        write_violations(out / "violations.jsonl", violations)


def print_summary(scenario: Scenario, trace: Trace, metrics: RunMetrics, violations: List[Violation]) -> None:
    print(f"{scenario.algorithm}: n={scenario.n} seed={scenario.seed} duration={scenario.duration}")
    leaders = [e for e in trace.of_kind(EventKind.ROLE_CHANGE) if e.payload["role"] == "leader"]
    print("leaders:")
    for event in leaders:
        print(f"  t={event.time:<6} server {event.payload['server']} term {event.payload['term']}")
    if not leaders:
        print("  (none)")
    print(
        f"elections: started={metrics.elections_started} won={metrics.elections_won} "
        f"split={metrics.split_vote_elections} abandoned={metrics.abandoned_elections}"
    )
    print(f"latencies: {metrics.election_latencies}")
    print(f"committed ops: {metrics.committed_ops}  messages: {metrics.messages_total} (dropped {metrics.messages_dropped})")
    print(f"violations: {len(violations)}")
    for violation in violations[:10]:
        print(f"  {violation.kind.value} at {violation.witnesses}: {violation.description}")


def cmd_run(args: argparse.Namespace) -> int:
    document = load_scenario_file(args.file)
    algorithms = [args.algorithm] if args.algorithm else document.algorithms()
    status = EXIT_OK
    for algorithm in algorithms:
        scenario = document.scenario(
            algorithm=algorithm, seed=args.seed, duration=args.duration, mutations=args.mutation
        )
        trace, metrics = simulate(scenario)
        violations = check_all(trace, algorithm)
        out = Path(args.out) if len(algorithms) == 1 else Path(args.out) / algorithm
        write_outputs(out, algorithm, trace, metrics, violations)
        print_summary(scenario, trace, metrics, violations)
        logger.info("run.complete", algorithm=algorithm, out=str(out), violations=len(violations))
        if violations:
            status = EXIT_VIOLATIONS
    return status


def cmd_explore(args: argparse.Namespace) -> int:
    data = {
        "algorithm": args.algorithm,
        "n": args.n,
        "ops": args.ops,
        "max_term": args.max_term,
        "depth": args.depth,
        "max_crashes": args.max_crashes,
        "partitions": args.partitions,
        "max_states": args.max_states,
        "mutations": args.mutation or [],
        "candidates": args.candidates,
        "compact": args.compact,
    }
    cfg = build(SmallConfig, data)
    result = explore(cfg)
    for key, value in result.summary().items():
        print(f"{key}: {value}")

    if result.status == "counterexample":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result.trace.write(out / "counterexample.jsonl")
        write_violations(out / "violations.jsonl", result.violations)
        for violation in result.violations:
            print(f"  {violation.kind.value} at {violation.witnesses}: {violation.description}")
        print(f"counterexample written to {out / 'counterexample.jsonl'}")
        return EXIT_VIOLATIONS
    if result.status == "inconclusive":
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _bench_one(job: Tuple[ScenarioFile, str, int]) -> Tuple[str, int, RunMetrics, int]:
    document, algorithm, seed = job
    scenario = document.scenario(algorithm=algorithm, seed=seed)
    trace, metrics = simulate(scenario)
    return algorithm, seed, metrics, len(check_all(trace, algorithm))


def aggregate(runs: Sequence[Tuple[str, int, RunMetrics, int]], algorithm: str) -> Dict[str, float]:
    """Comparison-table column for one algorithm."""
    mine = [(metrics, violations) for alg, _, metrics, violations in runs if alg == algorithm]
    latencies = np.array([v for metrics, _ in mine for v in metrics.election_latencies], dtype=float)
    candidate_terms = sum(m.candidate_terms for m, _ in mine)
    split = sum(m.split_vote_elections for m, _ in mine)

    def total(field: str) -> int:
        return int(sum(getattr(m, field) for m, _ in mine))

    return {
        "runs": len(mine),
        "election_latency_samples": int(latencies.size),
        "election_latency_mean": float(latencies.mean()) if latencies.size else float("nan"),
        "election_latency_variance": float(latencies.var(ddof=1)) if latencies.size > 1 else float("nan"),
        "split_vote_elections": split,
        "split_vote_rate": split / candidate_terms if candidate_terms else 0.0,
        "abandoned_elections": total("abandoned_elections"),
        "elections_started": total("elections_started"),
        "elections_won": total("elections_won"),
        "vote_entries_shipped": total("vote_entries_shipped"),
        "append_entries_shipped": total("append_entries_shipped"),
        "duplicate_entry_transmissions": total("duplicate_entry_transmissions"),
        "redundant_entry_transmissions": total("redundant_entry_transmissions"),
        "messages_total": total("messages_total"),
        "committed_ops": total("committed_ops"),
        "violations": int(sum(v for _, v in mine)),
    }


def format_comparison(columns: Dict[str, Dict[str, float]]) -> str:
    algorithms = list(columns)
    lines = ["metric\t" + "\t".join(algorithms)]
    for metric in columns[algorithms[0]]:
        cells = []
        for algorithm in algorithms:
            value = columns[algorithm][metric]
            cells.append(f"{value:.4f}" if isinstance(value, float) else str(value))
        lines.append(f"{metric}\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def cmd_bench(args: argparse.Namespace) -> int:
    document = load_scenario_file(args.file)
    if document.algorithm != "both":
        raise ConfigError("bench needs a comparison scenario with 'algorithm: both'")
    if args.reps < 1:
        raise ConfigError("--reps must be at least 1")

    # run r of each algorithm shares seed + r
    jobs = [(document, algorithm, document.seed + r) for r in range(args.reps) for algorithm in ("paxos", "raft")]
    for algorithm in ("paxos", "raft"):
        # the last seed must still be a valid root seed; surface errors before fanning out
        document.scenario(algorithm=algorithm, seed=document.seed + args.reps - 1)
    logger.info("bench.start", reps=args.reps, jobs=args.jobs)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            runs = list(pool.map(_bench_one, jobs))
    else:
        runs = [_bench_one(job) for job in jobs]
    runs.sort(key=lambda run: (run[1], run[0]))

    columns = {algorithm: aggregate(runs, algorithm) for algorithm in ("paxos", "raft")}
    table = format_comparison(columns)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.tsv").write_text(table, encoding="utf-8")
    per_run = ["algorithm\tseed\t" + "\t".join(runs[0][2].scalars())]
    for algorithm, seed, metrics, _ in runs:
        per_run.append(f"{algorithm}\t{seed}\t" + "\t".join(str(v) for v in metrics.scalars().values()))
    (out / "runs.tsv").write_text("\n".join(per_run) + "\n", encoding="utf-8")
    print(table, end="")
    violations = columns["paxos"]["violations"] + columns["raft"]["violations"]
    return EXIT_VIOLATIONS if violations else EXIT_OK


def _candidates(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated server ids, got {value!r}") from None


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="paxraft", description="Raft-style Paxos and Raft: simulate, check, compare")
    parser.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate one scenario and check it")
    run.add_argument("file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="out")
    run.add_argument("--mutation", action="append", help="Enable a mutation (repeatable)")
    run.add_argument("--algorithm", choices=["paxos", "raft"])
    run.add_argument("--duration", type=int)
    run.set_defaults(handler=cmd_run)

    exp = sub.add_parser("explore", help="Exhaustively explore a small cluster")
    exp.add_argument("--algorithm", choices=["paxos", "raft"], default="raft")
    exp.add_argument("--n", type=int, default=3)
    exp.add_argument("--ops", type=int, default=2)
    exp.add_argument("--max-term", type=int, default=4)
    exp.add_argument("--depth", type=int, default=200)
    exp.add_argument("--mutation", action="append")
    exp.add_argument("--max-crashes", type=int, default=1)
    exp.add_argument("--max-states", type=int, default=2_000_000)
    exp.add_argument("--partitions", action="store_true")
    exp.add_argument("--candidates", type=_candidates, help="Comma-separated servers allowed to time out")
    exp.add_argument("--compact", action="store_true", help="Keep state digests only")
    exp.add_argument("--out", default="out")
    exp.set_defaults(handler=cmd_explore)

    bench = sub.add_parser("bench", help="Compare Paxos and Raft over paired seeds")
    bench.add_argument("file")
    bench.add_argument("--reps", type=int, default=100)
    bench.add_argument("--out", default="out")
    bench.add_argument("--jobs", type=int, default=1)
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except ConfigError as e:
        log_error(logger, e, {"command": args.command})
        print(f"paxraft: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
