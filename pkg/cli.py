"""
Neyman Lab - Command Line
Subcommands: data, exact, simulate, curve, analyze.

Primary output (JSON or CSV) goes to --out or stdout and is byte-identical across runs;
timestamps and thread counts go to <out>.meta.json and the log.
"""
import argparse
import json
import logging
import re
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from analytics import DegenerateArmError, NeymanLabError, OutcomeSchedule, finite_stats, neyman_summary
from datasets import (
    GENERATORS,
    ImputeConfig,
    ObservedDataset,
    flip_prefix,
    gen_synthetic,
    impute,
    load_csv,
    load_schedule,
    load_trace,
    normalize,
    parse_key_values,
    replicate,
    shuffle,
    write_schedule,
    write_trace,
)
from designs import DESIGN_BUILDERS, DesignSpecError, parse_design
from estimators import analyze_trace
from oracle import enumerate_exact, exact_regret_ratio_check, variance_from_inverse_moments
from settings import DEFAULT_LEVELS, DEFAULT_REPLICATIONS, SPEC_VERSION, configure_logging, load_settings
from simulation import SimConfig, curve_frame, monte_carlo, run_experiment, variance_curve
from streams import substream

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

# A comma-separated piece that continues the previous design's parameters
_CONTINUATION = re.compile(r"^[A-Za-z_][\w]*=")


class NeymanLabParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _levels(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None


def split_designs(text: str) -> list[str]:
    """
    Split a comma-separated design list; pieces like "alpha=3" that are not
    themselves designs belong to the design before them.
    """
    designs = []
    for piece in (part.strip() for part in text.split(",")):
        if not piece:
            continue
        kind = piece.partition(":")[0]
        if designs and kind not in DESIGN_BUILDERS and _CONTINUATION.match(piece):
            designs[-1] = f"{designs[-1]},{piece}"
        else:
            designs.append(piece)
    return designs


def build_parser() -> argparse.ArgumentParser:
    parser = NeymanLabParser(prog="neyman-lab", description="Adaptive Neyman allocation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="Build an outcome schedule CSV")
    source = data.add_mutually_exclusive_group(required=True)
    source.add_argument("--in", dest="input", help="Schedule (y1,y0) or observed (y,z) CSV")
    source.add_argument("--generate", choices=list(GENERATORS), help="Synthetic schedule kind")
    data.add_argument("--horizon", type=int, help="Units to generate")
    data.add_argument("--seed", type=_seed, default=0, help="Generator seed")
    data.add_argument("--params", help="Generator parameters, e.g. lam=4,a=0.25,b=1")
    data.add_argument("--impute", help="tau=<v>,sigma=<v>,seed=<n> for observed data")
    data.add_argument("--normalize", action="store_true", help="Rescale jointly onto [0, 1]")
    data.add_argument("--replicate", type=int, help="Concatenate K copies")
    data.add_argument("--flip-prefix", type=int, help="Swap arms of the first N units")
    data.add_argument("--shuffle", type=_seed, metavar="SEED", help="Seeded permutation of units")
    data.add_argument("--out", help="Output CSV (default stdout)")

    exact = sub.add_parser("exact", help="Exact enumeration over all 2^T paths")
    exact.add_argument("--data", required=True, help="Schedule CSV")
    exact.add_argument("--design", default="clip-ogd")
    exact.add_argument("--out", help="Output JSON (default stdout)")

    simulate = sub.add_parser("simulate", help="Monte Carlo replications of one design")
    simulate.add_argument("--data", required=True, help="Schedule CSV")
    simulate.add_argument("--design", default="clip-ogd")
    simulate.add_argument("--reps", type=int, default=DEFAULT_REPLICATIONS)
    simulate.add_argument("--seed", type=_seed, default=0)
    simulate.add_argument("--levels", type=_levels, default=list(DEFAULT_LEVELS))
    simulate.add_argument("--threads", type=int, help="Worker threads (env NEYMAN_LAB_THREADS)")
    simulate.add_argument("--out", help="Output JSON (default stdout)")
    simulate.add_argument("--save-trace", help="Write replication 0 as a p,z,y trace CSV")

    curve = sub.add_parser("curve", help="Variance curves over prefix horizons")
    curve.add_argument("--data", required=True, help="Schedule CSV")
    curve.add_argument("--designs", type=split_designs, default=["clip-ogd"])
    curve.add_argument("--t-grid", type=_int_list, help="Horizons (default: full length)")
    curve.add_argument("--reps", type=int, default=DEFAULT_REPLICATIONS)
    curve.add_argument("--seed", type=_seed, default=0)
    curve.add_argument("--threads", type=int)
    curve.add_argument("--out", help="Output CSV (default stdout)")

    analyze = sub.add_parser("analyze", help="Estimate and intervals from a stored trace")
    analyze.add_argument("--trace", required=True, help="Trace CSV with header p,z,y")
    analyze.add_argument("--levels", type=_levels, default=list(DEFAULT_LEVELS))
    analyze.add_argument("--out", help="Output JSON (default stdout)")

    return parser


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def document(config: dict, result: dict) -> dict:
    return {"spec_version": SPEC_VERSION, "config": config, "result": result}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def emit_json(doc: dict, out: str | None) -> None:
    _emit(json.dumps(doc, indent=2) + "\n", out)


def write_meta(
    out: str | None,
    command: str,
    started: datetime,
    wall: float,
    threads: int,
    config: dict | None = None,
) -> None:
    """Run metadata that differs between invocations; never part of the primary output"""
    logger.info("%s finished in %.2fs on %d thread(s)", command, wall, threads)
    if not out:
        return
    meta = {
        "spec_version": SPEC_VERSION,
        "command": command,
        "started": started.isoformat(),
        "wall_seconds": wall,
        "threads": threads,
    }
    if config is not None:
        meta["config"] = config
    Path(f"{out}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_data(args) -> None:
    if args.input:
        loaded = load_csv(args.input)
    else:
        if args.horizon is None:
            raise NeymanLabError("--generate needs --horizon")
        loaded = gen_synthetic(args.generate, args.horizon, args.seed, parse_key_values(args.params))

    if isinstance(loaded, ObservedDataset):
        if not args.impute:
            raise NeymanLabError("observed data (y,z) needs --impute tau=<v>[,sigma=<v>,seed=<n>]")
        outcomes = impute(loaded, ImputeConfig(**parse_key_values(args.impute)))
    else:
        if args.impute:
            raise NeymanLabError("--impute applies only to observed (y,z) data")
        outcomes = loaded

    if args.normalize:
        outcomes = normalize(outcomes)
    if args.replicate is not None:
        outcomes = replicate(outcomes, args.replicate)
    if args.flip_prefix is not None:
        outcomes = flip_prefix(outcomes, args.flip_prefix)
    if args.shuffle is not None:
        outcomes = shuffle(outcomes, args.shuffle)

    if args.out:
        write_schedule(outcomes, args.out)
        logger.info("wrote schedule T=%d to %s", outcomes.T, args.out)
    else:
        write_schedule(outcomes, sys.stdout)


def _schedule_summary(outcomes: OutcomeSchedule) -> dict:
    stats = finite_stats(outcomes)
    summary = {"T": stats.T, "tau": stats.tau, "S1": stats.S1, "S0": stats.S0, "rho": stats.rho}
    try:
        neyman = neyman_summary(stats)
    except DegenerateArmError:
        return summary
    summary.update(
        p_star=neyman.p_star,
        normalized_neyman_variance=neyman.normalized_neyman_variance,
        normalized_variance_bound=neyman.normalized_variance_bound,
    )
    return summary


def cmd_exact(args) -> None:
    outcomes = load_schedule(args.data)
    spec = parse_design(args.design)
    policy = spec.build(outcomes)
    results = enumerate_exact(outcomes, policy)

    try:
        identity = exact_regret_ratio_check(outcomes, spec.build(outcomes)).model_dump()
    except DegenerateArmError:
        logger.warning("an arm has zero second moment; identity check skipped")
        identity = None

    result = {
        "schedule": _schedule_summary(outcomes),
        "exact": results.model_dump(),
        "variance_from_inverse_moments": variance_from_inverse_moments(outcomes, results),
        "identity": identity,
    }
    config = {"data": args.data, "design": spec.text, "resolved": policy.describe()}
    emit_json(document(config, result), args.out)


def cmd_simulate(args) -> None:
    outcomes = load_schedule(args.data)
    config = SimConfig(
        replications=args.reps,
        seed=args.seed,
        policy_spec=args.design,
        coverage_levels=args.levels,
        threads=args.threads,
    )
    summary = monte_carlo(outcomes, config.policy_spec, config)

    if args.save_trace:
        trace = run_experiment(outcomes, parse_design(args.design).build(outcomes), substream(config.seed, 0))
        write_trace(trace, args.save_trace)
        logger.info("wrote replication 0 trace to %s", args.save_trace)

    echoed = config.model_dump(exclude={"threads", "t_grid"})
    echoed.update(data=args.data, resolved=summary.resolved)
    emit_json(document(echoed, summary.model_dump()), args.out)


def cmd_curve(args) -> dict:
    """Writes the curve CSV and returns the resolved config for the meta file"""
    outcomes = load_schedule(args.data)
    t_grid = args.t_grid or [outcomes.T]
    config = SimConfig(
        replications=args.reps,
        seed=args.seed,
        policy_spec=",".join(args.designs),
        t_grid=t_grid,
        threads=args.threads,
    )
    points = variance_curve(outcomes, args.designs, t_grid, config)
    frame = curve_frame(points)
    if args.out:
        frame.to_csv(args.out, index=False, float_format="%.17g")
        logger.info("wrote %d curve points to %s", len(frame), args.out)
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")

    echoed = config.model_dump(exclude={"threads", "policy_spec"})
    echoed.update(
        data=args.data,
        designs=args.designs,
        resolved=[{"T": point.T, **point.resolved} for point in points],
    )
    return echoed


def cmd_analyze(args) -> None:
    trace = load_trace(args.trace)
    estimate, intervals = analyze_trace(trace, args.levels)
    result = {
        "T": trace.T,
        "estimate": estimate.model_dump(by_alias=True),
        "intervals": [interval.model_dump() for interval in intervals],
    }
    emit_json(document({"trace": args.trace, "levels": args.levels}, result), args.out)


COMMANDS = {
    "data": cmd_data,
    "exact": cmd_exact,
    "simulate": cmd_simulate,
    "curve": cmd_curve,
    "analyze": cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        settings = load_settings(getattr(args, "threads", None))
    except ValueError as e:
        print(f"neyman-lab: invalid settings: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    configure_logging(settings.log_level)

    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    try:
        meta_config = COMMANDS[args.command](args)
    except DesignSpecError as e:
        print(f"neyman-lab: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        # NeymanLabError and pydantic's ValidationError are both ValueErrors
        print(f"neyman-lab: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    write_meta(
        getattr(args, "out", None), args.command, started, time.perf_counter() - clock, settings.threads, meta_config,
    )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
