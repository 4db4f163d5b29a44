import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

sys.path.insert(0, str(Path(__file__).parent.parent))

from histotest.adversarial import (
    Family,
    InstancePair,
    discretize_thirds,
    gen_E,
    gen_F,
    gen_prop_lb,
    gen_strong_lb,
    verify_instance,
)
from histotest.ak_oracle import ak_distance, dka_report, l1k_report
from histotest.harness import (
    COMPLEXITY_HEADER,
    POWER_HEADER,
    TV_HEADER,
    ExperimentConfig,
    calibrate_l2_constant,
    complexity_slope,
    estimate_sample_complexity,
    run_power,
    run_tv_decay,
    write_rows,
)
from histotest.measures import histogram_payload, load_histogram
from histotest.sources import PairSource
from histotest.testers import (
    TesterConstants,
    TesterReport,
    Verdict,
    capped_support_test,
    full_ak_test,
    histogram_l1_test,
    iterative_ak_test,
    l2_budget,
    l2_core_test,
    small_support_test,
)
from utils.config import config
from utils.helpers import seed_sequence
from utils.logger import get_logger, set_console_level

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

TRIAL_HEADER = ["trial", "decision", "statistic", "samples_used_p", "samples_used_q"]

def _add_global_flags(parser: argparse.ArgumentParser, top_level: bool) -> None:
    # leaf copies leave the namespace alone unless given, so flags placed before the command survive
    def default(value: Any) -> Any:
        return value if top_level else argparse.SUPPRESS

    parser.add_argument("--seed", type=int, default=default(None), help="Master seed (non-negative, default 0)")
    parser.add_argument("--out", type=Path, default=default(None), help="Write output to this file instead of stdout")
    parser.add_argument("--format", choices=["json", "csv"], default=default(None), help="Output format")
    parser.add_argument("--workers", type=int, default=default(None), help="Worker threads (HISTOTEST_WORKERS wins)")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False), help="Show debug logs on stderr")

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, top_level=False)

    parser = argparse.ArgumentParser(
        prog="histotest",
        description="Closeness testing of discrete distributions under the A_k distance",
    )
    _add_global_flags(parser, top_level=True)
    commands = parser.add_subparsers(dest="command", required=True)

    oracle = commands.add_parser("oracle", help="Exact distance oracles").add_subparsers(dest="oracle", required=True)
    for name in ("ak", "l1k", "dka"):
        sub = oracle.add_parser(name, parents=[common])
        sub.add_argument("--p", type=Path, required=True, help="Histogram JSON for p")
        sub.add_argument("--q", type=Path, required=True, help="Histogram JSON for q")
        sub.add_argument("--k", type=int, required=True)
        if name == "dka":
            sub.add_argument("--alpha", type=float, required=True)

    test = commands.add_parser("test", help="Run a closeness tester").add_subparsers(dest="tester", required=True)
    for name in ("full", "iterative", "small-support", "l2", "capped", "histogram-l1"):
        sub = test.add_parser(name, parents=[common])
        sub.add_argument("--p", type=Path, required=True, help="Histogram JSON for p")
        sub.add_argument("--q", type=Path, required=True, help="Histogram JSON for q")
        sub.add_argument("--k", type=int, required=name != "l2")
        sub.add_argument("--eps", type=float, required=True)
        sub.add_argument("--trials", type=int, default=1)
        sub.add_argument("--budget-scale", type=float, default=None)
        if name == "l2":
            sub.add_argument("--m", type=int, default=None, help="Poisson rate per side")
            sub.add_argument("--b", type=float, default=1.0, help="Bound on the l2 norms")
        if name == "capped":
            sub.add_argument("--alpha", type=float, required=True)
            sub.add_argument("--split-size", type=int, default=None)

    gen = commands.add_parser("gen", help="Generate lower-bound instances").add_subparsers(dest="generator", required=True)
    for name in ("prop-lb", "strong-lb", "family-e", "family-f"):
        sub = gen.add_parser(name, parents=[common])
        sub.add_argument("--W", type=float if name == "prop-lb" else int, required=True)
        if name in ("prop-lb", "strong-lb"):
            sub.add_argument("--k", type=int, required=True)
            sub.add_argument("--eps", type=float, required=True)
            sub.add_argument("--family", type=Family.parse, required=True)
            sub.add_argument("--verify", action="store_true", help="Attach oracle checks to the output")
        if name == "prop-lb":
            sub.add_argument("--discretize", action="store_true", help="Emit the thirds grid histograms")
        if name == "strong-lb":
            sub.add_argument("--m", type=int, default=None, help="Heavy block count (defaults to k)")
        sub.add_argument(
            "--side", choices=["p", "q"], default=None,
            help="Emit only this side as a histogram file that oracle and test accept",
        )

    exp = commands.add_parser("exp", help="Run experiments").add_subparsers(dest="experiment", required=True)
    for name in ("power", "complexity", "tv", "calibrate"):
        sub = exp.add_parser(name, parents=[common])
        sub.add_argument("--config", type=Path, required=True, help="Experiment config JSON")
        if name in ("complexity", "calibrate"):
            sub.add_argument("--target", type=float, default=None)

    return parser

def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        f.write(text)
    logger.info(f"Wrote {out}")

def _dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, default=str) + "\n"

def _load_pair(args: argparse.Namespace) -> PairSource:
    return PairSource(load_histogram(args.p), load_histogram(args.q))

def _run_oracle(args: argparse.Namespace) -> str:
    p, q = load_histogram(args.p), load_histogram(args.q)
    if args.oracle == "ak":
        payload = ak_distance(p, q, args.k).to_dict()
    elif args.oracle == "l1k":
        payload = l1k_report(p, q, args.k)
    else:
        payload = dka_report(p, q, args.k, args.alpha)
    return _dump_json(payload)

def _tester_call(args: argparse.Namespace, constants: TesterConstants) -> Callable[[PairSource, Any], Verdict]:
    if args.tester == "l2":
        rate = args.m or l2_budget(args.b, args.eps * args.eps, constants)
        return lambda src, seed: l2_core_test(src, rate, args.eps, seed)
    if args.tester == "small-support":
        return lambda src, seed: small_support_test(src, args.k, args.eps, seed, constants)
    if args.tester == "capped":
        return lambda src, seed: capped_support_test(src, args.k, args.eps, args.alpha, seed, args.split_size, constants)
    testers = {"full": full_ak_test, "iterative": iterative_ak_test, "histogram-l1": histogram_l1_test}
    tester = testers[args.tester]
    return lambda src, seed: tester(src, src.n, args.k, args.eps, seed, constants)

def _run_test(args: argparse.Namespace) -> str:
    if args.trials < 1:
        raise ValueError(f"trials must be at least 1, got {args.trials}")
    overrides = {} if args.budget_scale is None else {"budget_scale": args.budget_scale}
    constants = TesterConstants.from_config(overrides)
    src = _load_pair(args)
    call = _tester_call(args, constants)
    params = {"n": src.n, "k": args.k, "eps": args.eps, "constants": constants.to_dict()}

    if args.trials == 1 and args.format != "csv":
        report = TesterReport(args.tester, params, args.seed, call(src, args.seed))
        return _dump_json(report.to_dict())

    verdicts = [call(src, seed_sequence(args.seed, trial)) for trial in range(args.trials)]
    far = sum(verdict.is_far for verdict in verdicts)
    logger.info(f"{args.tester}: Far in {far}/{args.trials} trials")
    if args.format == "json":
        return _dump_json([
            {"trial": trial, **TesterReport(args.tester, params, args.seed, verdict).to_dict()}
            for trial, verdict in enumerate(verdicts)
        ])

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRIAL_HEADER)
    for trial, verdict in enumerate(verdicts):
        writer.writerow([trial, verdict.decision.value, verdict.statistic, verdict.samples_used_p, verdict.samples_used_q])
    return buffer.getvalue()

def _pair_payload(pair: InstancePair) -> Dict[str, Any]:
    if pair.is_continuous:
        p, q = pair.p.to_json(), pair.q.to_json()
    else:
        p, q = histogram_payload(pair.p, "pieces"), histogram_payload(pair.q, "pieces")
    return {"family": pair.family.value, "params": pair.params, "p": p, "q": q}

def _run_gen(args: argparse.Namespace) -> str:
    if args.generator in ("family-e", "family-f"):
        if args.generator == "family-e":
            label, (p, q) = "E", gen_E(args.W, args.seed).pair()
        else:
            label, (p, q) = "F", gen_F(args.W, args.seed)
        if args.side:
            return _dump_json(histogram_payload(p if args.side == "p" else q))
        payload = {"family": label, "params": {"W": args.W, "seed": args.seed},
                   "p": histogram_payload(p), "q": histogram_payload(q)}
        return _dump_json(payload)

    if args.generator == "prop-lb":
        pair = gen_prop_lb(args.k, args.eps, args.W, args.family, args.seed)
        if args.discretize or args.verify or args.side:
            pair = discretize_thirds(pair)
    else:
        pair = gen_strong_lb(args.k, args.eps, args.m or args.k, args.W, args.family, args.seed)

    if args.side:
        return _dump_json(histogram_payload(pair.p if args.side == "p" else pair.q))
    payload = _pair_payload(pair)
    if args.verify:
        payload["verification"] = verify_instance(pair, args.k, args.eps).to_dict()
    return _dump_json(payload)

def _run_experiment(args: argparse.Namespace) -> str:
    experiment = ExperimentConfig.load(args.config)
    if args.seed is not None:
        experiment = ExperimentConfig.from_dict({**experiment.to_dict(), "master_seed": args.seed})
    fmt = args.format or "csv"
    output = args.out or (Path(experiment.output) if experiment.output else None)

    if args.experiment == "power":
        rows, header = run_power(experiment, args.workers), POWER_HEADER
    elif args.experiment == "complexity":
        rows, header = estimate_sample_complexity(experiment, args.target, args.workers), COMPLEXITY_HEADER
        slope_key = "k"
        if len({row.params.get(slope_key) for row in rows}) >= 2 and all(row.samples > 0 for row in rows):
            complexity_slope(rows, slope_key)
    elif args.experiment == "calibrate":
        rows, calibrated = calibrate_l2_constant(experiment, args.target, args.workers)
        header = COMPLEXITY_HEADER
        logger.info(f"set L2_BUDGET_CONSTANT={calibrated:.4g} to reach the target on every fixture")
    else:
        rows, header = run_tv_decay(experiment, args.workers), TV_HEADER

    text = write_rows(rows, header, fmt, output)
    return "" if output is not None else text

def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.verbose:
        set_console_level("DEBUG")
    if args.seed is None and args.command != "exp":
        args.seed = 0
    if args.seed is not None and args.seed < 0:
        parser.print_usage(sys.stderr)
        logger.error(f"--seed must be non-negative, got {args.seed}")
        return EXIT_USAGE

    handlers = {"oracle": _run_oracle, "test": _run_test, "gen": _run_gen, "exp": _run_experiment}
    try:
        config.validate()
        text = handlers[args.command](args)
    except (ValueError, RuntimeError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME

    if text:
        out = None if args.command == "exp" else args.out
        _emit(text, out)
    return EXIT_OK

def main() -> None:
    sys.exit(cli_main())

if __name__ == "__main__":
    main()
