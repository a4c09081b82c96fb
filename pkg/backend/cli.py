import sys
import os
if '__file__' in globals():
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import logging
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from agents.target_policies import PolicyKind, TrainConfig, load_policy, save_policy, train_target
from environments.adversarial_env import BenchmarkMode, OverBudget
from environments.cartpole_env import episode_seed
from services.benchmark_service import ConvergenceCriteria
from services.errors import ConfigurationError, ImitationFailed, SchemaError, TrainingDidNotConverge
from services.qstar_service import ImitationConfig, QStarService
from services.reporting_service import (
    ReportingService,
    RunConfig,
    compare_reports,
    format_comparison,
    read_report,
    write_curve_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


def cmd_train_target(args: argparse.Namespace) -> int:
    overrides = {"timesteps": args.timesteps} if args.timesteps else {}
    config = TrainConfig.for_kind(args.kind, **overrides)
    output_dir = Path(args.output_dir)
    stem = f"{args.kind}_seed{args.seed}"
    try:
        policy = train_target(args.kind, config, env_seed=args.env_seed, train_seed=args.seed)
    except TrainingDidNotConverge as e:
        write_curve_csv(e.learning_curve, output_dir / f"{stem}_curve.csv")
        logger.error(f"❌ {e}")
        return EXIT_NOT_CONVERGED

    save_policy(policy, output_dir / f"{stem}.json")
    write_curve_csv(policy.metadata.get("learning_curve", []), output_dir / f"{stem}_curve.csv")
    print(f"{policy.policy_id}: final evaluation return {policy.final_eval_return:.2f}")
    return EXIT_OK


def cmd_extract_q(args: argparse.Namespace) -> int:
    target = load_policy(args.target)
    service = QStarService(ImitationConfig(transitions=args.transitions, seed=args.seed))
    try:
        qfn = service.resolve(target, args.source)
    except ImitationFailed as e:
        logger.error(f"❌ {e}")
        return EXIT_NOT_CONVERGED

    rollout = service.export(target, qfn, args.output_dir, episode_seed(args.seed, 0))
    print(f"{target.policy_id}: {qfn.source.value} Q over {len(rollout)} rollout states")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    mode = BenchmarkMode(args.mode)
    if mode == BenchmarkMode.ROBUSTNESS and args.delta_max is None:
        raise ConfigurationError("robustness benchmarks need --delta-max")

    criteria_overrides = {
        name: value for name, value in {
            "max_steps": args.max_steps,
            "regret_tolerance": args.regret_tolerance,
            "perturb_std_tolerance": args.perturb_std_tolerance,
        }.items() if value is not None
    }
    target = load_policy(args.target)
    run_config = RunConfig(
        mode=mode,
        target_artifact=str(args.target),
        target_kind=target.kind,
        delta_max=args.delta_max,
        over_budget=OverBudget(args.over_budget),
        episodes=args.episodes,
        adversary_seed=args.adversary_seed,
        eval_seed=args.eval_seed,
        cost=args.cost,
        criteria=ConvergenceCriteria(**criteria_overrides),
        q_artifact=args.q_artifact,
        adversary_artifact=args.adversary,
        workers=args.workers,
        output_dir=args.output_dir,
    )
    benchmark = run_config.benchmark_service()
    reporting = ReportingService(run_config.output_dir)

    qfn = QStarService().resolve(target, "auto", artifact=args.q_artifact)
    run_config.q_source = qfn.source.value

    saved = load_policy(args.adversary) if args.adversary else None
    adversary = benchmark.obtain_adversary(target, qfn, saved)
    report, records = benchmark.evaluate(target, adversary, qfn)
    report.run_config = run_config.model_dump(mode="json")

    reporting.write_benchmark(report, records, adversary if saved is None else None)
    print(f"{report.target.policy_id} {mode.value}: mean regret {report.test_mean_regret:.2f}, "
          f"mean perturbations {report.test_mean_perturbations:.2f}, converged={report.converged}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_compare(args: argparse.Namespace) -> int:
    reports = [read_report(path) for path in args.reports]
    frame = compare_reports(reports)
    ReportingService(args.output_dir).write_comparison(frame)
    print(format_comparison(frame))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--output-dir", default="results")

    parser = argparse.ArgumentParser(description="Adversarial resilience and robustness benchmarks for CartPole policies")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-target", parents=[common], help="Train a target policy")
    train.add_argument("kind", choices=[k.value for k in PolicyKind])
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--env-seed", type=int, default=0)
    train.add_argument("--timesteps", type=int, default=None)
    train.set_defaults(handler=cmd_train_target)

    extract = sub.add_parser("extract-q", parents=[common], help="Extract Q values of a target")
    extract.add_argument("target")
    extract.add_argument("--source", default="auto", choices=["auto", "direct", "value_lookahead", "imitated"])
    extract.add_argument("--transitions", type=int, default=ImitationConfig().transitions)
    extract.add_argument("--seed", type=int, default=0)
    extract.set_defaults(handler=cmd_extract_q)

    bench = sub.add_parser("benchmark", parents=[common], help="Train an adversary and benchmark a target")
    bench.add_argument("mode", choices=[m.value for m in BenchmarkMode])
    bench.add_argument("target")
    bench.add_argument("--delta-max", type=int, default=None)
    bench.add_argument("--episodes", type=int, default=100)
    bench.add_argument("--adversary-seed", type=int, default=0)
    bench.add_argument("--eval-seed", type=int, default=0)
    bench.add_argument("--cost", type=float, default=1.0)
    bench.add_argument("--max-steps", type=int, default=None)
    bench.add_argument("--regret-tolerance", type=float, default=None)
    bench.add_argument("--perturb-std-tolerance", type=float, default=None)
    bench.add_argument("--q-artifact", default=None)
    bench.add_argument("--adversary", default=None)
    bench.add_argument("--over-budget", default=OverBudget.PENALIZE.value, choices=[o.value for o in OverBudget])
    bench.add_argument("--workers", type=int, default=1)
    bench.set_defaults(handler=cmd_benchmark)

    compare = sub.add_parser("compare", parents=[common], help="Compare benchmark reports")
    compare.add_argument("reports", nargs="+")
    compare.set_defaults(handler=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ValidationError, ConfigurationError) as e:
        logger.error(f"❌ Invalid configuration: {e}")
        return EXIT_USAGE
    except (SchemaError, OSError) as e:
        logger.error(f"❌ {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
