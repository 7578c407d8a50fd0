import argparse
import sys

from loguru import logger

from ame.config import apply_overrides, load_config
from ame.errors import AMEError
from ame.orchestrator import ExperimentRunner


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed-env", type=int, help="Environment seed")
    common.add_argument("--seed-attack", type=int, help="Attacker seed")
    common.add_argument("--seed-ensemble", type=int, help="Ensemble sampling seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--format", choices=["csv"], help="Output format")
    common.add_argument("--episodes", type=int, help="Episodes per batch")
    common.add_argument("--workers", type=int, help="Concurrent episode workers")
    common.add_argument("--trace", action="store_true", help="Enable detailed tracing output")

    parser = argparse.ArgumentParser(description="Ablated message ensembles: certificates, rollouts and oracle checks")
    sub = parser.add_subparsers(dest="command", required=True)

    certify = sub.add_parser("certify", parents=[common], help="Certificate calculator and feasibility tables")
    certify.add_argument("--n", type=int, required=True, help="Number of agents N")
    certify.add_argument("--c", type=int, help="Number of adversaries C")
    certify.add_argument("--k", type=int, help="Ablation size k")

    sweep = sub.add_parser("sweep", parents=[common], help="Clean and attacked returns over k, D or C")
    sweep.add_argument("--var", dest="sweep_var", choices=["k", "D", "C"], help="Swept variable")
    sweep.add_argument("--values", type=int, nargs="+", help="Values to sweep")

    simulate = sub.add_parser("simulate", parents=[common], help="Roll out episodes with certificates")
    simulate.add_argument("--env", choices=["grid_food", "demand_share"], help="Environment")
    simulate.add_argument("--attack", choices=["none", "random", "perm", "swap", "flip", "offset", "greedy"])
    simulate.add_argument("--k", type=int, help="Ablation size k")
    simulate.add_argument("--d", type=int, help="Partial ensemble size D")

    verify = sub.add_parser("verify", parents=[common], help="Brute-force oracle checks of the certificates")
    verify.add_argument("--mode", choices=["full", "partial"], help="Oracle or partial-sample checks")
    verify.add_argument("--seeds", type=int, help="Monte Carlo seeds for partial mode")

    detect = sub.add_parser("detect", parents=[common], help="Action-bias scores and re-certification")
    detect.add_argument("--flag", type=int, help="Channels to flag")
    return parser


def configure_logging(trace: bool):
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if trace else "WARNING")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.trace)

    try:
        config = apply_overrides(load_config(args.config), args)
        runner = ExperimentRunner(config, trace=args.trace)
        if args.command == "certify":
            runner.certify(args.n, args.c, args.k)
        elif args.command == "sweep":
            runner.sweep()
        elif args.command == "simulate":
            runner.simulate()
        elif args.command == "verify":
            return runner.verify()
        elif args.command == "detect":
            runner.detect()
    except AMEError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

    """
    To Run:
    python main.py certify --n 10
    python main.py certify --n 30 --c 3
    python main.py sweep --config configs/sweep_k.yaml --trace
    python main.py simulate --config configs/default.yaml --attack greedy
    python main.py verify --config configs/verify_small.yaml
    python main.py verify --config configs/verify_small.yaml --mode partial --seeds 10000
    python main.py detect --config configs/detect.yaml
    --config:  is not required;  YAML file, flags win over it
    --out:     is not required;  defaults to results/
    --trace:   is not required;  logs progress and every ensemble decision
    """
