"""Command line entry point: simulate, offline, online and study."""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from frozenrb.config import parse_config, settings
from frozenrb.exceptions import ConfigError, FrozenRBError
from frozenrb.schemas import Scheme
from frozenrb.services.study_service import get_study_service

logger = logging.getLogger(__name__)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frozenrb",
        description="Frozen reduced basis approximation of the parameterized Burgers problem.",
    )
    parser.add_argument("--config", type=Path, help="KEY=VALUE configuration file")
    parser.add_argument("--preset", default=None, help=f"named preset (default: {settings.default_preset})")
    parser.add_argument("--seed", type=int, help="seed of the random test parameters")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--nx", type=int, help="override the number of cells in x1")
    parser.add_argument("--ny", type=int, help="override the number of cells in x2")
    parser.add_argument("--workers", type=int, default=None, help="worker processes")
    parser.add_argument("--log-level", default=settings.log_level)

    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="detailed frozen and unfrozen runs")
    simulate.add_argument("--mu", type=float, default=1.5)

    offline = commands.add_parser("offline", help="build reduced bases and interpolation data")
    offline.add_argument("--model", type=Path, help="model directory (default: <out>/model)")

    online = commands.add_parser("online", help="single reduced run")
    online.add_argument("--model", type=Path, help="model directory (default: <out>/model)")
    online.add_argument("--mu", type=float, default=1.5)
    online.add_argument("--n", type=int, help="reduced basis size (default: online_n of the config)")
    online.add_argument("--m", type=int, help="interpolation points (default: online_m of the config)")
    online.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.FROZEN.value, help="reduced scheme (default: frozen)")

    study = commands.add_parser("study", help="error sweep over basis sizes, frozen vs. unfrozen")
    study.add_argument("--model", type=Path, help="model directory (default: <out>/model)")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for key in ("seed", "nx", "ny"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.out is not None:
        overrides["output_dir"] = args.out
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)

    try:
        config = parse_config(args.config, args.preset or settings.default_preset, _overrides(args))
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        return 2

    service = get_study_service(config, args.workers)
    out = Path(config.output_dir)
    model_dir = getattr(args, "model", None) or out / "model"
    logger.info(f"Command '{args.command}' with {config.nx}x{config.ny} grid, output in {out}")

    try:
        if args.command == "simulate":
            service.run_detailed(args.mu, out / f"detailed_mu{args.mu:g}")
        elif args.command == "offline":
            service.run_offline(model_dir)
        elif args.command == "online":
            n = args.n or config.online_n
            m = args.m or (config.online_m if args.n is None else None)
            scheme = Scheme(args.scheme)
            out_dir = out / f"online_{scheme.value}_mu{args.mu:g}_N{n}"
            summary = service.run_online(model_dir, args.mu, n, m, out_dir, scheme)
            logger.info(f"Online summary: {summary}")
        elif args.command == "study":
            service.run_study(model_dir, out / "study")
    except FrozenRBError as e:
        logger.error(f"Error executing command '{args.command}': {str(e)}", exc_info=True)
        return 1

    logger.info(f"Command '{args.command}' completed successfully")
    return 0


if __name__ == "__main__":
    sys.exit(main())
