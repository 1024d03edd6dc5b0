"""Command-line driver.

Subcommands::

    pmlde run CONFIG | --preset NAME [--set section.key=value ...]
    pmlde verify [--quick]
    pmlde presets
    pmlde convergence [--quick]
"""

import argparse
import logging
import sys

from . import __version__, config
from .exceptions import ConfigParseError, PmldeError
from .presets import ALIASES, list_presets, load_preset
from .runconfig import load_config
from .simulation import Simulation
from .verification import convergence_in_h, convergence_in_tau, run_verification

logger = logging.getLogger(__name__)

MIN_OBSERVED_ORDER = 1.8


def _parse_set(items):
    overrides = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigParseError(f"--set expects section.key=value, got '{item}'")
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(prog="pmlde", description="Diffuse-interface PML wave simulations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="logging level (default: PMLDE_LOG_LEVEL or WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configuration file or preset")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("config", nargs="?", help="path to a run configuration")
    source.add_argument("--preset", help="name of a shipped configuration")
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    run.add_argument("--output", help="output directory")
    run.add_argument("--steps", type=int, help="stop after this many steps")
    run.add_argument("--restore", metavar="CHECKPOINT", help="continue from a checkpoint directory")
    run.add_argument("--checkpoint", metavar="PATH", help="write a checkpoint when the run ends")

    verify = sub.add_parser("verify", help="run the structural and energy checks")
    verify.add_argument("--quick", action="store_true", help="reduced grids and step counts")

    sub.add_parser("presets", help="list the shipped configurations")

    convergence = sub.add_parser("convergence", help="observed orders in tau and h")
    convergence.add_argument("--quick", action="store_true", help="coarser refinement triples")
    return parser


def _configure_logging(level):
    env = config.load_env_overrides()
    name = (level or env.get("log_level") or config.DEFAULT_LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, name, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ── Commands ─────────────────────────────────────────────────


def cmd_run(args):
    overrides = _parse_set(args.set)
    if args.preset:
        cfg = load_preset(args.preset, overrides=overrides)
    else:
        cfg = load_config(args.config, overrides=overrides)
    sim = Simulation(cfg, output_dir=args.output)
    try:
        if args.restore:
            sim.restore(args.restore)
        ledger = sim.run(steps=args.steps)
        if args.checkpoint:
            sim.checkpoint(args.checkpoint)
    finally:
        sim.close()
    print(f"{cfg.name}: {len(ledger)} steps, t={sim.hierarchy.t:g}, "
          f"max relative energy residual {ledger.max_relative_residual():.3e}")
    return config.EXIT_OK


def cmd_verify(args):
    results = run_verification(quick=args.quick)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name:<36} {result.value:.3e}  <= {result.bound:.1e}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed", file=sys.stderr)
        return config.EXIT_FAILURE
    return config.EXIT_OK


def cmd_presets(args):
    for name, summary in list_presets():
        print(f"{name:<40} {summary}")
    for alias, name in sorted(ALIASES.items()):
        print(f"{alias:<40} alias of {name}")
    return config.EXIT_OK


def cmd_convergence(args):
    if args.quick:
        studies = [convergence_in_tau(n=32, tau=0.2), convergence_in_h(n=16)]
    else:
        studies = [convergence_in_tau(), convergence_in_h()]
    status = config.EXIT_OK
    for study in studies:
        d1, d2 = study.differences
        print(f"{study.kind:<4} {study.parameters}  differences {d1:.3e} {d2:.3e}  order {study.order:.2f}")
        if study.order < MIN_OBSERVED_ORDER:
            status = config.EXIT_FAILURE
    return status


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "presets": cmd_presets,
    "convergence": cmd_convergence,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except PmldeError as exc:
        logger.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
