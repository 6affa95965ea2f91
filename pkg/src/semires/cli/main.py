from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from ..domain.constants import EXIT_ERROR, EXIT_OK, EXPERIMENT_CHOICES
from ..errors import SemiresError
from ..experiments.runner import run
from ..experiments.settings import ExperimentConfig, load_config, validate
from ..logging import get_logger, set_level

LOG = get_logger("cli-main")

_HELP = {
    "classify": "Find the critical components of V0 and predict the resolvent law.",
    "sweep": "Measure ||chi R(z) chi|| over a range of h and fit the exponent.",
    "quasimode": "Build a well quasimode and certify exponential resolvent blowup.",
    "glue": "Compare the global cutoff norm with per-component surgery norms.",
    "billiard": "Mode-by-mode nonconcentration scan for a rectangle with outward wings.",
    "gevrey": "Check the 0-Gevrey growth of a warping function's derivatives.",
}


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="Experiment TOML file")
    p.add_argument("--out", help="Output directory (default: [output] dir, SEMIRES_OUTPUT_ROOT, or var/runs/<kind>)")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--h-points", type=int, help="Re-space the configured h range with this many points")
    p.add_argument("--quiet", action="store_true", help="Only log warnings and errors")


def _load(ns: argparse.Namespace, kind: Optional[str]) -> ExperimentConfig:
    cfg = load_config(ns.config)
    return cfg.with_overrides(kind=kind, seed=ns.seed, h_points=getattr(ns, "h_points", None), output_dir=getattr(ns, "out", None))


def _handle_kind(kind: Optional[str]):
    def handler(ns: argparse.Namespace) -> int:
        cfg = _load(ns, kind)
        if cfg.kind not in EXPERIMENT_CHOICES:
            LOG.error(f"{ns.config}: kind: must be one of {', '.join(EXPERIMENT_CHOICES)}, got {cfg.kind!r}")
            return EXIT_ERROR
        LOG.info(f"Running '{cfg.kind}' from {ns.config} (seed {cfg.seed})")
        return run(cfg)

    return handler


def _handle_validate(ns: argparse.Namespace) -> int:
    cfg = load_config(ns.config)
    diagnostics = validate(cfg)
    for d in diagnostics:
        print(d.format(ns.config), file=sys.stderr)
    if diagnostics:
        LOG.error(f"{len(diagnostics)} problem(s) in {ns.config}")
        return EXIT_ERROR
    LOG.info(f"{ns.config}: ok ({cfg.kind})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semires",
        description="Semiclassical resolvent estimates and trapping analysis for warped products.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    for kind in EXPERIMENT_CHOICES:
        p = subparsers.add_parser(kind, help=_HELP[kind])
        _add_run_args(p)
        p.set_defaults(handler=_handle_kind(kind))

    run_cmd = subparsers.add_parser("run", help="Run whichever experiment the config's `kind` names.")
    _add_run_args(run_cmd)
    run_cmd.set_defaults(handler=_handle_kind(None))

    val = subparsers.add_parser("validate", help="Report every problem in a config without running it.")
    val.add_argument("--config", required=True)
    val.add_argument("--quiet", action="store_true")
    val.set_defaults(handler=_handle_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    provided = list(argv) if argv is not None else sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(provided)
    if args.quiet:
        set_level("WARNING")
    LOG.info(f"CLI invoked with arguments: {provided}")
    try:
        code = args.handler(args)
    except SemiresError as e:
        LOG.error(str(e))
        code = EXIT_ERROR
    except Exception as e:  # noqa: BLE001
        LOG.error(f"Unexpected {type(e).__name__}: {e}")
        LOG.debug("Traceback:", exc_info=True)
        code = EXIT_ERROR
    LOG.info(f"Subcommand '{args.command}' finished with exit code {code}.")
    return code


if __name__ == "__main__":
    sys.exit(main())
