"""
Command line for the cavity laboratory

    python launcher.py evolve --seed a --config default.json --out runs/a
    python launcher.py revival-scan --seed f --lambdas 0:0.05:0.6
    python launcher.py reproduce-figure 2
    python launcher.py --from-manifest runs/a/manifest.json --out scratch

Exit status: 0 on success, 2 on configuration errors, 3 when a numerical guard
trips, 1 for other analysis failures.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import resolve_config, setup_logging
from .errors import ConfigError, GravicavError
from .laboratory import FIGURE_SEEDS, CavityLaboratory


def parse_lambdas(text: str) -> List[float]:
    """
    Parse "start:step:stop" (stop included) or a comma-separated list

    Args:
        text: Lambda list or start:step:stop range

    Returns:
        Sorted list of lambda values
    """
    try:
        parts = [float(v) for v in text.split(":")] if ":" in text else None
        values = None if parts else [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse lambdas {text!r}: {exc}") from exc
    if parts is not None:
        if len(parts) != 3:
            raise ConfigError(f"lambda range must be start:step:stop, got {text!r}")
        start, step, stop = parts
        if not step > 0.0 or stop < start:
            raise ConfigError(f"lambda range needs step > 0 and stop >= start, got {text!r}")
        count = int(round((stop - start) / step)) + 1
        values = [round(start + k * step, 12) for k in range(count)]
    if not values:
        raise ConfigError("empty lambda list")
    return sorted(values)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one configuration value (repeatable)")
    common.add_argument("--profile", default="default", help="Named profile: default or smoke")
    common.add_argument("--out", help="Output directory (default: outputs/<subcommand>)")
    common.add_argument("--workers", type=int, help="Worker threads, capped by GRAVICAV_THREADS")
    common.add_argument("--quiet", action="store_true", help="Only warnings and errors")

    parser = argparse.ArgumentParser(prog="gravicav", description="Driven gravitational cavity laboratory",
                                     parents=[common])
    parser.add_argument("--from-manifest",
                        help="Re-run the command recorded in a manifest.json (into <run>_replay unless --out is given)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("poincare", parents=[common], help="Stroboscopic Poincare section")
    p.add_argument("--seed", action="append", help="Seed a-f or z,p (repeatable; default: 25-seed grid)")

    p = sub.add_parser("lyapunov", parents=[common], help="Maximal Lyapunov exponents")
    p.add_argument("--seed", action="append", help="Seed a-f or z,p (repeatable; default: 25-seed grid)")

    p = sub.add_parser("evolve", parents=[common], help="Propagate a wavepacket with snapshots")
    p.add_argument("--seed", required=True, help="Seed a-f or z,p")

    p = sub.add_parser("autocorr", parents=[common], help="C^2 series and revival report")
    p.add_argument("--seed", required=True, help="Seed a-f or z,p")

    p = sub.add_parser("revival-scan", parents=[common], help="Revivals against modulation strength")
    p.add_argument("--seed", default="f", help="Seed a-f or z,p")
    p.add_argument("--lambdas", help="start:step:stop or comma list (default: revival.lambdas)")

    p = sub.add_parser("floquet", parents=[common], help="Quasi-energy spectrum and ladders")
    p.add_argument("--seed", default="a", help="Island center a-f or z,p")

    p = sub.add_parser("reproduce-figure", parents=[common], help="Regenerate a figure layout")
    p.add_argument("number", type=int, choices=sorted(FIGURE_SEEDS))
    return parser


def _dispatch(lab: CavityLaboratory, args: argparse.Namespace):
    if args.command == "poincare":
        return lab.run_poincare(args.seed)
    if args.command == "lyapunov":
        return lab.run_lyapunov(args.seed)
    if args.command == "evolve":
        return lab.run_evolve(args.seed)
    if args.command == "autocorr":
        return lab.run_autocorr(args.seed)
    if args.command == "revival-scan":
        lambdas = None if args.lambdas is None else parse_lambdas(args.lambdas)
        return lab.run_revival_scan(args.seed, lambdas)
    if args.command == "floquet":
        return lab.run_floquet(args.seed)
    if args.command == "reproduce-figure":
        return lab.reproduce_figure(args.number)
    raise ConfigError(f"unknown subcommand {args.command!r}")


def _load_manifest(path: str) -> Dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


def replay_directory(run_dir: Path) -> Path:
    """First unused sibling <run>_replay, <run>_replay2, ... of a recorded run"""
    run_dir = Path(run_dir).resolve()
    candidate = run_dir.with_name(f"{run_dir.name}_replay")
    suffix = 2
    while candidate.exists():
        candidate = run_dir.with_name(f"{run_dir.name}_replay{suffix}")
        suffix += 1
    return candidate


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Execute one command

    Args:
        argv: Arguments without the program name, defaults to sys.argv[1:]

    Returns:
        Exit status
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        workers = args.workers
        quiet = args.quiet
        if args.from_manifest:
            manifest = _load_manifest(args.from_manifest)
            command = list(manifest["command"])
            replay = parser.parse_args(command)
            config = resolve_config(document=manifest["config"])
            # a replay never writes into the run it reproduces unless asked to
            out = args.out or str(replay_directory(Path(args.from_manifest).parent))
            workers = manifest.get("workers", workers) if workers is None else workers
            args = replay
            quiet = quiet or replay.quiet
        else:
            if args.command is None:
                parser.print_usage(sys.stderr)
                print("error: a subcommand or --from-manifest is required", file=sys.stderr)
                return 2
            command = argv
            config = resolve_config(args.config, args.overrides, args.profile)
            out = args.out or str(Path("outputs") / args.command)

        logging_config = dict(config["logging"])
        if quiet:
            logging_config.update(log_level="WARNING", verbose=False)
        setup_logging(logging_config)
        lab = CavityLaboratory(config, out, command=command, workers=workers,
                               verbose=logging_config["verbose"])
        _dispatch(lab, args)
        lab.write_manifest()
        return 0
    except GravicavError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
