"""
Command-line front end.

    python cli.py simulate    --config exp.ini --out runs/a
    python cli.py reconstruct --out runs/a runs/a/spokes.cspk
    python cli.py baseline    --out runs/a runs/a/spokes.cspk --method grasp --spokes-per-bin 40
    python cli.py evaluate    --out runs/a/metrics.csv runs/a/recon.cspk --truth runs/a/truth.cspk
    python cli.py export      --out runs/a/frame0.png runs/a/recon.cspk --format png
    python cli.py report      runs/a
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from utils.config import load_config_file, quick_config, resolve_config_path
from utils.errors import EXIT_CONFIG, EXIT_OK, CineSpokeError, ConfigError, exit_code_for
from utils.pipeline import (
    EXPORT_FORMATS,
    METRICS_FILE,
    cmd_baseline,
    cmd_evaluate,
    cmd_export,
    cmd_report,
    cmd_reconstruct,
    cmd_simulate,
)

logger = logging.getLogger("cinespoke")


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the config-error code instead of argparse's default."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _window(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("window must be 'lo,hi'")
    if hi <= lo:
        raise argparse.ArgumentTypeError("window needs lo < hi")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config (else $CINESPOKE_CONFIG, else defaults)")
    common.add_argument("--quick", action="store_true",
                        help="small 32x32, 200-spoke settings when no config is given")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--threads", type=int, help="worker pool cap")
    common.add_argument("--out", help="output directory (output file for evaluate/export)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _ArgumentParser(prog="cinespoke", description="Subspace neural reconstruction of radial cine MRI")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    sub.add_parser("simulate", parents=[common], help="simulate spokes and ground truth")

    p = sub.add_parser("reconstruct", parents=[common], help="run the subspace reconstruction")
    p.add_argument("spokes")
    p.add_argument("--skip-init", action="store_true", help="train from random networks")
    p.add_argument("--dump-stages", action="store_true", help="write intermediate stage outputs")

    p = sub.add_parser("baseline", parents=[common], help="binned NUFFT or GRASP reference")
    p.add_argument("spokes")
    p.add_argument("--method", required=True, help="nufft or grasp")
    p.add_argument("--spokes-per-bin", type=int, default=20)

    p = sub.add_parser("evaluate", parents=[common], help="metrics CSV for a reconstruction")
    p.add_argument("recon")
    p.add_argument("--truth")
    p.add_argument("--method", help="label for the report rows (default: file stem)")

    p = sub.add_parser("export", parents=[common], help="write a frame or x-t profile as an image")
    p.add_argument("image")
    p.add_argument("--format", choices=EXPORT_FORMATS, default="png")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--window", type=_window, help="magnitude window 'lo,hi' (default 0,max)")
    p.add_argument("--xt-row", type=int, help="export the x-t profile of this row instead of a frame")

    p = sub.add_parser("report", parents=[common], help="HTML figures, Excel and PDF reports for a run directory")
    p.add_argument("run_dir")
    return parser


def _load(args: argparse.Namespace):
    path = resolve_config_path(args.config)
    cfg = quick_config() if args.quick and path is None else load_config_file(path)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None:
        cfg.run.threads = args.threads
    if args.out is not None and args.command in ("simulate", "reconstruct", "baseline"):
        cfg.run.output_dir = args.out
    cfg.validate()
    return cfg


def run(args: argparse.Namespace) -> None:
    if args.command == "export":
        out = Path(args.out) if args.out else Path(args.image).with_suffix(f".{args.format}")
        cmd_export(Path(args.image), args.format, out, args.frame, args.window, args.xt_row)
        return

    cfg = _load(args)
    out_dir = Path(cfg.run.output_dir)
    if args.command == "simulate":
        cmd_simulate(cfg, out_dir)
    elif args.command == "reconstruct":
        cmd_reconstruct(cfg, Path(args.spokes), out_dir, skip_init=args.skip_init,
                        dump_stages=args.dump_stages)
    elif args.command == "baseline":
        if args.spokes_per_bin < 1:
            raise ConfigError("spokes_per_bin", "must be at least 1")
        cmd_baseline(cfg, Path(args.spokes), args.method, args.spokes_per_bin, out_dir)
    elif args.command == "evaluate":
        out = Path(args.out) if args.out else Path(args.recon).parent / METRICS_FILE
        report = cmd_evaluate(cfg, Path(args.recon), Path(args.truth) if args.truth else None, out,
                              method=args.method)
        print(report.to_frame().to_string(index=False))
    elif args.command == "report":
        cmd_report(cfg, Path(args.run_dir), Path(args.out) if args.out else None)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except CineSpokeError as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
