"""Command-line entry point: ``motioncrf {infer,synth,learn,eval}``."""

import argparse
import asyncio
import logging
import os
import sys
from typing import Dict, Optional, Sequence

from dotenv import load_dotenv

from .handlers.registry import get_command_handler

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _key_value(text: str) -> tuple:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(prog="motioncrf", description="Joint object and motion labelling with a dense CRF.")
    parser.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default=None,
        help="logging level (default: $MOTIONCRF_LOG_LEVEL or WARNING)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    infer = commands.add_parser("infer", help="run the joint CRF on the inputs of a config file")
    infer.add_argument("config", help="key=value pipeline config")
    infer.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[], metavar="KEY=VALUE")
    infer.add_argument("--output-dir", default=None, help="override output_dir")
    infer.add_argument("--render", action="store_true", help="also write palette PNG renders")

    synth = commands.add_parser("synth", help="write a synthetic moving-box scene")
    synth.add_argument("output_dir")
    synth.add_argument("--height", type=int)
    synth.add_argument("--width", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--label-noise", type=float)
    synth.add_argument("--noise-block", type=int)
    synth.add_argument("--unary-confidence", type=float)
    synth.add_argument("--flow-noise", type=float)
    synth.add_argument("--texture-noise", type=float)
    synth.add_argument("--box-velocity", type=float, nargs=3, metavar=("VX", "VY", "VZ"))

    learn = commands.add_parser("learn", help="learn the class-motion correlation matrix")
    learn.add_argument("--mode", choices=("boost", "cooccurrence"), default="boost")
    learn.add_argument("--out", dest="output", required=True, help="correlation CSV to write")
    learn.add_argument("--training", help="training CSV: feature columns, object label, motion label")
    learn.add_argument("--gt-object", action="append", default=[], help="object label map (repeatable)")
    learn.add_argument("--gt-motion", action="append", default=[], help="motion label map (repeatable)")
    learn.add_argument("--features", action="append", default=[], help="per-pixel feature tensor (repeatable)")
    learn.add_argument("--labels", help="labels config with object_labels")
    learn.add_argument("--rounds", type=int, default=10)
    learn.add_argument("--seed", type=int, default=0)
    learn.add_argument("--block", type=int, default=1, help="pool features over square blocks")
    learn.add_argument("--w-corr", type=float, default=1.0)
    learn.add_argument("--model-out", dest="model_output", help="boosted model as JSON")

    evaluate = commands.add_parser("eval", help="score label maps by intersection over union")
    evaluate.add_argument("--pred", dest="pred_dir", required=True)
    evaluate.add_argument("--gt", dest="gt_dir", required=True)
    evaluate.add_argument("--labels", help="labels config with object_labels")
    evaluate.add_argument("--out", dest="output_dir", required=True)
    return parser


def configure_logging(level: Optional[str]) -> None:
    """Configure the root logger once for the process."""
    name = (level or os.environ.get("MOTIONCRF_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_request(args: argparse.Namespace) -> Dict[str, object]:
    """Turn parsed arguments into a handler request."""
    request = {key: value for key, value in vars(args).items() if key not in ("command", "log_level")}
    if args.command == "infer":
        overrides = dict(request.pop("overrides"))
        output_dir = request.pop("output_dir")
        if output_dir is not None:
            overrides["output_dir"] = os.path.abspath(output_dir)
        request["overrides"] = overrides
    if args.command == "synth" and request.get("box_velocity") is not None:
        request["box_velocity"] = tuple(request["box_velocity"])
    return request


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    handler = get_command_handler(args.command)
    if handler is None:
        sys.stderr.write(f"motioncrf: unknown command {args.command!r}\n")
        return 2
    response = asyncio.run(handler.process_request(build_request(args)))
    stream = sys.stdout if response["exit_code"] == 0 else sys.stderr
    stream.write(response["message"] + "\n")
    return int(response["exit_code"])


def run() -> None:
    """Run the console script and exit with its code."""
    sys.exit(main())
