# -*- coding: utf-8 -*-
# rpsft - rotation-preserving fine-tuning toolkit
# (C) 2026 The rpsft authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""rpsft command line interface."""

from __future__ import absolute_import, annotations

import argparse
import logging
import sys
from typing import Sequence, TextIO

from . import __version__
from .checkpoint import describe
from .config import ExperimentConfig, parse_config
from .error import (CheckpointFormatError, ConfigError, IntegrationError,
                    NumericalError, ParameterError, PresetError,
                    TrainingError)
from .presets import (DIAGNOSTICS, PRESETS, run_gradflow, run_pipeline,
                      run_preset, run_rankselect, run_train)

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def exit_code(exc: BaseException) -> int:
    """Map an exception to the process exit status."""
    if isinstance(exc, PresetError):
        return exit_code(exc.cause)
    if isinstance(exc, (ConfigError, ParameterError)):
        return EXIT_CONFIG
    if isinstance(exc, (NumericalError, TrainingError, IntegrationError,
                        ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (OSError, CheckpointFormatError)):
        return EXIT_IO
    return EXIT_CONFIG


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH",
                        help="key = value configuration file")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seed", metavar="U64", help="random seed")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append",
                        default=[], dest="overrides",
                        help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        prog="rpsft",
        description="Rotation-preserving fine-tuning experiments.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log at DEBUG level")
    parser.add_argument("--trace", metavar="FILE",
                        help="also write log records to FILE")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, text in (
            ("train", "pretrain on task A and fine-tune on task B"),
            ("gradflow", "integrate the regularized gradient flow"),
            ("rankselect", "rank-selection curves of a seeded profile"),
    ):
        _common(commands.add_parser(name, help=text))

    diag = commands.add_parser("diag", help="run one diagnostic")
    diag.add_argument("kind", choices=sorted(DIAGNOSTICS))
    _common(diag)

    preset = commands.add_parser("preset", help="run a preset pipeline")
    preset.add_argument("name", nargs="?", help="preset name")
    preset.add_argument("--preset", dest="preset_flag", metavar="NAME",
                        help="preset name (alternative to the positional)")
    _common(preset)

    inspect = commands.add_parser("inspect", help="list checkpoint tensors")
    inspect.add_argument("path", help="checkpoint file")
    return parser


def configure_logging(verbose: bool, trace: str | None,
                      stream: TextIO | None = None):
    """Configure the root logger once for the process."""
    handlers: list[logging.Handler] = [logging.StreamHandler(stream)]
    if trace:
        handlers.append(logging.FileHandler(trace, encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then --set overrides, then --out/--seed/--preset."""
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    name = getattr(args, "name", None) or getattr(args, "preset_flag", None)
    if name:
        overrides.append(f"preset={name}")
    return parse_config(args.config, overrides)


def _inspect(path: str, stdout: TextIO):
    for name, rows, cols, norm in describe(path):
        stdout.write(f"{name}\t{rows}x{cols}\t{norm:.17g}\n")


def run(args: argparse.Namespace, stdout: TextIO) -> int:
    """Execute a parsed command line."""
    if args.command == "inspect":
        _inspect(args.path, stdout)
        return EXIT_OK

    config = resolve_config(args)
    if args.command == "preset":
        if not config["preset"]:
            raise ParameterError(
                "no preset given; valid presets: "
                + ", ".join(sorted(PRESETS)), "preset",
            )
        result = run_preset(config["preset"], config)
    elif args.command == "diag":
        result = run_pipeline(f"diag-{args.kind}", DIAGNOSTICS[args.kind],
                              config)
    else:
        function = {"train": run_train, "gradflow": run_gradflow,
                    "rankselect": run_rankselect}[args.command]
        result = run_pipeline(args.command, function, config)
    for filename in result.files:
        stdout.write(f"{filename}\n")
    return EXIT_OK


def main(argv: Sequence[str] | None = None,
         stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    """Console entry point; returns the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.verbose, args.trace, stderr)
        return run(args, stdout)
    except (ConfigError, ParameterError, NumericalError, TrainingError,
            IntegrationError, CheckpointFormatError, PresetError,
            OSError) as exc:
        _LOGGER.debug("command failed", exc_info=True)
        stderr.write(f"rpsft: error: {exc}\n")
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
