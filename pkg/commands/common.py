"""Flags and config handling shared by every command."""
import argparse

import config
from errors import ArgumentError
from network import ModelConfig
from trainer import TrainConfig

FORMATTER = argparse.ArgumentDefaultsHelpFormatter


def add_command(subparsers, name: str, help_text: str, handler) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, help=help_text, description=help_text, formatter_class=FORMATTER)
    parser.set_defaults(handler=handler)
    return parser


def add_common(parser: argparse.ArgumentParser, config_file: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    parser.add_argument("--threads", type=int, default=config.THREADS, help="worker threads for per-sample work")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable; wins over --config")
    if config_file:
        parser.add_argument("--config", default=None, help="flat key=value config file")


def load_flat(args: argparse.Namespace) -> dict[str, str]:
    flat = config.merge_overrides(
        config.read_config_file(getattr(args, "config", None)),
        config.parse_overrides(args.overrides),
    )
    flat.setdefault("seed", str(args.seed))
    return flat


def split_flat(flat: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    """Route flat keys to the model or the training config; `seed` feeds both."""
    model_values, train_values = {}, {}
    for key, value in flat.items():
        if key in ModelConfig.KEYS:
            model_values[key] = value
        if key in TrainConfig.KEYS:
            train_values[key] = value
        if key not in ModelConfig.KEYS and key not in TrainConfig.KEYS:
            raise ArgumentError(f"unknown config key '{key}'")
    return model_values, train_values


def check_threads(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise ArgumentError(f"--threads must be >= 1, got {args.threads}")
