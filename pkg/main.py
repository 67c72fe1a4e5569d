import argparse
import importlib
import sys

from errors import CloudAttentionError, NumericError, ParseError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

EXTENSIONS = (
    "commands.data",
    "commands.train",
    "commands.inference",
    "commands.bench",
    "commands.runs",
)


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to our exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"[error] {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> CliParser:
    parser = CliParser(prog="main.py", description="Hierarchical point-cloud attention: data, training, evaluation and benchmarks.")
    subparsers = parser.add_subparsers(dest="command", metavar="command", required=True)
    for name in EXTENSIONS:
        importlib.import_module(name).setup(subparsers)
    return parser


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (ParseError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.handler(args)
    except CloudAttentionError as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        print(f"[error] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
