from bench import MODES, bench_scaling
from config import parse_ints
from network import ModelConfig

from commands.common import add_command, add_common, load_flat, split_flat


def run_bench(args) -> None:
    model_values, _ = split_flat(load_flat(args))
    cfg = ModelConfig.from_flat(model_values)
    report = bench_scaling(cfg, parse_ints(args.points), args.repeats, args.seed, args.mode, record=True)
    print(report.as_table())


def setup(subparsers) -> None:
    parser = add_command(subparsers, "bench", "Measure encoder latency against point or token count.", run_bench)
    parser.add_argument("--points", default="1024,2048,4096,8192",
                        help="comma-separated counts (raw points, or tokens with --mode tokens)")
    parser.add_argument("--repeats", type=int, default=3, help="timed runs per count; the median is reported")
    parser.add_argument("--mode", choices=MODES, default="points", help="what the counts measure")
    add_common(parser)
