from dataset import KINDS, gen_synthetic, save_dataset

from commands.common import add_command


def gen(args) -> None:
    ds = gen_synthetic(args.kind, args.n, args.points, args.seed, args.test_fraction)
    out = save_dataset(ds, args.out, args.format)
    print(f"[data] wrote {len(ds)} samples ({ds.train_ids.size} train, {ds.test_ids.size} test) -> {out}")


def setup(subparsers) -> None:
    parser = add_command(subparsers, "gen", "Generate a synthetic toy dataset directory.", gen)
    parser.add_argument("--kind", choices=sorted(KINDS), default="cls3", help="cls3: sphere/cube/torus; seg2: cube with pole")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--n", type=int, default=300, help="number of samples")
    parser.add_argument("--points", type=int, default=1024, help="points per cloud")
    parser.add_argument("--seed", type=int, default=0, help="generator seed")
    parser.add_argument("--test-fraction", type=float, default=0.2, help="share of samples held out")
    parser.add_argument("--format", choices=("binary", "text"), default="binary", help="cloud file format")
