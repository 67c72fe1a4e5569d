from pathlib import Path

import numpy as np

from autograd import Linear
from checkpoint_manager import load_checkpoint
from cloud_io import load_cloud, save_cloud
from dataset import normalize
from network import ModelConfig, bind, init_params, segment
from spatial import PointCloud
from tokenizer import TokenSet, tokenize

from commands.common import add_command, add_common, load_flat, split_flat


def _fmt(values) -> str:
    return " ".join(f"{v:.9g}" for v in np.asarray(values).reshape(-1).tolist())


def run_segment(args) -> None:
    cfg, params, _ = load_checkpoint(args.ckpt)
    cloud = load_cloud(args.cloud)
    normed, _ = normalize(cloud)
    probs = segment(normed, cfg, bind(params, trainable=False))
    labels = np.argmax(probs.value, axis=1)
    # original coordinates, predicted part per point
    out = save_cloud(args.out, PointCloud(cloud.coords, cloud.feats, labels), "text")
    counts = np.bincount(labels, minlength=cfg.num_classes)
    print(f"[segment] points={len(cloud)} parts={','.join(str(c) for c in counts)} -> {out}")


def dump_tokens(tokens: TokenSet, ks: tuple[int, ...], radius: float) -> list[str]:
    idx, empty = tokens.neighbors.padded(ks[-1])
    feats = tokens.feats.value
    lines = [f"# tokens={len(tokens)} width={tokens.width} scales={','.join(map(str, ks))} radius={radius!r}"]
    for i in range(len(tokens)):
        count = int(tokens.neighbors.counts[i])
        lines.append(f"token {i} centroid={int(tokens.centroid_ids[i])} anchor={_fmt(tokens.anchors[i])} in_ball={count}")
        for k in ks:
            ids = [-1] * k if empty[i] else idx[i, :k].tolist()
            lines.append(f"  k={k} " + " ".join(str(j) for j in ids))
        lines.append(f"  feats {_fmt(feats[i])}")
    return lines


def run_tokenize(args) -> None:
    cloud = load_cloud(args.cloud)
    normed, _ = normalize(cloud)
    model_values, _ = split_flat(load_flat(args))
    cfg = ModelConfig.from_flat({"in_feat_dim": str(cloud.feat_dim), **model_values})
    params = bind(init_params(cfg, seed=args.seed), trainable=False)
    scales = cfg.stage_scales(0)
    tokens = tokenize(normed, scales, Linear.from_mapping(params, "stage0.delta"), seed=cfg.seed)
    out = Path(args.out)
    out.write_text("\n".join(dump_tokens(tokens, scales.ks, scales.radius)) + "\n")
    print(f"[tokenize] tokens={len(tokens)} width={tokens.width} -> {out}")


def setup(subparsers) -> None:
    parser = add_command(subparsers, "segment", "Label every point of a cloud with a segmentation checkpoint.", run_segment)
    parser.add_argument("--cloud", required=True, help="input cloud file (text or binary)")
    parser.add_argument("--ckpt", required=True, help="segmentation checkpoint")
    parser.add_argument("--out", required=True, help="output text cloud with a label column")

    parser = add_command(subparsers, "tokenize", "Dump first-stage centroids, neighbor sets and token features.", run_tokenize)
    parser.add_argument("--cloud", required=True, help="input cloud file (text or binary)")
    parser.add_argument("--out", required=True, help="output dump file")
    add_common(parser)
