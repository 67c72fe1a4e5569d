from dataclasses import replace
from pathlib import Path

import numpy as np

import checkpoint_manager
import config
import database as db
from dataset import load_dataset
from network import ModelConfig, count_parameters, param_shapes
from trainer import TrainConfig, evaluate, train

from commands.common import add_command, add_common, check_threads, load_flat, split_flat


def _model_config(dataset, model_values: dict[str, str], task: str | None) -> ModelConfig:
    values = {
        "task": task or dataset.task,
        "num_classes": str(dataset.num_classes),
        "in_feat_dim": str(dataset.in_feat_dim),
        **model_values,
    }
    return ModelConfig.from_flat(values)


def run_train(args) -> None:
    check_threads(args)
    dataset = load_dataset(args.data)
    model_values, train_values = split_flat(load_flat(args))
    model_cfg = _model_config(dataset, model_values, args.task)
    out = Path(args.out) if args.out else checkpoint_manager.default_run_dir(args.run_name)
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = replace(TrainConfig.from_flat(train_values), threads=args.threads, checkpoint=str(out / "best.ckpt"))

    n_params = sum(int(np.prod(s)) for s in param_shapes(model_cfg).values())
    print(f"[train] task={model_cfg.task} classes={model_cfg.num_classes} params={n_params} "
          f"samples={dataset.train_ids.size} epochs={train_cfg.epochs}")
    result = train(dataset, model_cfg, train_cfg, log_path=out / "train.log", run_name=args.run_name or str(out.resolve()))
    last = result.history[-1]
    print(f"[train] done best_epoch={result.best_epoch} final_loss={last.loss:.6g} -> {train_cfg.checkpoint}")


def run_eval(args) -> None:
    check_threads(args)
    cfg, params, meta = checkpoint_manager.load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    report, _ = evaluate(dataset, cfg, params, args.split, args.threads)
    lines = report.as_lines()
    for line in lines:
        print(line)
    report_path = Path(args.report or f"{args.ckpt}.report.txt")
    report_path.write_text("\n".join(lines) + "\n")
    db.init_db()
    db.record_report(str(Path(args.ckpt).resolve()), args.split, report)
    print(f"[eval] params={count_parameters(params)} report -> {report_path}")


def setup(subparsers) -> None:
    parser = add_command(subparsers, "train", "Train a model on a dataset directory.", run_train)
    parser.add_argument("--data", required=True, help="dataset directory with manifest.txt")
    parser.add_argument("--task", choices=("classification", "segmentation"), default=None,
                        help="model task; defaults to the dataset's task")
    parser.add_argument("--out", default=None,
                        help="output directory for best.ckpt and train.log; defaults to the checkpoint dir + run name")
    parser.add_argument("--run-name", default=None, help="name in the run registry; defaults to the output path")
    add_common(parser)

    parser = add_command(subparsers, "eval", "Evaluate a checkpoint on a dataset split.", run_eval)
    parser.add_argument("--data", required=True, help="dataset directory with manifest.txt")
    parser.add_argument("--ckpt", required=True, help="checkpoint file")
    parser.add_argument("--split", choices=("train", "test"), default="test", help="dataset split to score")
    parser.add_argument("--report", default=None, help="report file; defaults to <ckpt>.report.txt")
    parser.add_argument("--threads", type=int, default=config.THREADS, help="worker threads for per-sample work")
