import checkpoint_manager
import database as db
from errors import ArgumentError

from commands.common import add_command


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.6g}"


def _list_runs() -> None:
    rows = db.list_runs()
    if not rows:
        print("[runs] no runs recorded")
        return
    for r in rows:
        print(f"{r['name']} task={r['task']} config={r['config_hash']} epochs={r['epoch_count']} "
              f"best_test_oa={_fmt(r['best_test_oa'])} created={r['created_at']}")
    print(f"[runs] {len(rows)} run(s) in {db.DB_PATH}")


def _show_run(name: str) -> None:
    run = db.get_run(name)
    if run is None:
        raise ArgumentError(f"no run named '{name}'")
    print(f"run={run['name']} task={run['task']} config={run['config_hash']} created={run['created_at']}")
    for e in db.get_epochs(run["id"]):
        print(f"  epoch={e['epoch']} lr={_fmt(e['lr'])} loss={_fmt(e['loss'])} oa={_fmt(e['oa'])} "
              f"macc={_fmt(e['macc'])} test_oa={_fmt(e['test_oa'])}")

    for row in db.list_run_checkpoints(run["id"]):
        live = checkpoint_manager.get_registered_checkpoint(row["path"])
        if live is None:
            print(f"  checkpoint={row['path']} missing on disk, dropped from the registry")
            continue
        print(f"  checkpoint={live['path']} epoch={live['epoch']} score={_fmt(live['score'])} bytes={live['file_size']}")
        for rep in db.list_reports(live["path"]):
            print(f"    report split={rep['split']} oa={_fmt(rep['oa'])} macc={_fmt(rep['macc'])} "
                  f"miou={_fmt(rep['miou'])} created={rep['created_at']}")

    for b in db.list_bench(run["config_hash"]):
        print(f"  bench {b['mode']}={b['count']} median_s={_fmt(b['median_s'])} repeats={b['repeats']}")


def show_runs(args) -> None:
    db.init_db()
    if args.name is None:
        _list_runs()
    else:
        _show_run(args.name)


def setup(subparsers) -> None:
    parser = add_command(subparsers, "runs", "List recorded runs, or one run's epochs, checkpoints, reports and benchmarks.",
                         show_runs)
    parser.add_argument("--name", default=None, help="run to show in detail; lists every run when omitted")
