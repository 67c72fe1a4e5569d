import json
import sqlite3
import threading
from typing import Optional

import config

DB_PATH = config.RUNS_DB

_local = threading.local()


def _get_conn() -> sqlite3.Connection:
    """Return a thread-local SQLite connection to the run registry."""
    if getattr(_local, "path", None) != str(DB_PATH):
        close_db()
        DB_PATH.parent.mkdir(parents=True, exist_ok=True)
        conn = sqlite3.connect(str(DB_PATH), check_same_thread=False)
        conn.row_factory = sqlite3.Row
        conn.execute("PRAGMA foreign_keys = ON")
        conn.execute("PRAGMA journal_mode = WAL")
        _local.conn = conn
        _local.path = str(DB_PATH)
    return _local.conn


def close_db() -> None:
    conn = getattr(_local, "conn", None)
    if conn is not None:
        conn.close()
    _local.conn = None
    _local.path = None


def init_db() -> None:
    """Create tables on first use."""
    conn = _get_conn()
    conn.executescript("""
        CREATE TABLE IF NOT EXISTS runs (
            id          INTEGER PRIMARY KEY AUTOINCREMENT,
            name        TEXT    NOT NULL UNIQUE,
            task        TEXT    NOT NULL,
            config_hash TEXT    NOT NULL,
            config_json TEXT    NOT NULL,
            created_at  TEXT    NOT NULL DEFAULT (datetime('now'))
        );

        CREATE TABLE IF NOT EXISTS epochs (
            id       INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id   INTEGER NOT NULL REFERENCES runs(id) ON DELETE CASCADE,
            epoch    INTEGER NOT NULL,
            lr       REAL    NOT NULL,
            loss     REAL    NOT NULL,
            oa       REAL    NOT NULL,
            macc     REAL    NOT NULL,
            test_oa  REAL,
            UNIQUE(run_id, epoch)
        );

        CREATE INDEX IF NOT EXISTS idx_epochs_run ON epochs(run_id, epoch);

        CREATE TABLE IF NOT EXISTS reports (
            id          INTEGER PRIMARY KEY AUTOINCREMENT,
            checkpoint  TEXT    NOT NULL,
            split       TEXT    NOT NULL,
            oa          REAL    NOT NULL,
            macc        REAL    NOT NULL,
            miou        REAL    NOT NULL,
            ins_miou    REAL    NOT NULL,
            cat_miou    REAL    NOT NULL,
            created_at  TEXT    NOT NULL DEFAULT (datetime('now'))
        );

        CREATE TABLE IF NOT EXISTS bench_results (
            id          INTEGER PRIMARY KEY AUTOINCREMENT,
            config_hash TEXT    NOT NULL,
            mode        TEXT    NOT NULL,
            count       INTEGER NOT NULL,
            median_s    REAL    NOT NULL,
            repeats     INTEGER NOT NULL,
            param_count INTEGER NOT NULL,
            created_at  TEXT    NOT NULL DEFAULT (datetime('now'))
        );

        CREATE TABLE IF NOT EXISTS checkpoints (
            id          INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id      INTEGER REFERENCES runs(id) ON DELETE SET NULL,
            path        TEXT    NOT NULL UNIQUE,
            epoch       INTEGER NOT NULL,
            score       REAL    NOT NULL,
            file_size   INTEGER DEFAULT 0,
            saved_at    TEXT    NOT NULL DEFAULT (datetime('now'))
        );
    """)
    conn.commit()


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def create_run(name: str, task: str, config_hash: str, config_values: dict) -> int:
    """Insert a run, replacing any earlier run with the same name (its epochs go with it)."""
    conn = _get_conn()
    with conn:
        conn.execute("DELETE FROM runs WHERE name = ?", (name,))
        cur = conn.execute(
            "INSERT INTO runs (name, task, config_hash, config_json) VALUES (?, ?, ?, ?)",
            (name, task, config_hash, json.dumps(config_values, sort_keys=True)),
        )
    return cur.lastrowid


def get_run(name: str) -> Optional[sqlite3.Row]:
    conn = _get_conn()
    return conn.execute("SELECT * FROM runs WHERE name = ?", (name,)).fetchone()


def list_runs() -> list:
    conn = _get_conn()
    return conn.execute(
        "SELECT r.id, r.name, r.task, r.config_hash, r.created_at, "
        "COUNT(e.id) AS epoch_count, MAX(e.test_oa) AS best_test_oa "
        "FROM runs r LEFT JOIN epochs e ON e.run_id = r.id "
        "GROUP BY r.id ORDER BY r.id",
    ).fetchall()


# ---------------------------------------------------------------------------
# Epochs
# ---------------------------------------------------------------------------

def record_epoch(
    run_id: int,
    epoch: int,
    lr: float,
    loss: float,
    oa: float,
    macc: float,
    test_oa: float | None = None,
) -> None:
    conn = _get_conn()
    conn.execute(
        "INSERT OR REPLACE INTO epochs (run_id, epoch, lr, loss, oa, macc, test_oa) "
        "VALUES (?, ?, ?, ?, ?, ?, ?)",
        (run_id, epoch, lr, loss, oa, macc, test_oa),
    )
    conn.commit()


def get_epochs(run_id: int) -> list:
    conn = _get_conn()
    return conn.execute(
        "SELECT * FROM epochs WHERE run_id = ? ORDER BY epoch", (run_id,)
    ).fetchall()


# ---------------------------------------------------------------------------
# Evaluation reports
# ---------------------------------------------------------------------------

def record_report(checkpoint: str, split: str, report) -> int:
    conn = _get_conn()
    cur = conn.execute(
        "INSERT INTO reports (checkpoint, split, oa, macc, miou, ins_miou, cat_miou) "
        "VALUES (?, ?, ?, ?, ?, ?, ?)",
        (checkpoint, split, report.oa, report.macc, report.miou, report.ins_miou, report.cat_miou),
    )
    conn.commit()
    return cur.lastrowid


def list_reports(checkpoint: str) -> list:
    conn = _get_conn()
    return conn.execute(
        "SELECT * FROM reports WHERE checkpoint = ? ORDER BY id", (checkpoint,)
    ).fetchall()


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------

def record_bench(config_hash: str, mode: str, count: int, median_s: float, repeats: int, param_count: int) -> None:
    conn = _get_conn()
    conn.execute(
        "INSERT INTO bench_results (config_hash, mode, count, median_s, repeats, param_count) "
        "VALUES (?, ?, ?, ?, ?, ?)",
        (config_hash, mode, count, median_s, repeats, param_count),
    )
    conn.commit()


def list_bench(config_hash: str) -> list:
    conn = _get_conn()
    return conn.execute(
        "SELECT * FROM bench_results WHERE config_hash = ? ORDER BY mode, count, id",
        (config_hash,),
    ).fetchall()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def upsert_checkpoint(path: str, run_id: int | None, epoch: int, score: float, file_size: int) -> None:
    conn = _get_conn()
    conn.execute(
        "INSERT INTO checkpoints (path, run_id, epoch, score, file_size) "
        "VALUES (?, ?, ?, ?, ?) "
        "ON CONFLICT(path) DO UPDATE SET "
        "run_id=excluded.run_id, epoch=excluded.epoch, score=excluded.score, "
        "file_size=excluded.file_size, saved_at=datetime('now')",
        (path, run_id, epoch, score, file_size),
    )
    conn.commit()


def get_checkpoint(path: str) -> Optional[sqlite3.Row]:
    conn = _get_conn()
    return conn.execute("SELECT * FROM checkpoints WHERE path = ?", (path,)).fetchone()


def list_run_checkpoints(run_id: int) -> list:
    conn = _get_conn()
    return conn.execute(
        "SELECT * FROM checkpoints WHERE run_id = ? ORDER BY id", (run_id,)
    ).fetchall()


def delete_checkpoint(path: str) -> None:
    conn = _get_conn()
    conn.execute("DELETE FROM checkpoints WHERE path = ?", (path,))
    conn.commit()
