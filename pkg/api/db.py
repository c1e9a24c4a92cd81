import logging
import sqlite3

from app_state import load_settings

logger = logging.getLogger(__name__)


def get_db() -> sqlite3.Connection:
    conn = sqlite3.connect(load_settings().db_path)
    conn.row_factory = sqlite3.Row
    return conn


def init_db() -> None:
    load_settings().db_path.parent.mkdir(parents=True, exist_ok=True)
    conn = get_db()
    try:
        conn.executescript(
            """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                name TEXT NOT NULL,
                workflow TEXT NOT NULL,
                status TEXT NOT NULL,
                duration_ms INTEGER,
                out_dir TEXT,
                created_at DATETIME DEFAULT CURRENT_TIMESTAMP
            );
            """
        )
        conn.commit()
    finally:
        conn.close()


def record_run(name: str, workflow: str, status: str, duration_ms: int, out_dir: str) -> None:
    conn = get_db()
    try:
        conn.execute(
            "INSERT INTO runs (name, workflow, status, duration_ms, out_dir) VALUES (?, ?, ?, ?, ?)",
            (name, workflow, status, duration_ms, out_dir),
        )
        conn.commit()
    finally:
        conn.close()
