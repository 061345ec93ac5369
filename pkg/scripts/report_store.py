#!/usr/bin/env python3
"""
report_store module - DuckDB persistence of run reports and batch trial results
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import duckdb
import numpy as np
import xxhash

logger = logging.getLogger(__name__)

# Database configuration
STORE_ENV = "MVGAMMA_STORE"
REPORT_TABLE = "run_reports"
TRIAL_TABLE = "trial_results"


def matrix_digest(*arrays) -> str:
    """
    xxh64 hex digest over the shapes and little-endian float64 bytes of the
    given arrays, so the same matrix read from CSV or JSON hashes the same.
    """
    h = xxhash.xxh64()
    for a in arrays:
        arr = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
        h.update(repr(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()


def default_store_path(explicit: Optional[str] = None) -> Optional[str]:
    """--store value if given, else MVGAMMA_STORE, else None (no persistence)"""
    return explicit or os.environ.get(STORE_ENV) or None


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def to_json(value: Any) -> str:
    return json.dumps(value, default=_json_default, sort_keys=True)


def create_table_if_not_exists(conn: duckdb.DuckDBPyConnection) -> None:
    """Create the report tables and indexes if they don't exist"""
    conn.execute(f"""
        CREATE TABLE IF NOT EXISTS {REPORT_TABLE} (
            id INTEGER PRIMARY KEY,
            command VARCHAR NOT NULL,
            input_digest VARCHAR,
            seed BIGINT,
            exit_code INTEGER NOT NULL,
            results VARCHAR NOT NULL,
            wall_time DOUBLE NOT NULL,
            created_at TIMESTAMP DEFAULT current_timestamp
        )
    """)
    conn.execute(f"""
        CREATE TABLE IF NOT EXISTS {TRIAL_TABLE} (
            batch VARCHAR NOT NULL,
            trial INTEGER NOT NULL,
            passed BOOLEAN NOT NULL,
            margin DOUBLE,
            details VARCHAR NOT NULL
        )
    """)
    conn.execute(f"CREATE INDEX IF NOT EXISTS idx_{REPORT_TABLE}_command ON {REPORT_TABLE} (command)")
    conn.execute(f"CREATE INDEX IF NOT EXISTS idx_{TRIAL_TABLE}_batch ON {TRIAL_TABLE} (batch)")


def get_next_id(conn: duckdb.DuckDBPyConnection) -> int:
    """Get the next report ID (monotonically increasing)"""
    return conn.execute(f"SELECT COALESCE(MAX(id), 0) + 1 FROM {REPORT_TABLE}").fetchone()[0]


class ReportStore:
    """
    Owns one DuckDB connection to a report database file.

    Usable as a context manager; the tables are created on first connect.
    """

    def __init__(self, path: str):
        self.path = str(path)
        self._connection: Optional[duckdb.DuckDBPyConnection] = None

    def get_connection(self) -> duckdb.DuckDBPyConnection:
        if self._connection is None:
            parent = Path(self.path).parent
            if str(parent) and not parent.exists():
                parent.mkdir(parents=True, exist_ok=True)
            self._connection = duckdb.connect(self.path, read_only=False)
            create_table_if_not_exists(self._connection)
        return self._connection

    def close(self) -> None:
        if self._connection is not None:
            self._connection.close()
            self._connection = None

    def __enter__(self) -> "ReportStore":
        self.get_connection()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def append_report(self, command: str, input_digest: Optional[str], seed: Optional[int],
                      exit_code: int, results: Dict, wall_time: float) -> int:
        conn = self.get_connection()
        report_id = get_next_id(conn)
        conn.execute(f"""
            INSERT INTO {REPORT_TABLE}
            (id, command, input_digest, seed, exit_code, results, wall_time)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        """, (report_id, command, input_digest, seed, exit_code, to_json(results), wall_time))
        conn.commit()
        logger.debug("stored report %d for '%s' in %s", report_id, command, self.path)
        return report_id

    def append_trials(self, batch: str, trials: List[Dict]) -> int:
        """
        Insert one row per trial dict (keys: trial, passed, margin, plus details).

        Returns:
            Number of rows inserted
        """
        conn = self.get_connection()
        for t in trials:
            details = {k: v for k, v in t.items() if k not in ("trial", "passed", "margin")}
            conn.execute(f"""
                INSERT INTO {TRIAL_TABLE} (batch, trial, passed, margin, details)
                VALUES (?, ?, ?, ?, ?)
            """, (batch, int(t["trial"]), bool(t["passed"]), t.get("margin"), to_json(details)))
        conn.commit()
        return len(trials)


def load_reports(path: str, command: Optional[str] = None) -> List[Dict]:
    """Read stored run reports back, oldest first"""
    if not Path(path).exists():
        raise FileNotFoundError(f"Report store '{path}' not found.")
    conn = duckdb.connect(str(path), read_only=True)
    try:
        query = f"SELECT id, command, input_digest, seed, exit_code, results, wall_time, created_at FROM {REPORT_TABLE}"
        params: tuple = ()
        if command is not None:
            query += " WHERE command = ?"
            params = (command,)
        rows = conn.execute(query + " ORDER BY id", params).fetchall()
    finally:
        conn.close()
    return [
        {
            "id": r[0],
            "command": r[1],
            "input_digest": r[2],
            "seed": r[3],
            "exit_code": r[4],
            "results": json.loads(r[5]),
            "wall_time": r[6],
            "created_at": str(r[7]),
        }
        for r in rows
    ]


def load_trials(path: str, batch: Optional[str] = None) -> List[Dict]:
    conn = duckdb.connect(str(path), read_only=True)
    try:
        query = f"SELECT batch, trial, passed, margin, details FROM {TRIAL_TABLE}"
        params: tuple = ()
        if batch is not None:
            query += " WHERE batch = ?"
            params = (batch,)
        rows = conn.execute(query + " ORDER BY batch, trial", params).fetchall()
    finally:
        conn.close()
    return [{"batch": r[0], "trial": r[1], "passed": r[2], "margin": r[3], "details": json.loads(r[4])}
            for r in rows]
