"""
Results Database for the Social Navigation Lab
Evaluation runs, per-episode navigation metrics and classified encounters in SQLite
"""

import json
import logging
import sqlite3
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

from sn_encounters import Encounter
from sn_navmetrics import EpisodeMetrics

logger = logging.getLogger(__name__)

SCHEMA_SQL = """
CREATE TABLE IF NOT EXISTS runs (
    run_id INTEGER PRIMARY KEY AUTOINCREMENT,
    label TEXT NOT NULL,
    log_dir TEXT,
    policy TEXT,
    created_at TEXT NOT NULL,
    config_json TEXT
);

CREATE TABLE IF NOT EXISTS episodes (
    episode_id INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id INTEGER NOT NULL REFERENCES runs(run_id),
    log_path TEXT,
    map_id TEXT,
    seed INTEGER,
    success INTEGER NOT NULL,
    spl REAL NOT NULL,
    human_collision INTEGER NOT NULL,
    timeout INTEGER NOT NULL,
    path_length REAL NOT NULL,
    shortest_length REAL NOT NULL,
    t_end INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS encounters (
    encounter_id INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id INTEGER NOT NULL REFERENCES runs(run_id),
    log_index INTEGER NOT NULL,
    pedestrian_id INTEGER NOT NULL,
    t1 INTEGER NOT NULL,
    t2 INTEGER NOT NULL,
    class TEXT NOT NULL,
    collided INTEGER NOT NULL
);

CREATE INDEX IF NOT EXISTS idx_episodes_run ON episodes(run_id);
CREATE INDEX IF NOT EXISTS idx_encounters_run_class ON encounters(run_id, class);
"""


class ResultsDatabase:
    """Manages the evaluation results store"""

    def __init__(self, db_path: str = "results.db"):
        self.db_path = db_path
        self.connection: Optional[sqlite3.Connection] = None
        self.logger = logging.getLogger(__name__)
        self.initialize_database()

    def initialize_database(self) -> None:
        try:
            self.connection = sqlite3.connect(self.db_path)
            self.connection.row_factory = sqlite3.Row
            self.connection.executescript(SCHEMA_SQL)
            self.connection.commit()
        except sqlite3.Error as e:
            self.logger.error(f"Database initialization error: {e}")
            raise

    def execute_query(self, query: str, params: tuple = ()) -> List[Dict[str, Any]]:
        """Execute a SELECT query and return rows as dictionaries"""
        cursor = self.connection.execute(query, params)
        return [dict(row) for row in cursor.fetchall()]

    def execute_update(self, query: str, params: tuple = ()) -> int:
        try:
            cursor = self.connection.execute(query, params)
            self.connection.commit()
            return cursor.lastrowid
        except sqlite3.Error as e:
            self.logger.error(f"Update execution error: {e}")
            self.connection.rollback()
            raise

    def add_run(self, label: str, log_dir: Optional[str] = None, policy: Optional[str] = None,
                config: Optional[Dict[str, Any]] = None) -> int:
        return self.execute_update(
            "INSERT INTO runs (label, log_dir, policy, created_at, config_json) VALUES (?, ?, ?, ?, ?)",
            (label, log_dir, policy, datetime.now().isoformat(timespec='seconds'),
             json.dumps(config, sort_keys=True) if config is not None else None))

    def add_episodes(self, run_id: int, metrics: Sequence[EpisodeMetrics],
                     sources: Optional[Sequence[Dict[str, Any]]] = None) -> int:
        sources = sources or [{} for _ in metrics]
        rows = [(run_id, src.get('log_path'), src.get('map_id'), src.get('seed'), int(m.success), m.spl,
                 int(m.human_collision), int(m.timeout), m.path_length, m.shortest_length, m.t_end)
                for m, src in zip(metrics, sources)]
        with self.connection:
            self.connection.executemany(
                "INSERT INTO episodes (run_id, log_path, map_id, seed, success, spl, human_collision, "
                "timeout, path_length, shortest_length, t_end) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                rows)
        return len(rows)

    def add_encounters(self, run_id: int, encounters: Sequence[Encounter]) -> int:
        rows = [(run_id, e.log_index, e.pedestrian_id, e.t1, e.t2, e.clazz.value if e.clazz else 'Other',
                 int(e.collided)) for e in encounters]
        with self.connection:
            self.connection.executemany(
                "INSERT INTO encounters (run_id, log_index, pedestrian_id, t1, t2, class, collided) "
                "VALUES (?, ?, ?, ?, ?, ?, ?)", rows)
        return len(rows)

    def get_runs(self) -> List[Dict[str, Any]]:
        return self.execute_query("SELECT * FROM runs ORDER BY run_id")

    def run_summary(self, run_id: int) -> Dict[str, Any]:
        """Success, SPL, collision and timeout rates for one run, aggregated in SQL"""
        rows = self.execute_query("""
            SELECT COUNT(*) AS n_episodes,
                   COALESCE(100.0 * AVG(success), 0.0) AS success_pct,
                   COALESCE(AVG(spl), 0.0) AS spl,
                   COALESCE(100.0 * AVG(human_collision), 0.0) AS h_collision_pct,
                   COALESCE(100.0 * AVG(timeout), 0.0) AS timeout_pct
            FROM episodes WHERE run_id = ?
        """, (run_id,))
        return rows[0]

    def class_statistics(self, run_id: Optional[int] = None) -> Dict[str, Dict[str, Any]]:
        """Per-class encounter count, collided count and ESR (percent)"""
        where, params = ("WHERE run_id = ?", (run_id,)) if run_id is not None else ("", ())
        rows = self.execute_query(f"""
            SELECT class, COUNT(*) AS count, SUM(collided) AS collided
            FROM encounters {where}
            GROUP BY class ORDER BY class
        """, params)
        stats = {}
        for row in rows:
            count, collided = row['count'], row['collided'] or 0
            stats[row['class']] = {'count': count, 'collided': collided,
                                   'esr': 100.0 * (count - collided) / count if count else 0.0}
        return stats

    def close(self) -> None:
        if self.connection:
            self.connection.close()
            self.connection = None
