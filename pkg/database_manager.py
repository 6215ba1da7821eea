"""
Run registry
Records the manifest of every CLI run in SQLite
"""

import sqlite3
import os
import json
from typing import Dict, Optional
from config import DATABASE_URL


class RunRegistry:
    def __init__(self, db_path: str = DATABASE_URL):
        self.db_path = db_path
        self.ensure_db_directory()

    def ensure_db_directory(self):
        """Ensure database directory exists"""
        directory = os.path.dirname(self.db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

    def create_tables(self):
        """Create the run registry tables"""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()

            cursor.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    runid INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT NOT NULL,
                    channel_digest TEXT,
                    seed INTEGER,
                    version TEXT,
                    duration_seconds REAL,
                    exit_code INTEGER,
                    config TEXT,
                    output_path TEXT,
                    created TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """)

            conn.commit()

    def record_run(self, manifest: Dict, output_path: Optional[str] = None) -> int:
        """
        Store one run manifest.

        Args:
            manifest: RunManifest as a dict
            output_path: main output file of the run, if any

        Returns:
            the new run id
        """
        self.create_tables()
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute("""
                INSERT INTO runs (command, channel_digest, seed, version, duration_seconds,
                                  exit_code, config, output_path)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            """, (
                manifest.get('command'),
                manifest.get('channel_digest'),
                manifest.get('seed'),
                manifest.get('version'),
                manifest.get('duration_seconds'),
                manifest.get('exit_code'),
                json.dumps(manifest.get('config', {}), sort_keys=True, default=str),
                output_path,
            ))
            conn.commit()
            return cursor.lastrowid

    def get_runs(self, page: int = 1, size: int = 10, command: str = '') -> Dict:
        """Get recorded runs with pagination, newest first"""
        self.create_tables()
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()

            where_clause = "command = ?" if command else "1=1"
            params = [command] if command else []

            cursor.execute(f"SELECT COUNT(*) FROM runs WHERE {where_clause}", params)
            total = cursor.fetchone()[0]

            offset = (page - 1) * size
            cursor.execute(f"""
                SELECT runid, command, channel_digest, seed, version, duration_seconds,
                       exit_code, config, output_path, created
                FROM runs
                WHERE {where_clause}
                ORDER BY runid DESC
                LIMIT ? OFFSET ?
            """, params + [size, offset])

            runs = []
            for row in cursor.fetchall():
                runs.append({
                    'runid': row[0],
                    'command': row[1],
                    'channel_digest': row[2],
                    'seed': row[3],
                    'version': row[4],
                    'duration_seconds': row[5],
                    'exit_code': row[6],
                    'config': json.loads(row[7]) if row[7] else {},
                    'output_path': row[8],
                    'created': row[9],
                })

            total_pages = (total + size - 1) // size
            next_page = page + 1 if page < total_pages else None

            return {
                'results': runs,
                'total': total,
                'page': page,
                'size': size,
                'total_pages': total_pages,
                'next_page': next_page
            }
