"""File-backed append-only record store with idempotent writes.

Tables are directories under the store root, each holding one ``rows.jsonl``
file of canonical JSON lines. An in-memory index keyed by each row's
identity tuple makes appends idempotent: re-appending an identical row is a
no-op, while a key collision with different content raises IntegrityError.

On open, a torn trailing line (the signature of a crash mid-write) is
repaired by truncating to the last complete row; everything before it must
parse, otherwise the store is considered damaged.
"""

import csv
import hashlib
import json
import os
import threading
from pathlib import Path

from spanmon.errors import IntegrityError, StoreError

ROWS_FILE = "rows.jsonl"

# Identity fields per row kind: data rows are keyed by packet sequence,
# info rows by their kind (state/analysis).
_KEY_FIELDS = ("node", "session", "kind", "seq")


def row_key(row):
    return tuple(row.get(k) for k in _KEY_FIELDS)


def _canonical(row):
    return json.dumps(row, sort_keys=True, separators=(",", ":"))


def _digest(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RecordStore:
    """Append-only JSON-lines tables with key-based deduplication."""

    def __init__(self, root, fsync=False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._lock = threading.RLock()
        self._index = {}  # table -> {key: digest}
        self._files = {}
        for entry in sorted(self.root.iterdir()):
            if entry.is_dir() and (entry / ROWS_FILE).exists():
                self._load_table(entry.name)

    # -- loading ----------------------------------------------------------

    def _load_table(self, table):
        path = self.root / table / ROWS_FILE
        index = {}
        good_end = 0
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos < len(data):
            nl = data.find(b"\n", pos)
            if nl < 0:
                break  # torn trailing write
            line = data[pos : nl + 1]
            try:
                row = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                if nl + 1 >= len(data):
                    break  # corrupt final line: treat as torn
                raise StoreError(f"{path}: corrupt row mid-file at byte {pos}") from exc
            index[row_key(row)] = _digest(_canonical(row))
            good_end = nl + 1
            pos = nl + 1
        if good_end < len(data):
            with open(path, "r+b") as fh:
                fh.truncate(good_end)
        self._index[table] = index

    # -- writing ----------------------------------------------------------

    def _handle(self, table):
        if table not in self._files:
            tdir = self.root / table
            tdir.mkdir(parents=True, exist_ok=True)
            self._files[table] = open(tdir / ROWS_FILE, "ab")
            self._index.setdefault(table, {})
        return self._files[table]

    def append(self, table, row):
        """Append a row; returns True if written, False if an exact duplicate.

        Raises IntegrityError when the row's key already exists with
        different content.
        """
        text = _canonical(row)
        digest = _digest(text)
        key = row_key(row)
        with self._lock:
            existing = self._index.setdefault(table, {}).get(key)
            if existing is not None:
                if existing != digest:
                    raise IntegrityError(f"conflicting duplicate for {key} in {table}")
                return False
            fh = self._handle(table)
            fh.write(text.encode("utf-8") + b"\n")
            fh.flush()
            if self._fsync:
                os.fsync(fh.fileno())
            self._index[table][key] = digest
            return True

    def close(self):
        with self._lock:
            for fh in self._files.values():
                fh.close()
            self._files.clear()

    # -- reading ----------------------------------------------------------

    def tables(self):
        with self._lock:
            return sorted(self._index)

    def has(self, table, key):
        with self._lock:
            return key in self._index.get(table, {})

    def count(self, table):
        with self._lock:
            return len(self._index.get(table, {}))

    def rows(self, table):
        """All rows of a table, in append order."""
        path = self.root / table / ROWS_FILE
        if not path.exists():
            return []
        out = []
        with self._lock:
            for fh in self._files.values():
                fh.flush()
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        out.append(json.loads(line))
        return out

    def logical_state(self):
        """Canonical content map for whole-store comparisons in tests."""
        state = {}
        for table in self.tables():
            state[table] = {row_key(r): _canonical(r) for r in self.rows(table)}
        return state

    def export_csv(self, table, out_path):
        """Dump a table to CSV; nested values are JSON-encoded."""
        rows = self.rows(table)
        fields = sorted({k for r in rows for k in r})
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in rows:
                writer.writerow(
                    {
                        k: json.dumps(v) if isinstance(v, (list, dict)) else v
                        for k, v in r.items()
                    }
                )
        return len(rows)
