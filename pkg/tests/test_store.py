"""Record store: idempotence, conflict detection, tail repair, export."""

import json

import pytest

from spanmon.errors import IntegrityError, StoreError
from spanmon.store import ROWS_FILE, RecordStore, row_key


def row(seq, value=1.0):
    return {
        "node": "n1",
        "session": "s1",
        "kind": "data",
        "seq": seq,
        "data": [[value]],
    }


def test_append_and_read_back(tmp_path):
    store = RecordStore(tmp_path)
    assert store.append("T_data", row(0))
    assert store.append("T_data", row(1))
    assert [r["seq"] for r in store.rows("T_data")] == [0, 1]
    assert store.count("T_data") == 2
    assert store.has("T_data", ("n1", "s1", "data", 0))


def test_exact_duplicate_is_noop(tmp_path):
    store = RecordStore(tmp_path)
    assert store.append("T_data", row(0)) is True
    assert store.append("T_data", row(0)) is False
    assert store.count("T_data") == 1


def test_conflicting_duplicate_raises(tmp_path):
    store = RecordStore(tmp_path)
    store.append("T_data", row(5, value=1.0))
    with pytest.raises(IntegrityError):
        store.append("T_data", row(5, value=2.0))


def test_reload_preserves_dedupe_index(tmp_path):
    store = RecordStore(tmp_path)
    store.append("T_data", row(0))
    store.close()
    store2 = RecordStore(tmp_path)
    assert store2.append("T_data", row(0)) is False
    with pytest.raises(IntegrityError):
        store2.append("T_data", row(0, value=9.0))


def test_torn_tail_is_repaired(tmp_path):
    store = RecordStore(tmp_path)
    for i in range(5):
        store.append("T_data", row(i))
    store.close()
    path = tmp_path / "T_data" / ROWS_FILE
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 7])  # cut into the final row
    store2 = RecordStore(tmp_path)
    assert store2.count("T_data") == 4
    # the torn row can be replayed cleanly
    assert store2.append("T_data", row(4)) is True
    assert store2.count("T_data") == 5


def test_mid_file_corruption_is_an_error(tmp_path):
    store = RecordStore(tmp_path)
    for i in range(3):
        store.append("T_data", row(i))
    store.close()
    path = tmp_path / "T_data" / ROWS_FILE
    lines = path.read_bytes().splitlines(keepends=True)
    lines[1] = b"{garbage\n"
    path.write_bytes(b"".join(lines))
    with pytest.raises(StoreError):
        RecordStore(tmp_path)


def test_logical_state_comparison(tmp_path):
    a = RecordStore(tmp_path / "a")
    b = RecordStore(tmp_path / "b")
    for s in (a, b):
        s.append("T_data", row(0))
        s.append("T_info", {"node": "n1", "session": "s1", "kind": "state", "seq": 0})
    assert a.logical_state() == b.logical_state()
    b.append("T_data", row(1))
    assert a.logical_state() != b.logical_state()


def test_export_csv(tmp_path):
    store = RecordStore(tmp_path / "s")
    store.append("T_data", row(0))
    store.append("T_data", row(1, value=-2.5))
    out = tmp_path / "dump.csv"
    assert store.export_csv("T_data", out) == 2
    text = out.read_text().splitlines()
    assert text[0] == "data,kind,node,seq,session"
    assert json.loads(text[1].split(",", 1)[0].replace('""', '"').strip('"')) == [[1.0]]


def test_row_key_fields():
    assert row_key(row(3)) == ("n1", "s1", "data", 3)
