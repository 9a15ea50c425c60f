"""Uplink wire protocol: JSON packet schema, hex framing, ACK grammar.

One frame per packet: canonical JSON (sorted keys, no whitespace, UTF-8,
numbers with fixed 6-decimal formatting), each byte rendered as two
uppercase hex digits, terminated by CRLF. The server answers every frame
with ``ACK OK <seq>`` or ``ACK ERR <seq>`` (seq -1 when the frame could not
be decoded at all). See docs/wire.md for worked byte examples.

Canonical serialization means equal packets produce byte-identical
encodings, so receivers can deduplicate resends by content hash.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from spanmon.errors import FramingError, ProtocolError, SchemaError

CRLF = b"\r\n"

_REQUIRED_KEYS = {"db", "node", "session", "seq", "n", "t0_ms", "fs", "ch", "data"}
_ALL_KEYS = _REQUIRED_KEYS | {"pad"}


def quantize(value):
    """Snap a float (or array) to the wire's 6-decimal grid."""
    if isinstance(value, (list, tuple, np.ndarray)):
        a = np.asarray(value, dtype=np.float64)
        return np.vectorize(lambda v: float(f"{v:.6f}"))(a) if a.size else a
    return float(f"{float(value):.6f}")


@dataclass(frozen=True)
class Packet:
    """One wire unit: a block of consecutive samples for every channel.

    ``pad`` is None on all but the final packet of a session; the final
    packet carries the number of zero-padding samples appended to fill the
    block (0 when none were needed). Its presence is what tells the receiver
    the expected packet count.
    """

    db: str
    node: str
    session: str
    seq: int
    n: int
    t0_ms: int
    fs: int
    ch: tuple
    data: tuple
    pad: int = None

    def __post_init__(self):
        object.__setattr__(self, "ch", tuple(str(c) for c in self.ch))
        data = tuple(tuple(float(v) for v in row) for row in self.data)
        object.__setattr__(self, "data", data)
        for name in ("db", "node", "session"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name):
                raise SchemaError(f"{name} must be a non-empty string")
        if not isinstance(self.seq, int) or self.seq < 0:
            raise SchemaError("seq must be a non-negative integer")
        if not isinstance(self.n, int) or self.n < 1:
            raise SchemaError("n must be a positive integer")
        if not isinstance(self.t0_ms, int):
            raise SchemaError("t0_ms must be an integer")
        if not isinstance(self.fs, int) or self.fs < 0:
            raise SchemaError("fs must be a non-negative integer")
        if len(self.ch) < 1:
            raise SchemaError("at least one channel is required")
        if len(data) != self.n:
            raise SchemaError(f"data has {len(data)} rows, n = {self.n}")
        for row in data:
            if len(row) != len(self.ch):
                raise SchemaError("data row width differs from channel count")
            for v in row:
                if not math.isfinite(v):
                    raise SchemaError("data values must be finite")
                if v != float(f"{v:.6f}"):
                    raise SchemaError("data values must sit on the 6-decimal wire grid")
        if self.pad is not None:
            if not isinstance(self.pad, int) or not (0 <= self.pad < self.n):
                raise SchemaError("pad must satisfy 0 <= pad < n")

    @property
    def is_final(self):
        return self.pad is not None


def _emit(value):
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    if isinstance(value, bool):
        raise SchemaError("booleans have no wire representation")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_emit(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(k)}:{_emit(v)}" for k, v in sorted(value.items()))
        return "{" + ",".join(items) + "}"
    raise SchemaError(f"cannot serialize {type(value).__name__}")


def canonical_json(packet):
    """Canonical JSON bytes: sorted keys, no whitespace, 6-decimal numbers."""
    doc = {
        "db": packet.db,
        "node": packet.node,
        "session": packet.session,
        "seq": packet.seq,
        "n": packet.n,
        "t0_ms": packet.t0_ms,
        "fs": packet.fs,
        "ch": list(packet.ch),
        "data": [list(row) for row in packet.data],
    }
    if packet.pad is not None:
        doc["pad"] = packet.pad
    return _emit(doc).encode("utf-8")


def encode_packet(packet):
    """Frame a packet: uppercase hex of the canonical JSON, CRLF-terminated."""
    return canonical_json(packet).hex().upper().encode("ascii") + CRLF


_HEX_DIGITS = frozenset(b"0123456789ABCDEF")


def decode_packet(frame):
    """Strict inverse of encode_packet.

    Raises FramingError for hex-level problems (odd length, stray
    characters) and SchemaError for JSON-level ones (bad syntax, unknown or
    missing keys, dimension mismatches).
    """
    if isinstance(frame, str):
        frame = frame.encode("ascii", errors="replace")
    body = frame[:-2] if frame.endswith(CRLF) else frame
    if len(body) == 0:
        raise FramingError("empty frame")
    if len(body) % 2 != 0:
        raise FramingError("odd hex length")
    bad = set(body) - _HEX_DIGITS
    if bad:
        raise FramingError(f"non-hex byte {bytes(sorted(bad))!r} in frame")
    raw = bytes.fromhex(body.decode("ascii"))
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"frame payload is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("packet JSON must be an object")
    keys = set(doc)
    unknown = keys - _ALL_KEYS
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}")
    missing = _REQUIRED_KEYS - keys
    if missing:
        raise SchemaError(f"missing keys {sorted(missing)}")
    for k in ("seq", "n", "t0_ms", "fs", "pad"):
        if k in doc and (isinstance(doc[k], bool) or not isinstance(doc[k], int)):
            raise SchemaError(f"{k} must be an integer")
    if not isinstance(doc["ch"], list) or not isinstance(doc["data"], list):
        raise SchemaError("ch and data must be arrays")
    for row in doc["data"]:
        if not isinstance(row, list):
            raise SchemaError("data must be an array of rows")
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError("data values must be numbers")
    try:
        return Packet(
            db=doc["db"],
            node=doc["node"],
            session=doc["session"],
            seq=doc["seq"],
            n=doc["n"],
            t0_ms=doc["t0_ms"],
            fs=doc["fs"],
            ch=tuple(doc["ch"]),
            data=tuple(tuple(row) for row in doc["data"]),
            pad=doc.get("pad"),
        )
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc)) from exc


def content_hash(packet):
    """Stable content digest used for duplicate detection."""
    return hashlib.sha256(canonical_json(packet)).hexdigest()


@dataclass(frozen=True)
class Ack:
    status: str  # "OK" or "ERR"
    seq: int

    @property
    def ok(self):
        return self.status == "OK"


def ack_line(status, seq):
    """Render an acknowledgement line, e.g. b'ACK OK 42\\r\\n'."""
    if status not in ("OK", "ERR"):
        raise ProtocolError(f"bad ack status {status!r}")
    return f"ACK {status} {int(seq)}".encode("ascii") + CRLF


def parse_ack(line):
    """Strictly parse an acknowledgement line."""
    if isinstance(line, str):
        line = line.encode("ascii", errors="replace")
    body = line[:-2] if line.endswith(CRLF) else line
    parts = body.split(b" ")
    if len(parts) != 3 or parts[0] != b"ACK" or parts[1] not in (b"OK", b"ERR"):
        raise ProtocolError(f"malformed ack line {line!r}")
    try:
        seq = int(parts[2])
    except ValueError as exc:
        raise ProtocolError(f"malformed ack seq in {line!r}") from exc
    return Ack(status=parts[1].decode("ascii"), seq=seq)
