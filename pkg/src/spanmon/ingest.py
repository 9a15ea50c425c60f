"""TCP ingestion service: validate, ACK, persist, reassemble, analyze.

Every received frame is decoded and persisted (idempotently, keyed by
node/session/seq) *before* it is acknowledged, so at-least-once delivery
from the node becomes exactly-once storage. Sessions reassemble from
per-packet rows; the final packet (the one carrying a pad field) fixes the
expected count. Completed data sessions are handed to an analysis pipeline
on a dispatcher thread, so acknowledgement latency stays independent of
analysis runtime.

Restart safety: the assembler state is rebuilt from the store on startup,
torn trailing writes are repaired by the store, and completed sessions that
lack an analysis row are re-dispatched, so a crash at any point converges
to the same store state once the client replays.
"""

import logging
import queue
import socketserver
import threading
from dataclasses import dataclass, field

import numpy as np

from spanmon import wire
from spanmon.errors import AnalysisError, ConfigError, FramingError, IntegrityError, SchemaError
from spanmon.store import RecordStore

log = logging.getLogger(__name__)

STALE_AGE_H = 24.0


@dataclass
class SessionAssembly:
    """Reassembly state for one (table, node, session)."""

    table: str
    node: str
    session: str
    received: dict = field(default_factory=dict)  # seq -> content hash
    expected: int = None
    first_seen_ms: int = None
    last_seen_ms: int = None
    quarantined: bool = False

    @property
    def complete(self):
        return (
            not self.quarantined
            and self.expected is not None
            and len(self.received) == self.expected
            and all(s in self.received for s in range(self.expected))
        )

    def is_stale(self, now_ms, max_age_h=STALE_AGE_H):
        if self.complete or self.last_seen_ms is None:
            return False
        return (now_ms - self.last_seen_ms) > max_age_h * 3600e3


def data_row(packet):
    row = {
        "node": packet.node,
        "session": packet.session,
        "kind": "data",
        "seq": packet.seq,
        "n": packet.n,
        "pad": packet.pad,
        "t0_ms": packet.t0_ms,
        "fs": packet.fs,
        "ch": list(packet.ch),
        "data": [list(r) for r in packet.data],
    }
    return row


def state_row(packet):
    row = {
        "node": packet.node,
        "session": packet.session,
        "kind": "state",
        "seq": 0,
        "t0_ms": packet.t0_ms,
    }
    row.update({name: value for name, value in zip(packet.ch, packet.data[0])})
    return row


class Assembler:
    """Orders packets into sessions with idempotent, conflict-checked inserts."""

    def __init__(self, store):
        self.store = store
        self._lock = threading.RLock()
        self._assemblies = {}
        self._rebuild()

    def _rebuild(self):
        for table in self.store.tables():
            if not table.endswith("_data"):
                continue
            for row in self.store.rows(table):
                key = (table, row["node"], row["session"])
                asm = self._assemblies.setdefault(
                    key, SessionAssembly(table, row["node"], row["session"])
                )
                asm.received[row["seq"]] = True
                asm.first_seen_ms = asm.first_seen_ms or row["t0_ms"]
                asm.last_seen_ms = row["t0_ms"]
                if row.get("pad") is not None:
                    asm.expected = row["seq"] + 1

    def get(self, table, node, session):
        return self._assemblies.get((table, node, session))

    def completed_without_analysis(self):
        """Completed data sessions missing their analysis row (crash recovery)."""
        out = []
        with self._lock:
            for (table, node, session), asm in self._assemblies.items():
                if not asm.complete:
                    continue
                info = table[: -len("_data")] + "_info"
                if not self.store.has(info, (node, session, "analysis", 0)):
                    out.append(asm)
        return out

    def stale_sessions(self, now_ms, max_age_h=STALE_AGE_H):
        with self._lock:
            return [a for a in self._assemblies.values() if a.is_stale(now_ms, max_age_h)]

    def assemble(self, packet, now_ms=None):
        """Insert one decoded packet. Returns (assembly, newly_completed).

        Duplicates with identical content are acknowledged without effect;
        a conflicting duplicate (same seq, different content) quarantines
        the whole session and raises IntegrityError.
        """
        key = (packet.db, packet.node, packet.session)
        digest = wire.content_hash(packet)
        with self._lock:
            asm = self._assemblies.setdefault(
                key, SessionAssembly(packet.db, packet.node, packet.session)
            )
            if asm.quarantined:
                raise IntegrityError(f"session {key} is quarantined")
            was_complete = asm.complete
            prev = asm.received.get(packet.seq)
            if prev is not None and prev is not True and prev != digest:
                asm.quarantined = True
                raise IntegrityError(f"conflicting duplicate seq {packet.seq} for {key}")
            if packet.is_final and asm.expected is not None and asm.expected != packet.seq + 1:
                asm.quarantined = True
                raise IntegrityError(f"conflicting final packet seq {packet.seq} for {key}")
            if asm.expected is not None and packet.seq >= asm.expected:
                asm.quarantined = True
                raise IntegrityError(f"seq {packet.seq} beyond declared end for {key}")

            row = state_row(packet) if packet.db.endswith("_info") else data_row(packet)
            try:
                self.store.append(packet.db, row)
            except IntegrityError:
                asm.quarantined = True
                raise

            asm.received[packet.seq] = digest
            if packet.is_final:
                asm.expected = packet.seq + 1
            now = packet.t0_ms if now_ms is None else now_ms
            asm.first_seen_ms = asm.first_seen_ms or now
            asm.last_seen_ms = now
            return asm, asm.complete and not was_complete


@dataclass
class SessionData:
    """A reassembled session as handed to the analysis pipeline."""

    table: str
    node: str
    session: str
    t0_ms: int
    fs_hz: float
    channels: tuple
    samples: np.ndarray  # (channels, samples)

    # Names fusion expects on a session-like object.
    @property
    def conditioned(self):
        return self.samples

    @property
    def fs_out_hz(self):
        return self.fs_hz


def reconstruct_session(store, table, node, session):
    """Rebuild the conditioned sample block from persisted packet rows."""
    rows = [
        r
        for r in store.rows(table)
        if r["node"] == node and r["session"] == session and r["kind"] == "data"
    ]
    if not rows:
        raise ConfigError(f"no data rows for {node}/{session} in {table}")
    rows.sort(key=lambda r: r["seq"])
    finals = [r for r in rows if r.get("pad") is not None]
    if len(finals) != 1 or finals[0] is not rows[-1]:
        raise ConfigError(f"session {node}/{session} is incomplete")
    samples = []
    for r in rows:
        samples.extend(r["data"])
    pad = rows[-1]["pad"]
    if pad:
        samples = samples[:-pad]
    return SessionData(
        table=table,
        node=node,
        session=session,
        t0_ms=rows[0]["t0_ms"],
        fs_hz=float(rows[0]["fs"]),
        channels=tuple(rows[0]["ch"]),
        samples=np.asarray(samples, dtype=np.float64).T,
    )


class IngestServer:
    """Threaded TCP ingestion service over a RecordStore.

    ``pipeline`` is a callable mapping SessionData to a dict of analysis
    fields (or raising AnalysisError); analysis outcomes land in the
    session's info table. Without a pipeline, completed sessions are only
    persisted.
    """

    def __init__(self, store, pipeline=None, host="127.0.0.1", port=0):
        self.store = store
        self.pipeline = pipeline
        self.assembler = Assembler(store)
        self._queue = queue.Queue()
        self._server = None
        self._threads = []
        self._host, self._port = host, port
        self._dispatcher = threading.Thread(target=self._dispatch_loop, daemon=True)
        self._dispatcher.start()
        for asm in self.assembler.completed_without_analysis():
            self._queue.put((asm.table, asm.node, asm.session))

    # -- frame handling (transport independent) ---------------------------

    def handle_frame(self, frame):
        """Decode, persist, and acknowledge one frame; returns the ack bytes."""
        try:
            packet = wire.decode_packet(frame)
        except (FramingError, SchemaError) as exc:
            log.warning("rejected frame: %s", exc)
            return wire.ack_line("ERR", -1)
        try:
            _, completed = self.assembler.assemble(packet)
        except IntegrityError as exc:
            log.warning("integrity: %s", exc)
            return wire.ack_line("ERR", packet.seq)
        if completed and packet.db.endswith("_data"):
            self._queue.put((packet.db, packet.node, packet.session))
        return wire.ack_line("OK", packet.seq)

    # -- analysis dispatch -------------------------------------------------

    def _dispatch_loop(self):
        while True:
            item = self._queue.get()
            if item is None:
                self._queue.task_done()
                return
            try:
                self._run_analysis(*item)
            except Exception:
                log.exception("analysis dispatch failed")
            finally:
                self._queue.task_done()

    def _run_analysis(self, table, node, session):
        if self.pipeline is None:
            return  # persist-only service; analysis can run after a restart
        info_table = table[: -len("_data")] + "_info"
        if self.store.has(info_table, (node, session, "analysis", 0)):
            return  # idempotent re-dispatch
        data = reconstruct_session(self.store, table, node, session)
        row = {
            "node": node,
            "session": session,
            "kind": "analysis",
            "seq": 0,
            "t0_ms": data.t0_ms,
            "f_n_hz": None,
            "alpha": None,
            "ena_mm": None,
            "peak_mm": None,
            "error": None,
        }
        try:
            row.update(self.pipeline(data))
        except AnalysisError as exc:
            row["error"] = getattr(exc, "marker", None) or type(exc).__name__
        except Exception as exc:  # analysis must never kill the service
            log.exception("pipeline error for %s/%s", node, session)
            row["error"] = f"pipeline-exception:{type(exc).__name__}"
        self.store.append(info_table, row)

    def wait_idle(self):
        """Block until all queued analyses have run (test synchronization)."""
        self._queue.join()

    # -- TCP plumbing -------------------------------------------------------

    def start(self):
        server = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                while True:
                    line = self.rfile.readline()
                    if not line:
                        return
                    try:
                        self.wfile.write(server.handle_frame(line))
                    except BrokenPipeError:
                        return

        class TcpServer(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = TcpServer((self._host, self._port), Handler)
        thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        thread.start()
        self._threads.append(thread)
        return self.address

    @property
    def address(self):
        if self._server is None:
            raise ConfigError("server not started")
        return self._server.server_address

    def shutdown(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        self._queue.put(None)
        self._dispatcher.join(timeout=5.0)
        self.store.close()


class InProcessTransport:
    """Client transport that talks straight to an IngestServer, no sockets."""

    def __init__(self, server):
        self.server = server

    def connect(self):
        outer = self

        class _Conn:
            def send_frame(self, frame):
                return wire.parse_ack(outer.server.handle_frame(frame))

            def close(self):
                pass

        return _Conn()


def serve(bind_addr, store_dir, pipeline=None):
    """Run the ingestion service until interrupted. Returns the bound address."""
    host, _, port = bind_addr.partition(":")
    try:
        port = int(port)
    except ValueError as exc:
        raise ConfigError(f"bad bind address {bind_addr!r}") from exc
    store = RecordStore(store_dir)
    server = IngestServer(store, pipeline=pipeline, host=host or "0.0.0.0", port=port)
    try:
        addr = server.start()
    except OSError as exc:
        raise ConfigError(f"cannot bind {bind_addr}: {exc}") from exc
    log.info("ingestd listening on %s:%s, store at %s", addr[0], addr[1], store_dir)
    return server
