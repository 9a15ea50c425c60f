"""Deterministic sensor-node firmware simulation.

Models the event-driven trigger chain (watchdog accelerometer + daily timer
combined through a gate and a transparent latch that powers the MCU), the
triggered acquisition (6 channels at the raw rate for a fixed duration with
sensor noise), FIR conditioning with decimation, packetization onto the wire
schema, and the stop-and-wait ACK-gated uplink with bounded connect attempts
and unbounded per-packet retry.

A node instance is a single-threaded state machine driven by an injected
clock; several instances may run concurrently against one server. Transport
failure injection is per instance and seeded, so identical (scenario, seeds,
config) produce byte-identical packet streams.
"""

import json
import socket
from dataclasses import dataclass, replace

import numpy as np

from spanmon import beam as beam_mod
from spanmon import dsp, wire
from spanmon.errors import (
    AckTimeout,
    AcquisitionError,
    ConfigError,
    ConnectError,
    ConnectionLost,
    ProtocolError,
    RetryCeilingExceeded,
    UplinkUnreachable,
)

ACCEL_CHANNELS = ("ax", "ay", "az")


@dataclass(frozen=True)
class SensorConfig:
    """Node identity, channel layout, trigger thresholds, and timing."""

    node_id: str = "node-01"
    bridge_table: str = "DEMO1"  # table-name prefix: <bridge>_data / <bridge>_info
    fs_raw_hz: int = 1000
    decimation: int = 10
    duration_s: float = 30.0
    strain_channels: int = 3
    vib_threshold_mg: float = 200.0
    timer_schedule: tuple = ("08:00",)
    max_connect_attempts: int = 10
    packet_samples: int = 8
    fir_order: int = 100
    fir_cutoff_hz: float = 40.0
    watchdog_fs_hz: float = 100.0
    busy_s: float = 230.0
    ack_timeout_s: float = 2.0
    accel_noise_mg: float = 0.45
    strain_noise_ue: float = 1.52
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "timer_schedule", tuple(self.timer_schedule))
        if self.fs_raw_hz <= 0 or self.decimation < 1:
            raise ConfigError("fs_raw and decimation must be positive")
        if self.fs_raw_hz % self.decimation != 0:
            raise ConfigError("fs_raw must be divisible by the decimation factor")
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        n_raw = self.duration_s * self.fs_raw_hz
        if abs(n_raw - round(n_raw)) > 1e-9:
            raise ConfigError("duration times fs_raw must be an integer sample count")
        if not (3 <= self.strain_channels <= 5):
            raise ConfigError("strain_channels must be between 3 and 5")
        if self.vib_threshold_mg <= 0:
            raise ConfigError("vibration threshold must be positive")
        if self.packet_samples < 1:
            raise ConfigError("packet_samples must be positive")
        if self.max_connect_attempts < 1:
            raise ConfigError("max_connect_attempts must be positive")
        for hhmm in self.timer_schedule:
            _parse_hhmm(hhmm)

    @property
    def channels(self):
        return ACCEL_CHANNELS + tuple(f"s{i + 1}" for i in range(self.strain_channels))

    @property
    def fs_out_hz(self):
        return self.fs_raw_hz // self.decimation

    @property
    def n_raw(self):
        return int(round(self.duration_s * self.fs_raw_hz))

    @property
    def n_conditioned(self):
        return self.n_raw // self.decimation

    @property
    def data_table(self):
        return f"{self.bridge_table}_data"

    @property
    def info_table(self):
        return f"{self.bridge_table}_info"

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["timer_schedule"] = list(self.timer_schedule)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad node config: {exc}") from exc


def demo_config(node_id="node-01", seed=3):
    """Node settings paired with the bundled demo scenario.

    The demo beam's ambient response sits far below the field default of
    200 mg, so the watchdog threshold is lowered to trigger on the first
    vehicle.
    """
    return SensorConfig(node_id=node_id, vib_threshold_mg=30.0, seed=seed)


def load_node_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return SensorConfig.from_dict(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read node config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"node config {path} is not valid JSON: {exc}") from exc


def _parse_hhmm(text):
    try:
        hh, mm = text.split(":")
        hh, mm = int(hh), int(mm)
    except ValueError as exc:
        raise ConfigError(f"bad schedule time {text!r} (want HH:MM)") from exc
    if not (0 <= hh < 24 and 0 <= mm < 60):
        raise ConfigError(f"bad schedule time {text!r}")
    return hh * 3600 + mm * 60


# --------------------------------------------------------------------------
# Event-driven trigger chain


def eds_combine(vib, rtc_n):
    """Combine the trigger sources into the latch data input.

    ``vib`` is active-high (1 = vibration event); ``rtc_n`` is active-low
    (0 = timer event). The gate pulls its output low on either event and the
    inverter restores active-high, so the combined result is
    ``vib OR (NOT rtc_n)``.
    """
    return bool(vib) or not bool(rtc_n)


@dataclass(frozen=True)
class EdsState:
    """Trigger-chain state: latch inputs/output and the switched MCU rail."""

    vib_trigger: bool = False
    rtc_trigger_n: bool = True
    latch_enable: bool = True
    latch_out: bool = False

    @property
    def mcu_on(self):
        return self.latch_out


def latch_step(state, d):
    """One step of the transparent latch: Q follows D while LE is high.

    With LE low the output holds, which is how the MCU shields itself from
    the trigger pulse resetting mid-session.
    """
    q = bool(d) if state.latch_enable else state.latch_out
    return replace(state, latch_out=q)


@dataclass(frozen=True)
class TriggerEvent:
    time_s: float
    cause: str  # "vibration" or "timer"
    index: int  # watchdog sample index


def _timer_crossings(schedule_s, epoch_prev_s, epoch_now_s):
    # Daily schedule instants crossed in (prev, now]; sample steps are tiny
    # relative to a day so at most one crossing per step matters.
    for sched in schedule_s:
        day = int(epoch_prev_s // 86400.0)
        for d in (day, day + 1):
            instant = d * 86400.0 + sched
            if epoch_prev_s < instant <= epoch_now_s:
                return True
    return False


def run_trigger_loop(cfg, vib_stream_mg, start_epoch_ms=0):
    """Drive the trigger chain over a watchdog magnitude stream.

    Emits a TriggerEvent whenever the latch output rises: either a watchdog
    sample magnitude at or above the vibration threshold, or the wall clock
    crossing a scheduled daily time. After a trigger the MCU pulls the latch
    enable low for the busy window (acquisition plus processing and upload),
    during which further trigger activity is absorbed. If the data input is
    still high when the latch reopens, the output never falls and a new
    session starts immediately.
    """
    schedule_s = [_parse_hhmm(x) for x in cfg.timer_schedule]
    dt = 1.0 / cfg.watchdog_fs_hz
    state = EdsState()
    events = []
    busy_until = None
    stream = np.asarray(vib_stream_mg, dtype=np.float64)
    for i in range(stream.size):
        t = i * dt
        epoch_now = start_epoch_ms / 1e3 + t
        vib = bool(abs(stream[i]) >= cfg.vib_threshold_mg)
        rtc_n = not _timer_crossings(schedule_s, epoch_now - dt, epoch_now)
        d = eds_combine(vib, rtc_n)

        reopened = False
        if busy_until is not None and t >= busy_until:
            busy_until = None
            state = replace(state, latch_enable=True)
            reopened = True

        prev_q = state.latch_out
        state = replace(state, vib_trigger=vib, rtc_trigger_n=rtc_n)
        state = latch_step(state, d)

        rising = state.latch_out and not prev_q
        held_through_release = reopened and state.latch_out and d
        if rising or held_through_release:
            cause = "vibration" if vib else "timer"
            events.append(TriggerEvent(time_s=t, cause=cause, index=i))
            busy_until = t + cfg.duration_s + cfg.busy_s
            state = replace(state, latch_enable=False)
    return events


# --------------------------------------------------------------------------
# Acquisition and conditioning


@dataclass(frozen=True)
class NodeEnvironment:
    """Slowly varying node state sampled once per session."""

    temperature_c: float = 20.0
    battery_v: float = 11.7
    solar_ma: float = 0.0


@dataclass
class Session:
    """One triggered measurement: raw frames plus conditioning products."""

    session_id: str
    node_id: str
    bridge_table: str
    trigger_cause: str
    t0_ms: int
    fs_raw_hz: int
    channels: tuple
    raw: np.ndarray  # (channels, n_raw)
    conditioned: np.ndarray = None  # (channels, n_raw / decimation)
    fs_out_hz: int = None
    temperature_c: float = 20.0
    battery_v: float = 11.7
    solar_ma: float = 0.0


def watchdog_stream(truth, cfg, accel_index=0, seed=None):
    """Watchdog accelerometer magnitude stream (mg) derived from truth."""
    step = int(round(truth.fs_hz / cfg.watchdog_fs_hz))
    if step < 1 or truth.fs_hz % cfg.watchdog_fs_hz != 0:
        raise ConfigError("watchdog rate must divide the truth rate")
    az = truth.accel_g[accel_index, ::step] * 1e3
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD06]))
    return az + rng.normal(0.0, cfg.accel_noise_mg, size=az.shape)


def acquire(cfg, truth, trigger, env=None, start_epoch_ms=0, accel_index=0):
    """Sample ground truth at the raw rate over the triggered window.

    The accelerometer channel ``az`` reads the vertical response at the
    node's accelerometer position; ``ax``/``ay`` see only sensor noise (the
    beam model has no lateral response). Strain channels read the first
    ``strain_channels`` gauges. Noise streams are seeded per (config seed,
    trigger index, channel), so a session is bitwise reproducible.
    """
    env = env or NodeEnvironment()
    if int(round(truth.fs_hz)) != cfg.fs_raw_hz:
        raise AcquisitionError(
            f"truth sampled at {truth.fs_hz} Hz, node acquires at {cfg.fs_raw_hz} Hz"
        )
    if truth.strain_ue.shape[0] < cfg.strain_channels:
        raise AcquisitionError("ground truth has fewer gauges than strain channels")
    i0 = int(round(trigger.time_s * cfg.fs_raw_hz))
    n = cfg.n_raw
    if i0 < 0 or i0 + n > truth.n_samples:
        raise AcquisitionError(
            f"truth window [{trigger.time_s:.3f}, +{cfg.duration_s}s] not covered"
        )
    raw = np.zeros((len(cfg.channels), n))
    accel_rms_g = cfg.accel_noise_mg * 1e-3
    for j, name in enumerate(cfg.channels):
        seed = np.random.SeedSequence([cfg.seed, trigger.index, j])
        if name == "az":
            base = truth.accel_g[accel_index, i0 : i0 + n]
            raw[j] = beam_mod.add_noise(base, "accel", seed=seed, rms=accel_rms_g)
        elif name in ("ax", "ay"):
            raw[j] = beam_mod.add_noise(np.zeros(n), "accel", seed=seed, rms=accel_rms_g)
        else:
            g = int(name[1:]) - 1
            base = truth.strain_ue[g, i0 : i0 + n]
            raw[j] = beam_mod.add_noise(base, "strain", seed=seed, rms=cfg.strain_noise_ue)
    t0_ms = int(start_epoch_ms + round(trigger.time_s * 1e3))
    return Session(
        session_id=f"{cfg.node_id}-{t0_ms}",
        node_id=cfg.node_id,
        bridge_table=cfg.bridge_table,
        trigger_cause=trigger.cause,
        t0_ms=t0_ms,
        fs_raw_hz=cfg.fs_raw_hz,
        channels=cfg.channels,
        raw=raw,
        temperature_c=env.temperature_c,
        battery_v=env.battery_v,
        solar_ma=env.solar_ma,
    )


def condition(session, cfg, fir_spec=None):
    """Low-pass filter and decimate every raw channel in place.

    The applied filter is delay-compensated, so conditioned peaks stay
    aligned with the raw series within one conditioned sample.
    """
    if session.raw is None:
        raise ConfigError("session has no raw data")
    spec = fir_spec or dsp.fir_lowpass_design(cfg.fs_raw_hz, cfg.fir_cutoff_hz, cfg.fir_order)
    cond = np.empty((session.raw.shape[0], cfg.n_conditioned))
    for j in range(session.raw.shape[0]):
        cond[j] = dsp.decimate(dsp.filter_apply(spec, session.raw[j]), cfg.decimation)[
            : cfg.n_conditioned
        ]
    session.conditioned = cond
    session.fs_out_hz = cfg.fs_out_hz
    return session


# --------------------------------------------------------------------------
# Packetization


def packetize(session, cfg):
    """Split the conditioned stream into wire packets.

    Samples are quantized to the wire's 6-decimal grid; blocks are
    consecutive and non-overlapping, ``packet_samples`` rows of all
    channels each; a short final block is zero-padded and carries the pad
    count. Exactly one packet (the last) has the ``pad`` field set.
    """
    if session.conditioned is None:
        raise ConfigError("session must be conditioned before packetization")
    q = wire.quantize(session.conditioned)
    n_samples = q.shape[1]
    block = cfg.packet_samples
    n_packets = (n_samples + block - 1) // block
    packets = []
    for seq in range(n_packets):
        lo = seq * block
        hi = min(lo + block, n_samples)
        rows = [tuple(q[:, i]) for i in range(lo, hi)]
        pad = block - (hi - lo)
        rows.extend([(0.0,) * len(session.channels)] * pad)
        packets.append(
            wire.Packet(
                db=f"{session.bridge_table}_data",
                node=session.node_id,
                session=session.session_id,
                seq=seq,
                n=block,
                t0_ms=session.t0_ms + int(round(lo * 1e3 / session.fs_out_hz)),
                fs=int(session.fs_out_hz),
                ch=session.channels,
                data=tuple(rows),
                pad=pad if seq == n_packets - 1 else None,
            )
        )
    return packets


def depacketize(packets):
    """Reassemble a packet list into the (channels, samples) sample block."""
    if not packets:
        raise ConfigError("no packets to reassemble")
    ordered = sorted(packets, key=lambda p: p.seq)
    finals = [p for p in ordered if p.is_final]
    if len(finals) != 1 or finals[0] is not ordered[-1]:
        raise ConfigError("expected exactly one final packet, at the end")
    rows = []
    for p in ordered:
        rows.extend(p.data)
    pad = ordered[-1].pad
    if pad:
        rows = rows[:-pad]
    return np.asarray(rows, dtype=np.float64).T


def build_info_packet(session, cfg):
    """Node-state row for the info table, shipped on the same wire schema."""
    values = (
        wire.quantize(session.temperature_c),
        wire.quantize(session.battery_v),
        wire.quantize(session.solar_ma),
    )
    return wire.Packet(
        db=f"{session.bridge_table}_info",
        node=session.node_id,
        session=session.session_id,
        seq=0,
        n=1,
        t0_ms=session.t0_ms,
        fs=int(session.fs_out_hz or cfg.fs_out_hz),
        ch=("temperature_c", "battery_v", "solar_ma"),
        data=(values,),
        pad=0,
    )


# --------------------------------------------------------------------------
# Uplink transports


class TcpTransport:
    """Real TCP connection to an ingestion server."""

    def __init__(self, host, port, timeout_s=2.0):
        self.host = host
        self.port = port
        self.timeout_s = timeout_s

    def connect(self):
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
        except OSError as exc:
            raise ConnectError(f"connect to {self.host}:{self.port} failed: {exc}") from exc
        return _TcpConnection(sock, self.timeout_s)


class _TcpConnection:
    def __init__(self, sock, timeout_s):
        self._sock = sock
        self._sock.settimeout(timeout_s)
        self._file = sock.makefile("rb")

    def send_frame(self, frame):
        try:
            self._sock.sendall(frame)
            line = self._file.readline()
        except socket.timeout as exc:
            raise AckTimeout("ack timed out") from exc
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc
        if not line:
            raise ConnectionLost("server closed the connection")
        return wire.parse_ack(line)

    def close(self):
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass


class LossyTransport:
    """Injects independent frame and ack loss into an inner transport.

    A lost frame is simply never delivered; a lost ack means the server did
    receive (and likely stored) the frame, so the client's resend exercises
    server-side deduplication. Loss decisions come from a seeded generator,
    making runs reproducible.
    """

    def __init__(self, inner, loss_rate, seed=0):
        if not (0.0 <= loss_rate < 1.0):
            raise ConfigError("loss rate must lie in [0, 1)")
        self.inner = inner
        self.loss_rate = loss_rate
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1055]))

    def connect(self):
        return _LossyConnection(self.inner.connect(), self.loss_rate, self._rng)


class _LossyConnection:
    def __init__(self, conn, loss_rate, rng):
        self._conn = conn
        self._loss = loss_rate
        self._rng = rng

    def send_frame(self, frame):
        if self._rng.random() < self._loss:
            raise AckTimeout("frame lost in flight (injected)")
        ack = self._conn.send_frame(frame)
        if self._rng.random() < self._loss:
            raise AckTimeout("ack lost in flight (injected)")
        return ack

    def close(self):
        self._conn.close()


class RefusingTransport:
    """Never connects; used to exercise the connect-attempt budget."""

    def __init__(self):
        self.attempts = 0

    def connect(self):
        self.attempts += 1
        raise ConnectError("connection refused (injected)")


# --------------------------------------------------------------------------
# Uplink


@dataclass
class TransmissionReport:
    node_id: str
    session_id: str
    packets: int
    sends: int = 0
    resends: int = 0
    connect_attempts: int = 0
    reconnects: int = 0
    delivered: bool = False

    def to_dict(self):
        return dict(self.__dict__)


def _connect(transport, cfg, report):
    attempts = 0
    while attempts < cfg.max_connect_attempts:
        attempts += 1
        report.connect_attempts += 1
        try:
            return transport.connect()
        except ConnectError:
            continue
    raise UplinkUnreachable(attempts)


def uplink(packets, transport, cfg, max_resends_per_packet=None):
    """Send packets in sequence order with stop-and-wait acknowledgement.

    Connects with at most ``max_connect_attempts`` tries (per burst; a
    mid-session connection loss starts a new burst). Each packet is resent
    until an OK ack echoing its seq arrives; ``max_resends_per_packet`` is a
    test-only ceiling that aborts with RetryCeilingExceeded instead of
    retrying forever.
    """
    if not packets:
        raise ConfigError("nothing to uplink")
    report = TransmissionReport(
        node_id=packets[0].node,
        session_id=packets[0].session,
        packets=len(packets),
    )
    conn = _connect(transport, cfg, report)
    try:
        for packet in packets:
            frame = wire.encode_packet(packet)
            tries = 0
            while True:
                tries += 1
                report.sends += 1
                try:
                    ack = conn.send_frame(frame)
                    if ack.ok and ack.seq == packet.seq:
                        break
                except (AckTimeout, ProtocolError):
                    pass
                except ConnectionLost:
                    report.reconnects += 1
                    conn.close()
                    conn = _connect(transport, cfg, report)
                report.resends += 1
                if max_resends_per_packet is not None and tries > max_resends_per_packet:
                    raise RetryCeilingExceeded(
                        f"packet seq {packet.seq} undelivered after {tries} tries"
                    )
        report.delivered = True
        return report
    finally:
        conn.close()


def run_session_pipeline(cfg, truth, trigger, transport, env=None, start_epoch_ms=0,
                         max_resends_per_packet=None, fir_spec=None):
    """Full firmware flow for one trigger: acquire, condition, packetize, uplink."""
    session = acquire(cfg, truth, trigger, env=env, start_epoch_ms=start_epoch_ms)
    condition(session, cfg, fir_spec=fir_spec)
    packets = packetize(session, cfg)
    packets.append(build_info_packet(session, cfg))
    report = uplink(packets, transport, cfg, max_resends_per_packet=max_resends_per_packet)
    return session, packets, report
