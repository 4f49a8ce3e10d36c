"""Lock-step software-in-the-loop transport over UDP.

Each ``pwm_write`` datagram advances the plant exactly one physics tick and
is answered with the resulting sensor frame. Retransmits are idempotent:
a repeated sequence number gets the cached reply and no extra step.

Wire layout (little-endian)::

    command  "ATFG" u8 version  u8 kind  u32 seq  4 x f32 motor      26 bytes
    sensor   "ATFG" u8 version  u8 kind  u32 seq  f64 sim_time
             3 x f32 gyro  4 x f32 rotor_omega                        46 bytes
"""
from __future__ import annotations

import logging
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from atfg import dynamics
from atfg.dynamics import AircraftConfig, SimState

log = logging.getLogger(__name__)

MAGIC = b"ATFG"
VERSION = 1
KIND_PWM = 1
KIND_RESET = 2
KIND_ACK = 129

COMMAND = struct.Struct("<4sBBI4f")
SENSOR = struct.Struct("<4sBBId3f4f")
DEFAULT_PORT = 9002


class LinkError(RuntimeError):
    pass


class ProtocolError(LinkError):
    """A datagram arrived but is not a valid frame for this protocol."""


class LinkTimeout(LinkError):
    """No reply after all retransmits: the link is down."""


@dataclass(frozen=True)
class CommandFrame:
    kind: int
    sequence: int
    motor_cmd: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    version: int = VERSION

    def encode(self) -> bytes:
        return COMMAND.pack(MAGIC, self.version, self.kind, self.sequence, *self.motor_cmd)

    @classmethod
    def decode(cls, data: bytes) -> "CommandFrame":
        if len(data) != COMMAND.size:
            raise ProtocolError(f"command frame must be {COMMAND.size} bytes, got {len(data)}")
        magic, version, kind, seq, *cmd = COMMAND.unpack(data)
        if magic != MAGIC:
            raise ProtocolError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ProtocolError(f"unsupported version {version}")
        if kind not in (KIND_PWM, KIND_RESET):
            raise ProtocolError(f"unknown command kind {kind}")
        return cls(kind, seq, tuple(cmd), version)


@dataclass(frozen=True)
class SensorFrame:
    sequence: int
    sim_time: float
    gyro: tuple[float, float, float]
    rotor_omega: tuple[float, float, float, float]
    kind: int = KIND_ACK
    version: int = VERSION

    def encode(self) -> bytes:
        return SENSOR.pack(MAGIC, self.version, self.kind, self.sequence, self.sim_time, *self.gyro, *self.rotor_omega)

    @classmethod
    def decode(cls, data: bytes) -> "SensorFrame":
        if len(data) != SENSOR.size:
            raise ProtocolError(f"sensor frame must be {SENSOR.size} bytes, got {len(data)}")
        magic, version, kind, seq, t, *values = SENSOR.unpack(data)
        if magic != MAGIC:
            raise ProtocolError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ProtocolError(f"unsupported version {version}")
        if kind != KIND_ACK:
            raise ProtocolError(f"unexpected sensor kind {kind}")
        return cls(seq, t, tuple(values[:3]), tuple(values[3:]), kind, version)

    @classmethod
    def from_state(cls, sequence: int, sim: SimState) -> "SensorFrame":
        # Round through float32 so the frame equals what decode() returns.
        gyro = tuple(float(v) for v in np.float32(sim.omega_body))
        rotors = tuple(float(v) for v in np.float32(sim.rotor_omega))
        return cls(sequence, sim.time, gyro, rotors)

    def to_state(self) -> SimState:
        return SimState(time=self.sim_time, omega_body=self.gyro, rotor_omega=self.rotor_omega)


def pwm_to_normalized(pulse_us: float) -> float:
    """Map a 1000-2000 us PWM pulse width onto [0, 1]."""
    return min(1.0, max(0.0, (pulse_us - 1000.0) / 1000.0))


def normalized_to_pwm(value: float) -> float:
    return 1000.0 + 1000.0 * min(1.0, max(0.0, value))


@dataclass
class LinkCounters:
    frames: int = 0
    steps: int = 0
    resets: int = 0
    drops: int = 0
    retransmits: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class LockstepServer:
    """Owns one plant; one datagram in, one physics step, one datagram out."""

    def __init__(self, aircraft: AircraftConfig | None = None, bind=("127.0.0.1", DEFAULT_PORT),
                 dt: float = dynamics.DEFAULT_DT):
        self.aircraft = aircraft or AircraftConfig()
        self.dt = dt
        self.sim = dynamics.reset_state(self.aircraft)
        self.counters = LinkCounters()
        self._last_seq: int | None = None
        self._last_reply = b""
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind(bind)
        except OSError:
            self.sock.close()
            raise
        self._stop = threading.Event()

    @property
    def address(self):
        return self.sock.getsockname()

    def handle(self, data: bytes) -> bytes | None:
        """Process one datagram; returns the reply bytes or ``None`` when dropped."""
        self.counters.frames += 1
        try:
            frame = CommandFrame.decode(data)
        except ProtocolError as exc:
            self.counters.drops += 1
            log.debug("dropped frame: %s", exc)
            return None
        if frame.sequence == self._last_seq:
            self.counters.retransmits += 1
            return self._last_reply
        if frame.kind == KIND_RESET:
            self.sim = dynamics.reset_state(self.aircraft)
            self.counters.resets += 1
        else:
            try:
                self.sim = dynamics.step(self.sim, frame.motor_cmd, self.aircraft, self.dt)
            except dynamics.SimulationDiverged as exc:
                # A diverged plant cannot answer; drop so the client sees a lost link.
                self.counters.drops += 1
                log.warning("simulation diverged: %s", exc)
                return None
            self.counters.steps += 1
        reply = SensorFrame.from_state(frame.sequence, self.sim).encode()
        self._last_seq = frame.sequence
        self._last_reply = reply
        return reply

    def serve_forever(self, poll: float = 0.2) -> LinkCounters:
        self.sock.settimeout(poll)
        while not self._stop.is_set():
            try:
                data, peer = self.sock.recvfrom(256)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    break
                raise
            reply = self.handle(data)
            if reply is not None:
                self.sock.sendto(reply, peer)
        return self.counters

    def shutdown(self) -> None:
        self._stop.set()

    def close(self) -> None:
        self._stop.set()
        self.sock.close()


def serve(aircraft: AircraftConfig, bind_address=("127.0.0.1", DEFAULT_PORT), dt: float = dynamics.DEFAULT_DT,
          ready=None, stop: threading.Event | None = None) -> LinkCounters:
    """Run a lock-step server until ``stop`` is set (or forever)."""
    server = LockstepServer(aircraft, bind_address, dt)
    if stop is not None:
        server._stop = stop
    if ready is not None:
        ready(server.address)
    try:
        return server.serve_forever()
    finally:
        server.sock.close()


@dataclass
class LossModel:
    """Fault-injection shim: drops outgoing commands and incoming replies."""

    rate: float = 0.0
    seed: int = 0
    drop_first: bool = False
    dropped: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def drop(self) -> bool:
        if self.drop_first:
            self.drop_first = False
            self.dropped += 1
            return True
        if self.rate > 0 and self.rng.random() < self.rate:
            self.dropped += 1
            return True
        return False


class LinkClient:
    """Blocking request/reply client; doubles as an env plant backend."""

    def __init__(self, address, timeout: float = 0.1, retries: int = 10, loss: LossModel | None = None):
        self.address = address
        self.timeout = timeout
        self.retries = retries
        self.loss = loss
        self.sequence = 0
        self.retransmits = 0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.connect(address)
        self.sock.settimeout(timeout)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, kind: int, cmd) -> SensorFrame:
        self.sequence = (self.sequence + 1) & 0xFFFFFFFF
        payload = CommandFrame(kind, self.sequence, tuple(float(c) for c in cmd)).encode()
        for attempt in range(self.retries + 1):
            if attempt:
                self.retransmits += 1
            if self.loss is None or not self.loss.drop():
                self.sock.send(payload)
            try:
                while True:
                    data = self.sock.recv(256)
                    if self.loss is not None and self.loss.drop():
                        continue
                    frame = SensorFrame.decode(data)
                    if frame.sequence == self.sequence:
                        return frame
                    # Stale reply to an earlier retransmit; keep waiting.
            except socket.timeout:
                continue
            except ConnectionRefusedError as exc:
                raise LinkTimeout(f"server at {self.address} refused the datagram") from exc
        raise LinkTimeout(f"no reply from {self.address} after {self.retries + 1} attempts (seq {self.sequence})")

    def pwm_write(self, motor_cmd) -> SensorFrame:
        if len(motor_cmd) != 4:
            raise ValueError("expected 4 motor commands")
        return self._request(KIND_PWM, motor_cmd)

    def reset(self) -> SensorFrame:
        return self._request(KIND_RESET, (0.0, 0.0, 0.0, 0.0))


class LinkPlant:
    """Adapter exposing a ``LinkClient`` through the env's plant interface."""

    def __init__(self, client: LinkClient):
        self.client = client

    def reset(self) -> SimState:
        return self.client.reset().to_state()

    def write(self, cmd) -> SimState:
        return self.client.pwm_write(cmd).to_state()
