"""The sensor node: samples the chamber on a fixed cadence, frames readings
onto its single outbound link, and drives the relays from gateway commands.

The node never listens for connections.  It owns one control loop; the
sampling tick and the link's read side are serialized through that loop, so
a command can never be applied halfway through taking a sample.  While the
link is down the node keeps sampling: those readings are dropped (the
sequence number still advances, so the gateway can reconstruct the gap) and
reconnection is retried with doubling backoff.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
from typing import Callable

from . import protocol
from .clock import Clock
from .model import ActuatorFlags, RelayCommand, apply_command
from .simulation import GrowChamber

log = logging.getLogger(__name__)

DEFAULT_CADENCE_MS = 5000
BACKOFF_INITIAL_MS = 1000
BACKOFF_CAP_MS = 30000


class LinkClosed(ConnectionError):
    pass


class LineLink:
    """A reliable, ordered byte stream carrying newline-terminated lines."""

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self, timeout_s: float) -> str | None:
        """Next line without its newline, or None if nothing arrived in time.
        Raises LinkClosed once the peer is gone."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class SocketLineLink(LineLink):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = bytearray()

    @property
    def local_port(self) -> int:
        return self._sock.getsockname()[1]

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall(line.encode("ascii") + b"\n")
        except OSError as e:
            raise LinkClosed(str(e)) from e

    def recv_line(self, timeout_s: float) -> str | None:
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode("ascii", errors="replace")
                del self._buf[:nl + 1]
                return line
            self._sock.settimeout(max(timeout_s, 1e-4))
            try:
                chunk = self._sock.recv(4096)
            except (socket.timeout, BlockingIOError):
                return None
            except OSError as e:
                raise LinkClosed(str(e)) from e
            if chunk == b"":
                raise LinkClosed("peer closed")
            self._buf.extend(chunk)
            timeout_s = 0.0  # drain what we have before blocking again

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class QueueLink(LineLink):
    """In-memory link endpoint for tests; make a connected pair with pipe().

    Closing either end severs the pair (like a TCP reset), but lines already
    in flight stay readable until drained.
    """

    def __init__(self, inbox: "queue.SimpleQueue[str]",
                 outbox: "queue.SimpleQueue[str]", closed: threading.Event):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = closed

    @staticmethod
    def pipe() -> tuple["QueueLink", "QueueLink"]:
        a_to_b: queue.SimpleQueue = queue.SimpleQueue()
        b_to_a: queue.SimpleQueue = queue.SimpleQueue()
        closed = threading.Event()
        a = QueueLink(inbox=b_to_a, outbox=a_to_b, closed=closed)
        b = QueueLink(inbox=a_to_b, outbox=b_to_a, closed=closed)
        return a, b

    def send_line(self, line: str) -> None:
        if self._closed.is_set():
            raise LinkClosed("closed")
        self._outbox.put(line)

    def recv_line(self, timeout_s: float) -> str | None:
        try:
            return self._inbox.get_nowait()
        except queue.Empty:
            pass
        if self._closed.is_set():
            raise LinkClosed("closed")
        if timeout_s <= 0:
            return None
        try:
            return self._inbox.get(timeout=timeout_s)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed.set()


def tcp_connector(host: str, port: int) -> Callable[[], SocketLineLink]:
    def connect() -> SocketLineLink:
        return SocketLineLink(socket.create_connection((host, port), timeout=5.0))
    return connect


class SensorNode:
    """One chamber's node.  Drive with run() (blocking) or start()/stop()."""

    def __init__(self, chamber: GrowChamber, clock: Clock,
                 connect: Callable[[], LineLink],
                 node_id: str = "node-1", cadence_ms: int = DEFAULT_CADENCE_MS):
        if cadence_ms <= 0:
            raise ValueError("cadence_ms must be > 0")
        self.chamber = chamber
        self.clock = clock
        self.connect = connect
        self.node_id = node_id
        self.cadence_ms = cadence_ms
        self.flags = ActuatorFlags()
        self.seq = 0
        self.session_id: str | None = None
        self.frames_sent = 0
        self.frames_dropped = 0
        self._link: LineLink | None = None
        self._retry_at_ms = 0
        self._backoff_ms = BACKOFF_INITIAL_MS
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def connected(self) -> bool:
        return self._link is not None

    @property
    def link(self) -> LineLink | None:
        return self._link

    def start(self) -> "SensorNode":
        self._thread = threading.Thread(target=self.run, name=f"node-{self.node_id}",
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._link is not None:
            self._link.close()
        if self._thread is not None:
            self._thread.join(timeout=timeout)

    def run(self, until_ms: int | None = None) -> None:
        """Run the control loop; with until_ms set, return once the virtual
        clock reaches it (ticks scheduled at or after the bound don't fire)."""
        next_tick = self.clock.now_ms()
        while not self._stop.is_set():
            now = self.clock.now_ms()
            if until_ms is not None and now >= until_ms:
                return
            if self._link is None and now >= self._retry_at_ms:
                self._try_connect(now)
                now = self.clock.now_ms()
            if now >= next_tick:
                self._drain_commands()  # apply pending commands before sampling
                self._sample_and_send(now)
                next_tick += self.cadence_ms
                continue
            if self._link is not None:
                line = self._recv_until(next_tick, now)
                if line is not None:
                    self._handle_line(line)
                    continue
            else:
                self.clock.sleep_until(min(next_tick, self._retry_at_ms))
                continue
            self.clock.sleep_until(next_tick)

    # -- link management -----------------------------------------------------

    def _try_connect(self, now_ms: int) -> None:
        try:
            link = self.connect()
            link.send_line(protocol.format_message(protocol.Hello(self.node_id)))
        except (OSError, LinkClosed) as e:
            log.debug("connect failed: %s", e)
            self._schedule_retry(now_ms)
            return
        self._link = link
        self._backoff_ms = BACKOFF_INITIAL_MS

    def _schedule_retry(self, now_ms: int) -> None:
        self._retry_at_ms = now_ms + self._backoff_ms
        self._backoff_ms = min(self._backoff_ms * 2, BACKOFF_CAP_MS)

    def _drop_link(self) -> None:
        if self._link is not None:
            self._link.close()
            self._link = None
        self.session_id = None
        self._schedule_retry(self.clock.now_ms())

    def _send(self, msg) -> bool:
        if self._link is None:
            return False
        try:
            self._link.send_line(protocol.format_message(msg))
            return True
        except LinkClosed:
            self._drop_link()
            return False

    def _recv_until(self, target_ms: int, now_ms: int) -> str | None:
        assert self._link is not None
        try:
            return self._link.recv_line(self.clock.wall_delay_s(target_ms - now_ms))
        except LinkClosed:
            self._drop_link()
            return None

    def _drain_commands(self) -> None:
        while self._link is not None:
            try:
                line = self._link.recv_line(0.0)
            except LinkClosed:
                self._drop_link()
                return
            if line is None:
                return
            self._handle_line(line)

    # -- protocol ------------------------------------------------------------

    def _handle_line(self, line: str) -> None:
        try:
            msg = protocol.parse_gateway_line(line)
        except protocol.ProtocolError as e:
            self._send(protocol.Err(e.reason))
            return
        if isinstance(msg, protocol.Cmd):
            self._apply(msg)
        elif isinstance(msg, protocol.Welcome):
            self.session_id = msg.session_id
        elif isinstance(msg, protocol.Ping):
            self._send(protocol.Pong())
        # Err from the gateway is informational; nothing to do.

    def _apply(self, cmd: protocol.Cmd) -> None:
        now = self.clock.now_ms()
        relay = RelayCommand(cmd_id=cmd.cmd_id, target=cmd.target, action=cmd.action)
        new_flags = apply_command(relay, self.flags)
        self._send(protocol.Ack(cmd.cmd_id))
        if new_flags != self.flags:
            self.flags = new_flags
            self.chamber.set_flags(new_flags, now)
            self._send(protocol.State(timestamp_ms=now, flags=new_flags))

    def _sample_and_send(self, now_ms: int) -> None:
        temp, adc, lux = self.chamber.sample(now_ms)
        self.seq += 1
        frame = protocol.Sensor(seq=self.seq, timestamp_ms=now_ms,
                                temp_c=temp, moisture_adc=adc, lux=lux)
        if self._link is None or not self._send(frame):
            self.frames_dropped += 1  # telemetry is live-only; no queueing
        else:
            self.frames_sent += 1
