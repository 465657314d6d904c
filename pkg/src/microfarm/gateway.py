"""The gateway: terminates node links, persists telemetry, hosts the
automation engine, and exposes the HTTP API plus a live event stream.

Two listeners, deliberately separate (router/firewall role): the node
protocol port speaks the line protocol only and answers anything else with
ERR, while the API port speaks HTTP only.  No API route touches a node
socket directly; every flow passes through the store and the control
engine, so the API works identically with zero nodes connected.

Nodes dial in; the gateway never connects out.  The newest connection for
a node_id wins and the older session is closed.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import socketserver
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from . import protocol, stats
from .clock import Clock
from .control import ControlEngine, ManualResult, Mode, ModeChange, Thresholds
from .model import Action, Actuator, ActuatorFlags, PARAMS, RelayCommand, SensorReading
from .node import LinkClosed, SocketLineLink
from .store import DataStore, UnknownParameterError, VisitRecord

log = logging.getLogger(__name__)

ACK_TIMEOUT_CADENCES = 3
PING_IDLE_MS = 30_000


class PendingCommand:
    """Delivery outcome of one relayed command."""

    PENDING = "pending"
    DELIVERED = "delivered"
    TIMED_OUT = "timed-out"
    NOT_CONNECTED = "not-connected"

    def __init__(self, cmd: RelayCommand, deadline_ms: int):
        self.cmd = cmd
        self.deadline_ms = deadline_ms
        self.status = self.PENDING
        self._done = threading.Event()

    def resolve(self, status: str) -> None:
        self.status = status
        self._done.set()

    def wait(self, timeout_s: float | None = None) -> str:
        self._done.wait(timeout_s)
        return self.status


@dataclass
class NodeSession:
    session_id: str
    node_id: str
    connected_at_ms: int
    link: SocketLineLink
    last_seq: int = 0
    last_inbound_ms: int = 0
    last_ping_ms: int = 0
    duplicates_dropped: int = 0
    alive: bool = True
    send_lock: threading.Lock = field(default_factory=threading.Lock)

    def send(self, msg) -> None:
        with self.send_lock:
            self.link.send_line(protocol.format_message(msg))


class GatewayHub:
    """Shared state and message logic; session handlers and API threads call in."""

    def __init__(self, store: DataStore, engine: ControlEngine, clock: Clock,
                 cadence_ms: int):
        self.store = store
        self.engine = engine
        self.clock = clock
        self.cadence_ms = cadence_ms
        self.protocol_errors = 0
        self._sessions: dict[str, NodeSession] = {}
        self._pending: dict[int, PendingCommand] = {}
        self._session_count = 0
        self._subscribers: list[queue.SimpleQueue] = []
        self._lock = threading.Lock()

    # -- sessions ------------------------------------------------------------

    def register_session(self, node_id: str, link: SocketLineLink) -> NodeSession:
        now = self.clock.now_ms()
        with self._lock:
            old = self._sessions.get(node_id)
            self._session_count += 1
            session = NodeSession(session_id=f"s{self._session_count}",
                                  node_id=node_id, connected_at_ms=now,
                                  link=link, last_inbound_ms=now)
            self._sessions[node_id] = session
        if old is not None:
            old.alive = False  # newest wins; the old handler unwinds itself
            old.link.close()
        log.info("node %s connected (%s)", node_id, session.session_id)
        return session

    def unregister_session(self, session: NodeSession) -> None:
        with self._lock:
            if self._sessions.get(session.node_id) is session:
                del self._sessions[session.node_id]
        session.alive = False
        log.info("node %s disconnected (%s)", session.node_id, session.session_id)

    def live_session(self) -> NodeSession | None:
        with self._lock:
            if not self._sessions:
                return None
            return max(self._sessions.values(), key=lambda s: s.connected_at_ms)

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    # -- node protocol -------------------------------------------------------

    def handle_node_line(self, session: NodeSession, line: str) -> str | None:
        """Process one line from a node; returns an ERR line to send back,
        or None.  Never raises on malformed input."""
        session.last_inbound_ms = self.clock.now_ms()
        try:
            msg = protocol.parse_node_line(line)
        except protocol.ProtocolError as e:
            self.protocol_errors += 1
            return protocol.format_message(protocol.Err(e.reason))
        if isinstance(msg, protocol.Sensor):
            self._on_sensor(session, msg)
        elif isinstance(msg, protocol.Ack):
            self._on_ack(msg.cmd_id)
        elif isinstance(msg, (protocol.State, protocol.Pong)):
            pass  # liveness only; the engine's commanded state is authoritative
        elif isinstance(msg, protocol.Hello):
            self.protocol_errors += 1
            return protocol.format_message(protocol.Err("unexpected HELLO"))
        return None

    def _on_sensor(self, session: NodeSession, msg: protocol.Sensor) -> None:
        if msg.seq <= session.last_seq:
            session.duplicates_dropped += 1
            return
        session.last_seq = msg.seq
        reading = SensorReading(node_id=session.node_id, seq=msg.seq,
                                timestamp_ms=msg.timestamp_ms, temp_c=msg.temp_c,
                                moisture_adc=msg.moisture_adc, lux=msg.lux)
        if self.store.append_reading(reading) is None:
            return  # seen in a previous session; drop silently
        self.publish("reading", {
            "ts_ms": reading.timestamp_ms, "node_id": reading.node_id,
            "seq": reading.seq, "temp_c": reading.temp_c,
            "moisture_adc": reading.moisture_adc, "lux": reading.lux,
        })
        for cmd in self.engine.on_reading(reading):
            self.dispatch_command(cmd)

    def _on_ack(self, cmd_id: int) -> None:
        with self._lock:
            pc = self._pending.pop(cmd_id, None)
        if pc is not None:
            pc.resolve(PendingCommand.DELIVERED)

    # -- command relay -------------------------------------------------------

    def dispatch_command(self, cmd: RelayCommand) -> PendingCommand:
        """Write a CMD line to the live node link; the outcome resolves on
        ACK or times out after three cadence intervals."""
        deadline = self.clock.now_ms() + ACK_TIMEOUT_CADENCES * self.cadence_ms
        pc = PendingCommand(cmd, deadline)
        session = self.live_session()
        if session is None:
            pc.resolve(PendingCommand.NOT_CONNECTED)
            return pc
        with self._lock:
            self._pending[cmd.cmd_id] = pc
        try:
            session.send(protocol.Cmd(cmd_id=cmd.cmd_id, target=cmd.target,
                                      action=cmd.action))
        except LinkClosed:
            with self._lock:
                self._pending.pop(cmd.cmd_id, None)
            pc.resolve(PendingCommand.NOT_CONNECTED)
            session.link.close()
        return pc

    def check_timeouts(self, now_ms: int | None = None) -> None:
        now = self.clock.now_ms() if now_ms is None else now_ms
        expired = []
        with self._lock:
            for cmd_id, pc in list(self._pending.items()):
                if now >= pc.deadline_ms:
                    expired.append(self._pending.pop(cmd_id))
        for pc in expired:
            pc.resolve(PendingCommand.TIMED_OUT)

    def ping_idle_sessions(self, now_ms: int) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
        for s in sessions:
            if (now_ms - s.last_inbound_ms >= PING_IDLE_MS
                    and now_ms - s.last_ping_ms >= PING_IDLE_MS):
                s.last_ping_ms = now_ms
                try:
                    s.send(protocol.Ping())
                except LinkClosed:
                    s.link.close()

    # -- control surface (used by the API) ------------------------------------

    def manual_command(self, target: Actuator, action: Action
                       ) -> tuple[ManualResult, RelayCommand | None]:
        def dispatch(cmd: RelayCommand) -> bool:
            return self.dispatch_command(cmd).status != PendingCommand.NOT_CONNECTED
        return self.engine.manual_command(target, action, self.clock.now_ms(),
                                          dispatch=dispatch)

    def set_mode(self, mode: Mode, by: str) -> None:
        for cmd in self.engine.set_mode(mode, by, self.clock.now_ms()):
            self.dispatch_command(cmd)

    def snapshot(self) -> dict:
        r = self.store.latest_reading()
        flags = self.engine.flags
        now = self.clock.now_ms()
        stale = r is None or (now - r.timestamp_ms) > 3 * self.cadence_ms
        return {
            "temp_c": r.temp_c if r else None,
            "moisture_adc": r.moisture_adc if r else None,
            "lux": r.lux if r else None,
            "reading_ts_ms": r.timestamp_ms if r else None,
            "actuators": {"pump": flags.pump, "cooler": flags.cooler,
                          "light": flags.light},
            "mode": self.engine.mode.value,
            "stale": stale,
        }

    # -- event stream ---------------------------------------------------------

    def subscribe(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event: str, payload: dict) -> None:
        data = json.dumps(payload)
        with self._lock:
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put((event, data))


class _NodeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    block_on_close = False

    def __init__(self, addr, hub: GatewayHub, stopping: threading.Event):
        super().__init__(addr, _NodeHandler)
        self.hub = hub
        self.stopping = stopping


class _NodeHandler(socketserver.BaseRequestHandler):
    """One node connection.  First line must be a well-formed HELLO; anything
    else (an HTTP request, say) gets an ERR and the connection is closed."""

    def handle(self):
        hub: GatewayHub = self.server.hub
        stopping: threading.Event = self.server.stopping
        link = SocketLineLink(self.request)
        try:
            line = link.recv_line(timeout_s=10.0)
        except LinkClosed:
            return
        if line is None:
            return
        try:
            msg = protocol.parse_node_line(line)
        except protocol.ProtocolError:
            msg = None
        if not isinstance(msg, protocol.Hello):
            hub.protocol_errors += 1
            try:
                link.send_line(protocol.format_message(protocol.Err("expected HELLO")))
            except LinkClosed:
                pass
            return
        session = hub.register_session(msg.node_id, link)
        try:
            session.send(protocol.Welcome(session_id=session.session_id))
            while session.alive and not stopping.is_set():
                try:
                    line = link.recv_line(timeout_s=0.2)
                except LinkClosed:
                    break
                if line is None:
                    continue
                err = hub.handle_node_line(session, line)
                if err is not None:
                    with session.send_lock:
                        session.link.send_line(err)
        except LinkClosed:
            pass
        finally:
            hub.unregister_session(session)
            link.close()


class _ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    block_on_close = False

    def __init__(self, addr, hub: GatewayHub, stopping: threading.Event,
                 ui_dir: Path | None):
        super().__init__(addr, ApiHandler)
        self.hub = hub
        self.stopping = stopping
        self.ui_dir = ui_dir


class ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: _ApiServer

    def log_message(self, fmt, *args):
        log.debug("api: " + fmt, *args)

    # -- helpers ---------------------------------------------------------------

    def _json(self, status: int, obj) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._json(status, {"error": message})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0) or 0)
        if length > 4 * 1024 * 1024:
            raise ValueError("body too large")
        return self.rfile.read(length)

    def _json_body(self) -> dict:
        raw = self._body()
        obj = json.loads(raw.decode("utf-8")) if raw else {}
        if not isinstance(obj, dict):
            raise ValueError("expected an object body")
        return obj

    # -- routing ----------------------------------------------------------------

    def do_GET(self):
        url = urlsplit(self.path)
        q = parse_qs(url.query)
        hub = self.server.hub
        try:
            if url.path == "/api/v1/snapshot":
                self._json(200, hub.snapshot())
            elif url.path == "/api/v1/history":
                self._history(hub, q)
            elif url.path == "/api/v1/actuators":
                flags = hub.engine.flags
                self._json(200, {"pump": flags.pump, "cooler": flags.cooler,
                                 "light": flags.light,
                                 "mode": hub.engine.mode.value})
            elif url.path == "/api/v1/visits":
                self._get_visit(hub, q)
            elif url.path == "/api/v1/stream":
                self._stream(hub)
            elif url.path.startswith("/api/"):
                self._error(404, "no such endpoint")
            else:
                self._static(url.path)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_PUT(self):
        url = urlsplit(self.path)
        hub = self.server.hub
        if url.path != "/api/v1/mode":
            self._error(404, "no such endpoint")
            return
        try:
            body = self._json_body()
        except ValueError:
            self._error(400, "malformed body")
            return
        try:
            mode = Mode(body.get("mode"))
        except ValueError:
            self._error(400, f"unknown mode {body.get('mode')!r}")
            return
        hub.set_mode(mode, str(body.get("by", "api")))
        self._json(200, {"mode": hub.engine.mode.value})

    def do_POST(self):
        url = urlsplit(self.path)
        q = parse_qs(url.query)
        hub = self.server.hub
        if url.path.startswith("/api/v1/actuators/"):
            self._post_actuator(hub, url.path.removeprefix("/api/v1/actuators/"))
        elif url.path == "/api/v1/visits":
            self._post_visit(hub, q)
        elif url.path == "/api/v1/stats/ttest":
            self._post_ttest(q)
        else:
            self._error(404, "no such endpoint")

    # -- endpoint bodies ---------------------------------------------------------

    def _history(self, hub: GatewayHub, q: dict) -> None:
        param = (q.get("param") or [None])[0]
        window_raw = (q.get("window_s") or [None])[0]
        try:
            window_s = int(window_raw)
        except (TypeError, ValueError):
            self._error(400, "window_s must be a positive integer")
            return
        if window_s <= 0:
            self._error(400, "window_s must be a positive integer")
            return
        try:
            rows = hub.store.query_window(param or "", hub.clock.now_ms(), window_s)
        except UnknownParameterError:
            self._error(400, f"unknown param {param!r}")
            return
        self._json(200, [{"ts_ms": ts, "value": v} for ts, v in rows])

    def _post_actuator(self, hub: GatewayHub, name: str) -> None:
        if name not in ("pump", "cooler", "light"):
            self._error(404, f"unknown actuator {name!r}")
            return
        try:
            body = self._json_body()
        except ValueError:
            self._error(400, "malformed body")
            return
        try:
            action = Action(body.get("action"))
        except ValueError:
            self._error(400, f"unknown action {body.get('action')!r}")
            return
        result, cmd = hub.manual_command(Actuator(name.upper()), action)
        if result is ManualResult.REJECTED_AUTO:
            self._error(409, "manual override is disabled while mode is AUTO")
        elif result is ManualResult.NOT_CONNECTED:
            self._error(503, "node not connected")
        elif result is ManualResult.NOOP:
            self._json(202, {"status": "no-op"})
        else:
            assert cmd is not None
            self._json(202, {"status": "accepted", "cmd_id": cmd.cmd_id})

    def _get_visit(self, hub: GatewayHub, q: dict) -> None:
        user = (q.get("user") or [None])[0]
        if not user:
            self._error(400, "user query parameter required")
            return
        v = hub.store.last_visit(user)
        if v is None:
            self._error(404, "first visit")
            return
        self._json(200, {"last_visit_ts_ms": v.ts_ms,
                         "snapshot_at_visit": {"temp_c": v.temp_c,
                                               "moisture_adc": v.moisture_adc,
                                               "lux": v.lux}})

    def _post_visit(self, hub: GatewayHub, q: dict) -> None:
        user = (q.get("user") or [None])[0]
        if not user:
            self._error(400, "user query parameter required")
            return
        r = hub.store.latest_reading()
        now = hub.clock.now_ms()
        v = VisitRecord(user=user, ts_ms=now,
                        temp_c=r.temp_c if r else None,
                        moisture_adc=r.moisture_adc if r else None,
                        lux=r.lux if r else None)
        hub.store.record_visit(v)
        self._json(201, {"user": user, "ts_ms": now})

    def _post_ttest(self, q: dict) -> None:
        raw_tv = (q.get("test_value") or [None])[0]
        try:
            test_value = float(raw_tv)
        except (TypeError, ValueError):
            self._error(400, "test_value query parameter required")
            return
        try:
            text = self._body().decode("utf-8")
        except (ValueError, UnicodeDecodeError):
            self._error(400, "malformed body")
            return
        try:
            table = stats.loads_height_csv(text)
        except stats.HeightCsvError as e:
            self._error(400, f"bad CSV: {e}")
            return
        day = (q.get("day") or [table.day_labels[-1]])[0]
        try:
            samples = table.day(day)
        except KeyError:
            self._error(400, f"unknown day {day!r}; available: "
                             f"{', '.join(table.day_labels)}")
            return
        try:
            result = stats.one_sample_ttest(samples, test_value)
        except (stats.InsufficientDataError, stats.DegenerateSampleError) as e:
            self._error(422, str(e))
            return
        self._json(200, result.as_dict())

    def _stream(self, hub: GatewayHub) -> None:
        sub = hub.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Connection", "close")
            self.end_headers()
            self.close_connection = True
            while not self.server.stopping.is_set():
                try:
                    event, data = sub.get(timeout=0.25)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                self.wfile.write(f"event: {event}\ndata: {data}\n\n".encode("utf-8"))
                self.wfile.flush()
        finally:
            hub.unsubscribe(sub)

    def _static(self, path: str) -> None:
        root = self.server.ui_dir
        if root is None:
            self._error(404, "no UI configured")
            return
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            self._error(404, "not found")
            return
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class Gateway:
    """Composition root: node listener + API server + the engine they share."""

    def __init__(self, store: DataStore, clock: Clock,
                 thresholds: Thresholds | None = None,
                 initial_mode: Mode = Mode.AUTO,
                 host: str = "127.0.0.1", node_port: int = 0, api_port: int = 0,
                 cadence_ms: int = 5000, ui_dir: str | None = None):
        self.store = store
        self.clock = clock
        self._stopping = threading.Event()
        self.engine = ControlEngine(thresholds, initial_mode,
                                    on_event=self._on_engine_event,
                                    on_mode=self._on_engine_mode)
        self.hub = GatewayHub(store, self.engine, clock, cadence_ms)
        self._node_server = _NodeServer((host, node_port), self.hub, self._stopping)
        self._api_server = _ApiServer((host, api_port), self.hub, self._stopping,
                                      Path(ui_dir) if ui_dir else None)
        self._threads: list[threading.Thread] = []

    def _on_engine_event(self, ev) -> None:
        self.store.append_event(ev)
        self.hub.publish("actuation", {
            "ts_ms": ev.ts_ms, "actuator": ev.actuator.value,
            "action": ev.action.value, "source": ev.source.value,
            "cause_seq": ev.cause_reading_seq, "cause_value": ev.cause_param_value,
        })

    def _on_engine_mode(self, mc: ModeChange) -> None:
        self.store.append_mode(mc)
        self.hub.publish("mode", {"ts_ms": mc.ts_ms, "mode": mc.mode.value,
                                  "changed_by": mc.changed_by})

    @property
    def node_port(self) -> int:
        return self._node_server.server_address[1]

    @property
    def api_port(self) -> int:
        return self._api_server.server_address[1]

    def start(self) -> "Gateway":
        self.store.append_mode(ModeChange(ts_ms=self.clock.now_ms(),
                                          mode=self.engine.mode,
                                          changed_by="system"))
        for name, server in (("node-listener", self._node_server),
                             ("api-server", self._api_server)):
            t = threading.Thread(target=server.serve_forever,
                                 kwargs={"poll_interval": 0.1},
                                 name=name, daemon=True)
            t.start()
            self._threads.append(t)
        sweeper = threading.Thread(target=self._sweep_loop, name="ack-sweeper",
                                   daemon=True)
        sweeper.start()
        self._threads.append(sweeper)
        return self

    def _sweep_loop(self) -> None:
        while not self._stopping.wait(0.1):
            now = self.clock.now_ms()
            self.hub.check_timeouts(now)
            self.hub.ping_idle_sessions(now)

    def stop(self) -> None:
        self._stopping.set()
        self._node_server.shutdown()
        self._api_server.shutdown()
        self._node_server.server_close()
        self._api_server.server_close()
        session = self.hub.live_session()
        while session is not None:
            self.hub.unregister_session(session)
            session.link.close()
            session = self.hub.live_session()
        for t in self._threads:
            t.join(timeout=2.0)

    def __enter__(self) -> "Gateway":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
