"""Line protocol between node and gateway.

One ASCII message per newline-terminated line.  Node to gateway:

    HELLO <node_id> 1
    SENSOR <seq> <timestamp_ms> T=<temp:%.1f> M=<adc:int> L=<lux:int>
    ACK <cmd_id>
    STATE <timestamp_ms> PUMP=<0|1> COOLER=<0|1> LIGHT=<0|1>
    PONG

Gateway to node:

    WELCOME <session_id>
    CMD <cmd_id> <PUMP|COOLER|LIGHT> <ON|OFF>
    PING

Either side answers an unparseable line with `ERR <reason>`.  Parsing is
strict: exact token counts, exact field order, no extra whitespace, and
SENSOR values must sit inside the sensor envelopes.  Formatting then
parsing then formatting is byte-identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .model import (
    ADC_MAX,
    LUX_MAX,
    LUX_MIN,
    TEMP_MAX_C,
    Action,
    Actuator,
    ActuatorFlags,
)

PROTOCOL_VERSION = 1

_NODE_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")
_INT_RE = re.compile(r"^(0|[1-9][0-9]*)$")
_TEMP_RE = re.compile(r"^[0-9]+\.[0-9]$")  # %.1f, non-negative


class ProtocolError(ValueError):
    """Malformed line; `reason` names the offending token."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Hello:
    node_id: str
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class Sensor:
    seq: int
    timestamp_ms: int
    temp_c: float
    moisture_adc: int
    lux: int


@dataclass(frozen=True)
class Ack:
    cmd_id: int


@dataclass(frozen=True)
class State:
    timestamp_ms: int
    flags: ActuatorFlags


@dataclass(frozen=True)
class Pong:
    pass


@dataclass(frozen=True)
class Welcome:
    session_id: str


@dataclass(frozen=True)
class Cmd:
    cmd_id: int
    target: Actuator
    action: Action


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Err:
    reason: str


NodeMessage = Hello | Sensor | Ack | State | Pong
GatewayMessage = Welcome | Cmd | Ping

_BIT = {False: "0", True: "1"}


def format_message(msg) -> str:
    """Render a message as its wire line (no trailing newline)."""
    if isinstance(msg, Hello):
        return f"HELLO {msg.node_id} {msg.version}"
    if isinstance(msg, Sensor):
        return (f"SENSOR {msg.seq} {msg.timestamp_ms} "
                f"T={msg.temp_c:.1f} M={msg.moisture_adc} L={msg.lux}")
    if isinstance(msg, Ack):
        return f"ACK {msg.cmd_id}"
    if isinstance(msg, State):
        f = msg.flags
        return (f"STATE {msg.timestamp_ms} PUMP={_BIT[f.pump]} "
                f"COOLER={_BIT[f.cooler]} LIGHT={_BIT[f.light]}")
    if isinstance(msg, Pong):
        return "PONG"
    if isinstance(msg, Welcome):
        return f"WELCOME {msg.session_id}"
    if isinstance(msg, Cmd):
        return f"CMD {msg.cmd_id} {msg.target.value} {msg.action.value}"
    if isinstance(msg, Ping):
        return "PING"
    if isinstance(msg, Err):
        return f"ERR {msg.reason}"
    raise TypeError(f"not a protocol message: {msg!r}")


def _tokens(line: str, n: int, what: str) -> list[str]:
    parts = line.split(" ")
    if len(parts) != n or any(p == "" for p in parts):
        raise ProtocolError(f"{what}: expected {n} tokens")
    return parts


def _uint(token: str, field: str) -> int:
    if not _INT_RE.match(token):
        raise ProtocolError(f"bad {field} {token!r}")
    return int(token)


def _tagged(token: str, tag: str) -> str:
    prefix = tag + "="
    if not token.startswith(prefix):
        raise ProtocolError(f"missing field {tag}")
    return token[len(prefix):]


def _parse_sensor(line: str) -> Sensor:
    parts = _tokens(line, 6, "SENSOR")
    seq = _uint(parts[1], "seq")
    ts = _uint(parts[2], "timestamp")
    t_tok = _tagged(parts[3], "T")
    if not _TEMP_RE.match(t_tok):
        raise ProtocolError(f"bad T {t_tok!r}")
    temp = float(t_tok)
    if temp > TEMP_MAX_C:
        raise ProtocolError(f"T out of range {t_tok!r}")
    adc = _uint(_tagged(parts[4], "M"), "M")
    if adc > ADC_MAX:
        raise ProtocolError(f"M out of range {adc}")
    lux = _uint(_tagged(parts[5], "L"), "L")
    if not LUX_MIN <= lux <= LUX_MAX:
        raise ProtocolError(f"L out of range {lux}")
    return Sensor(seq=seq, timestamp_ms=ts, temp_c=temp, moisture_adc=adc, lux=lux)


def _parse_state(line: str) -> State:
    parts = _tokens(line, 5, "STATE")
    ts = _uint(parts[1], "timestamp")
    bits = []
    for token, tag in zip(parts[2:], ("PUMP", "COOLER", "LIGHT")):
        v = _tagged(token, tag)
        if v not in ("0", "1"):
            raise ProtocolError(f"bad {tag} {v!r}")
        bits.append(v == "1")
    return State(timestamp_ms=ts,
                 flags=ActuatorFlags(pump=bits[0], cooler=bits[1], light=bits[2]))


def parse_node_line(line: str) -> NodeMessage:
    """Parse a node-to-gateway line; raises ProtocolError on malformed input."""
    if line == "":
        raise ProtocolError("empty line")
    kind = line.split(" ", 1)[0]
    if kind == "HELLO":
        parts = _tokens(line, 3, "HELLO")
        if not _NODE_ID_RE.match(parts[1]):
            raise ProtocolError(f"bad node_id {parts[1]!r}")
        version = _uint(parts[2], "version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported version {version}")
        return Hello(node_id=parts[1], version=version)
    if kind == "SENSOR":
        return _parse_sensor(line)
    if kind == "ACK":
        parts = _tokens(line, 2, "ACK")
        return Ack(cmd_id=_uint(parts[1], "cmd_id"))
    if kind == "STATE":
        return _parse_state(line)
    if kind == "PONG":
        _tokens(line, 1, "PONG")
        return Pong()
    raise ProtocolError(f"unknown message {kind!r}")


def parse_gateway_line(line: str) -> GatewayMessage | Err:
    """Parse a gateway-to-node line; raises ProtocolError on malformed input."""
    if line == "":
        raise ProtocolError("empty line")
    kind = line.split(" ", 1)[0]
    if kind == "WELCOME":
        parts = _tokens(line, 2, "WELCOME")
        if not _NODE_ID_RE.match(parts[1]):
            raise ProtocolError(f"bad session_id {parts[1]!r}")
        return Welcome(session_id=parts[1])
    if kind == "CMD":
        parts = _tokens(line, 4, "CMD")
        cmd_id = _uint(parts[1], "cmd_id")
        try:
            target = Actuator(parts[2])
        except ValueError:
            raise ProtocolError(f"bad target {parts[2]!r}") from None
        try:
            action = Action(parts[3])
        except ValueError:
            raise ProtocolError(f"bad action {parts[3]!r}") from None
        return Cmd(cmd_id=cmd_id, target=target, action=action)
    if kind == "PING":
        _tokens(line, 1, "PING")
        return Ping()
    if kind == "ERR":
        # Reason is free text; keep whatever the peer said.
        return Err(reason=line[4:] if len(line) > 4 else "")
    raise ProtocolError(f"unknown message {kind!r}")
