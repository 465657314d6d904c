"""Append-only CSV persistence with windowed queries.

Four streams, one file each under the data directory:

    readings.csv  ts_ms,node_id,seq,temp_c,moisture_adc,lux
    events.csv    ts_ms,actuator,action,source,cause_seq,cause_value
    modes.csv     ts_ms,mode,changed_by
    visits.csv    user,ts_ms,temp_c,moisture_adc,lux

Every append is flushed before returning, so a killed process loses
nothing it acknowledged.  Existing files are reparsed on open.  Numeric
formatting: temperatures carry one decimal, everything else is integral.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from pathlib import Path

from .control import ActuationEvent, ModeChange
from .model import Action, Actuator, Mode, SensorReading

READINGS_HEADER = "ts_ms,node_id,seq,temp_c,moisture_adc,lux"
EVENTS_HEADER = "ts_ms,actuator,action,source,cause_seq,cause_value"
MODES_HEADER = "ts_ms,mode,changed_by"
VISITS_HEADER = "user,ts_ms,temp_c,moisture_adc,lux"

PARAM_FIELD = {"temp": "temp_c", "moisture": "moisture_adc", "light": "lux"}


class UnknownParameterError(ValueError):
    pass


class StoreFormatError(ValueError):
    """A store CSV file failed to reparse; message carries file and line."""


@dataclass(frozen=True)
class VisitRecord:
    user: str
    ts_ms: int
    temp_c: float | None
    moisture_adc: int | None
    lux: int | None


def format_reading_row(r: SensorReading) -> str:
    return f"{r.timestamp_ms},{r.node_id},{r.seq},{r.temp_c:.1f},{r.moisture_adc},{r.lux}"


def format_event_row(ev: ActuationEvent) -> str:
    if ev.cause_param_value is None:
        cause_value = ""
    elif ev.actuator is Actuator.COOLER:
        cause_value = f"{ev.cause_param_value:.1f}"
    else:
        cause_value = str(int(ev.cause_param_value))
    cause_seq = "" if ev.cause_reading_seq is None else str(ev.cause_reading_seq)
    return (f"{ev.ts_ms},{ev.actuator.value},{ev.action.value},"
            f"{ev.source.value},{cause_seq},{cause_value}")


def format_mode_row(mc: ModeChange) -> str:
    return f"{mc.ts_ms},{mc.mode.value},{mc.changed_by}"


def format_visit_row(v: VisitRecord) -> str:
    temp = "" if v.temp_c is None else f"{v.temp_c:.1f}"
    adc = "" if v.moisture_adc is None else str(v.moisture_adc)
    lux = "" if v.lux is None else str(v.lux)
    return f"{v.user},{v.ts_ms},{temp},{adc},{lux}"


def parse_reading_row(cells: list[str]) -> SensorReading:
    return SensorReading(node_id=cells[1], seq=int(cells[2]),
                         timestamp_ms=int(cells[0]), temp_c=float(cells[3]),
                         moisture_adc=int(cells[4]), lux=int(cells[5]))


def parse_event_row(cells: list[str]) -> ActuationEvent:
    return ActuationEvent(
        ts_ms=int(cells[0]), actuator=Actuator(cells[1]), action=Action(cells[2]),
        source=Mode(cells[3]),
        cause_reading_seq=int(cells[4]) if cells[4] else None,
        cause_param_value=float(cells[5]) if cells[5] else None)


def parse_mode_row(cells: list[str]) -> ModeChange:
    return ModeChange(ts_ms=int(cells[0]), mode=Mode(cells[1]), changed_by=cells[2])


def parse_visit_row(cells: list[str]) -> VisitRecord:
    return VisitRecord(user=cells[0], ts_ms=int(cells[1]),
                       temp_c=float(cells[2]) if cells[2] else None,
                       moisture_adc=int(cells[3]) if cells[3] else None,
                       lux=int(cells[4]) if cells[4] else None)


def _read_rows(path: Path, header: str, n_cols: int):
    """Yield cell lists from a store CSV, skipping a torn trailing line."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        text = f.read()
    lines = text.split("\n")
    if not lines or lines[0] != header:
        raise StoreFormatError(f"{path}: bad header {lines[0]!r}")
    incomplete_tail = not text.endswith("\n")
    for i, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        if incomplete_tail and i == len(lines):
            break  # torn write at the very end (e.g. power cut mid-line)
        cells = line.split(",")
        if len(cells) != n_cols:
            raise StoreFormatError(f"{path}:{i}: expected {n_cols} cells")
        yield cells


class DataStore:
    """Thread-safe append-only store; one instance owns the file handles."""

    def __init__(self, directory, mem_window_h: float = 48.0, fsync: bool = False):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        if mem_window_h <= 0:
            raise ValueError("mem_window_h must be > 0")
        self.mem_window_ms = int(mem_window_h * 3600 * 1000)
        self._fsync = fsync
        self._lock = threading.Lock()
        self._readings: list[SensorReading] = []
        self._events: list[ActuationEvent] = []
        self._modes: list[ModeChange] = []
        self._visits: dict[str, VisitRecord] = {}
        self._seen: set[tuple[str, int]] = set()
        self._row_count = 0
        self._load_existing()
        self._files = {
            name: self._open_stream(name, header)
            for name, header in (("readings", READINGS_HEADER),
                                 ("events", EVENTS_HEADER),
                                 ("modes", MODES_HEADER),
                                 ("visits", VISITS_HEADER))
        }

    def _path(self, name: str) -> Path:
        return self.dir / f"{name}.csv"

    def _load_existing(self):
        p = self._path("readings")
        if p.exists():
            for cells in _read_rows(p, READINGS_HEADER, 6):
                r = parse_reading_row(cells)
                self._readings.append(r)
                self._seen.add((r.node_id, r.seq))
                self._row_count += 1
        p = self._path("events")
        if p.exists():
            self._events = [parse_event_row(c) for c in _read_rows(p, EVENTS_HEADER, 6)]
        p = self._path("modes")
        if p.exists():
            self._modes = [parse_mode_row(c) for c in _read_rows(p, MODES_HEADER, 3)]
        p = self._path("visits")
        if p.exists():
            for cells in _read_rows(p, VISITS_HEADER, 5):
                v = parse_visit_row(cells)
                self._visits[v.user] = v  # append-only file, latest wins
        self._prune()

    def _open_stream(self, name: str, header: str):
        path = self._path(name)
        fresh = not path.exists() or path.stat().st_size == 0
        f = open(path, "a", encoding="utf-8", newline="")
        if fresh:
            f.write(header + "\n")
            f.flush()
        return f

    def _write(self, name: str, row: str):
        f = self._files[name]
        f.write(row + "\n")
        f.flush()
        if self._fsync:
            os.fsync(f.fileno())

    def _prune(self):
        if not self._readings:
            return
        horizon = max(r.timestamp_ms for r in self._readings) - self.mem_window_ms
        if self._readings[0].timestamp_ms >= horizon:
            return
        self._readings = [r for r in self._readings if r.timestamp_ms >= horizon]

    # -- readings ----------------------------------------------------------

    def append_reading(self, r: SensorReading) -> int | None:
        """Durably append one reading; returns its row id, or None if the
        (node_id, seq) pair was already stored (the duplicate is dropped)."""
        with self._lock:
            key = (r.node_id, r.seq)
            if key in self._seen:
                return None
            self._seen.add(key)
            self._write("readings", format_reading_row(r))
            self._readings.append(r)
            self._row_count += 1
            self._prune()
            return self._row_count

    def reading_count(self) -> int:
        with self._lock:
            return self._row_count

    def latest_reading(self) -> SensorReading | None:
        with self._lock:
            return self._readings[-1] if self._readings else None

    def readings(self) -> list[SensorReading]:
        with self._lock:
            return list(self._readings)

    def query_window(self, param: str, now_ms: int, window_s: int) -> list[tuple[int, float]]:
        """Readings of one channel with now-window <= ts <= now, ascending."""
        if param not in PARAM_FIELD:
            raise UnknownParameterError(param)
        if window_s <= 0:
            raise ValueError("window_s must be > 0")
        lo = now_ms - window_s * 1000
        field = PARAM_FIELD[param]
        with self._lock:
            rows = [(r.timestamp_ms, getattr(r, field))
                    for r in self._readings if lo <= r.timestamp_ms <= now_ms]
        rows.sort(key=lambda p: p[0])
        return rows

    # -- events and mode changes -------------------------------------------

    def append_event(self, ev: ActuationEvent) -> None:
        with self._lock:
            self._write("events", format_event_row(ev))
            self._events.append(ev)

    def events(self) -> list[ActuationEvent]:
        with self._lock:
            return list(self._events)

    def append_mode(self, mc: ModeChange) -> None:
        with self._lock:
            self._write("modes", format_mode_row(mc))
            self._modes.append(mc)

    def modes(self) -> list[ModeChange]:
        with self._lock:
            return list(self._modes)

    # -- visits --------------------------------------------------------------

    def record_visit(self, v: VisitRecord) -> None:
        with self._lock:
            self._write("visits", format_visit_row(v))
            self._visits[v.user] = v

    def last_visit(self, user: str) -> VisitRecord | None:
        with self._lock:
            return self._visits.get(user)

    def close(self):
        with self._lock:
            for f in self._files.values():
                f.close()
