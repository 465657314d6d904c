"""Threshold automation with hysteresis and auto/manual mutual exclusion.

Each sensor channel has a one-sided rule (there is no heater and no shade):

* cooler ON when temperature rises above temp_max_c, OFF once it has
  fallen to temp_max_c - temp_hyst_c;
* pump ON when moisture drops below moisture_min_adc, OFF once it has
  risen to moisture_min_adc + moisture_hyst_adc;
* grow light ON when lux drops below lux_min, OFF at lux_min + lux_hyst.

Setting a hysteresis band to zero recovers a bare threshold rule.

The engine serializes every decision behind one lock.  Automatic decisions
are stamped with the causing reading's timestamp, which makes replaying a
reading log through the engine byte-for-byte deterministic.  Because
callers read the clock before they acquire the decision lock, raw
timestamps can disagree with serialization order by a few milliseconds
under contention; emitted timestamps are therefore clamped so that the
event and mode logs replay consistently: an event never lands outside its
own mode's interval, and mode changes are strictly ordered.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .model import (
    ADC_MAX,
    LUX_MAX,
    LUX_MIN,
    TEMP_MAX_C,
    TEMP_MIN_C,
    Action,
    Actuator,
    ActuatorFlags,
    Mode,
    RelayCommand,
    SensorReading,
    apply_command,
)

ACTUATOR_PARAM = {
    Actuator.COOLER: "temp",
    Actuator.PUMP: "moisture",
    Actuator.LIGHT: "light",
}


@dataclass(frozen=True)
class Thresholds:
    temp_max_c: float = 30.0
    temp_hyst_c: float = 1.0
    moisture_min_adc: int = 300
    moisture_hyst_adc: int = 30
    lux_min: int = 5000
    lux_hyst: int = 250

    def __post_init__(self):
        if not TEMP_MIN_C < self.temp_max_c < TEMP_MAX_C:
            raise ValueError(f"temp_max_c out of range: {self.temp_max_c}")
        if not 0 <= self.moisture_min_adc <= ADC_MAX:
            raise ValueError(f"moisture_min_adc out of range: {self.moisture_min_adc}")
        if not LUX_MIN <= self.lux_min <= LUX_MAX:
            raise ValueError(f"lux_min out of range: {self.lux_min}")
        if self.temp_hyst_c < 0 or self.moisture_hyst_adc < 0 or self.lux_hyst < 0:
            raise ValueError("hysteresis bands must be >= 0")


@dataclass(frozen=True)
class ActuationEvent:
    ts_ms: int
    actuator: Actuator
    action: Action
    source: Mode  # AUTO or MANUAL
    cause_reading_seq: int | None = None
    cause_param_value: float | None = None


@dataclass(frozen=True)
class ModeChange:
    ts_ms: int
    mode: Mode
    changed_by: str


class ManualResult(Enum):
    ACCEPTED = "accepted"
    NOOP = "no-op"
    REJECTED_AUTO = "rejected-auto"
    NOT_CONNECTED = "not-connected"


def evaluate(reading: SensorReading, th: Thresholds, flags: ActuatorFlags,
             mode: Mode) -> list[tuple[Actuator, Action]]:
    """Pure hysteresis relation: the transitions required by one reading.

    Empty in MANUAL mode; otherwise one entry per channel whose required
    state differs from `flags` (never a redundant command).
    """
    if mode is Mode.MANUAL:
        return []
    out: list[tuple[Actuator, Action]] = []
    if reading.temp_c > th.temp_max_c and not flags.cooler:
        out.append((Actuator.COOLER, Action.ON))
    elif reading.temp_c <= th.temp_max_c - th.temp_hyst_c and flags.cooler:
        out.append((Actuator.COOLER, Action.OFF))
    if reading.moisture_adc < th.moisture_min_adc and not flags.pump:
        out.append((Actuator.PUMP, Action.ON))
    elif reading.moisture_adc >= th.moisture_min_adc + th.moisture_hyst_adc and flags.pump:
        out.append((Actuator.PUMP, Action.OFF))
    if reading.lux < th.lux_min and not flags.light:
        out.append((Actuator.LIGHT, Action.ON))
    elif reading.lux >= th.lux_min + th.lux_hyst and flags.light:
        out.append((Actuator.LIGHT, Action.OFF))
    return out


class ControlEngine:
    """Stateful decision core shared by the gateway and the replay command."""

    def __init__(self, thresholds: Thresholds | None = None,
                 initial_mode: Mode = Mode.AUTO,
                 on_event: Callable[[ActuationEvent], None] | None = None,
                 on_mode: Callable[[ModeChange], None] | None = None):
        self.thresholds = thresholds or Thresholds()
        self._mode = initial_mode
        self._mode_changed_at = 0
        self._last_event_ts = -1
        self._flags = ActuatorFlags()
        self._last_reading: SensorReading | None = None
        self._cmd_ids = itertools.count(1)
        self._on_event = on_event or (lambda ev: None)
        self._on_mode = on_mode or (lambda mc: None)
        self._lock = threading.RLock()

    @property
    def mode(self) -> Mode:
        with self._lock:
            return self._mode

    @property
    def flags(self) -> ActuatorFlags:
        with self._lock:
            return self._flags

    @property
    def last_reading(self) -> SensorReading | None:
        with self._lock:
            return self._last_reading

    def _event_ts(self, supplied_ms: int) -> int:
        # Inside the current mode interval, never before it.
        ts = max(supplied_ms, self._mode_changed_at)
        self._last_event_ts = max(self._last_event_ts, ts)
        return ts

    def _issue(self, target: Actuator, action: Action, ts_ms: int,
               reading: SensorReading) -> RelayCommand:
        cmd = RelayCommand(next(self._cmd_ids), target, action)
        self._flags = apply_command(cmd, self._flags)
        self._on_event(ActuationEvent(
            ts_ms=self._event_ts(ts_ms), actuator=target, action=action,
            source=Mode.AUTO, cause_reading_seq=reading.seq,
            cause_param_value=reading.value(ACTUATOR_PARAM[target])))
        return cmd

    def on_reading(self, reading: SensorReading) -> list[RelayCommand]:
        """Record the reading; in AUTO, return the corrective commands."""
        with self._lock:
            self._last_reading = reading
            if self._mode is Mode.MANUAL:
                return []
            return [self._issue(target, action, reading.timestamp_ms, reading)
                    for target, action in
                    evaluate(reading, self.thresholds, self._flags, self._mode)]

    def set_mode(self, new: Mode, by: str, now_ms: int) -> list[RelayCommand]:
        """Switch mode; entering AUTO immediately re-evaluates the latest
        reading so a stale manual state is corrected without waiting a tick.
        Same-mode calls are no-ops and log nothing."""
        with self._lock:
            if new is self._mode:
                return []
            # Strictly after every timestamp already emitted, so mode
            # intervals are well ordered and never swallow a prior event.
            now_ms = max(now_ms, self._mode_changed_at + 1, self._last_event_ts + 1)
            self._mode = new
            self._mode_changed_at = now_ms
            self._on_mode(ModeChange(ts_ms=now_ms, mode=new, changed_by=by))
            if new is Mode.AUTO and self._last_reading is not None:
                r = self._last_reading
                return [self._issue(target, action, r.timestamp_ms, r)
                        for target, action in
                        evaluate(r, self.thresholds, self._flags, self._mode)]
            return []

    def manual_command(self, target: Actuator, action: Action, now_ms: int,
                       dispatch: Callable[[RelayCommand], bool] | None = None,
                       ) -> tuple[ManualResult, RelayCommand | None]:
        """Operator override.  Rejected outright in AUTO mode; a command for
        a target already in the requested state is a no-op (no event).

        `dispatch` delivers the command to the node while the decision lock
        is held; returning False (node gone) aborts before any state change.
        """
        with self._lock:
            if self._mode is not Mode.MANUAL:
                return ManualResult.REJECTED_AUTO, None
            if self._flags.get(target) == (action is Action.ON):
                return ManualResult.NOOP, None
            cmd = RelayCommand(next(self._cmd_ids), target, action)
            if dispatch is not None and not dispatch(cmd):
                return ManualResult.NOT_CONNECTED, None
            self._flags = apply_command(cmd, self._flags)
            self._on_event(ActuationEvent(ts_ms=self._event_ts(now_ms),
                                          actuator=target, action=action,
                                          source=Mode.MANUAL))
            return ManualResult.ACCEPTED, cmd
