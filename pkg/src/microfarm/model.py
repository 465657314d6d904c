"""Domain records shared across the node, gateway, controller and store."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

TEMP_MIN_C = 0.0
TEMP_MAX_C = 50.0
ADC_MIN = 0
ADC_MAX = 1023
LUX_MIN = 1
LUX_MAX = 65535


class Actuator(str, Enum):
    PUMP = "PUMP"
    COOLER = "COOLER"
    LIGHT = "LIGHT"


class Action(str, Enum):
    ON = "ON"
    OFF = "OFF"


class Mode(str, Enum):
    AUTO = "AUTO"
    MANUAL = "MANUAL"


# Sensor channel names as used by the HTTP API and the store.
PARAMS = ("temp", "moisture", "light")

# Which regulator corrects which channel.
PARAM_ACTUATOR = {
    "temp": Actuator.COOLER,
    "moisture": Actuator.PUMP,
    "light": Actuator.LIGHT,
}


@dataclass(frozen=True)
class ActuatorFlags:
    pump: bool = False
    cooler: bool = False
    light: bool = False

    def get(self, target: Actuator) -> bool:
        return getattr(self, target.value.lower())

    def with_target(self, target: Actuator, on: bool) -> "ActuatorFlags":
        return replace(self, **{target.value.lower(): on})


@dataclass(frozen=True)
class SensorReading:
    node_id: str
    seq: int
    timestamp_ms: int
    temp_c: float  # one decimal place on the wire
    moisture_adc: int
    lux: int

    def value(self, param: str) -> float:
        if param == "temp":
            return self.temp_c
        if param == "moisture":
            return float(self.moisture_adc)
        if param == "light":
            return float(self.lux)
        raise KeyError(param)


@dataclass(frozen=True)
class RelayCommand:
    cmd_id: int
    target: Actuator
    action: Action


def apply_command(cmd: RelayCommand, flags: ActuatorFlags) -> ActuatorFlags:
    """Relay semantics: set exactly the target bit; re-applying is a no-op."""
    return flags.with_target(cmd.target, cmd.action is Action.ON)
