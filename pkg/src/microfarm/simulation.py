"""Deterministic grow-chamber model.

Three channels driven by a diurnal ambient profile and three regulators:

* temperature: first-order relaxation toward the ambient air temperature,
  with a constant extra pull while the cooler runs;
* soil moisture: constant-rate drying, constant-rate refill while the pump
  runs (the wick bed is folded into these two rates);
* light: memoryless -- ambient sky level plus the grow light's contribution.

The temperature update is the exact closed-form flow of the underlying
linear ODE (sinusoidal forcing + constant actuator term), not an Euler
step.  Consequence: stepping dt twice equals stepping 2*dt once, up to
float roundoff, which keeps results independent of the driver's tick size.

Moisture is kept at float precision inside the chamber; the 10-bit integer
quantization happens where the ADC lives, at the sensor sampling boundary.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace

from .model import (
    ADC_MAX,
    ADC_MIN,
    LUX_MAX,
    LUX_MIN,
    TEMP_MAX_C,
    TEMP_MIN_C,
    ActuatorFlags,
)

DAY_MS = 86_400_000


def clamp(v, lo, hi):
    return max(lo, min(hi, v))


@dataclass(frozen=True)
class EnvState:
    temp_c: float
    moisture_adc: float  # float inside the sim; quantized at the sensor
    lux: int
    sim_time_ms: int

    def __post_init__(self):
        if not TEMP_MIN_C <= self.temp_c <= TEMP_MAX_C:
            raise ValueError(f"temp_c out of range: {self.temp_c}")
        if not ADC_MIN <= self.moisture_adc <= ADC_MAX:
            raise ValueError(f"moisture_adc out of range: {self.moisture_adc}")
        if not LUX_MIN <= self.lux <= LUX_MAX:
            raise ValueError(f"lux out of range: {self.lux}")
        if self.sim_time_ms < 0:
            raise ValueError("sim_time_ms must be >= 0")


@dataclass(frozen=True)
class AmbientProfile:
    temp_mean_c: float = 34.0
    temp_amplitude_c: float = 2.0
    lux_peak: int = 20000
    lux_night: int = 50
    day_length_ms: int = DAY_MS
    moisture_decay_per_s: float = 0.05

    def __post_init__(self):
        if self.lux_night < LUX_MIN:
            raise ValueError("lux_night must be >= 1")
        if self.lux_peak > LUX_MAX:
            raise ValueError("lux_peak must be <= 65535")
        if self.day_length_ms <= 0:
            raise ValueError("day_length_ms must be > 0")
        if self.moisture_decay_per_s < 0:
            raise ValueError("moisture_decay_per_s must be >= 0")


@dataclass(frozen=True)
class ActuatorEffects:
    cooler_delta_c_per_s: float = 0.02  # extra downward pull while cooling
    pump_delta_adc_per_s: float = 2.0
    growlight_lux: int = 6000  # additive when on
    ambient_coupling_per_s: float = 0.001

    def __post_init__(self):
        if self.cooler_delta_c_per_s <= 0:
            raise ValueError("cooler_delta_c_per_s must be > 0")
        if self.pump_delta_adc_per_s <= 0:
            raise ValueError("pump_delta_adc_per_s must be > 0")
        if not 0 < self.ambient_coupling_per_s <= 1:
            raise ValueError("ambient_coupling_per_s must be in (0, 1]")
        if not 0 <= self.growlight_lux <= LUX_MAX:
            raise ValueError("growlight_lux must be in [0, 65535]")


def ambient_temp(sim_time_ms: int, ambient: AmbientProfile) -> float:
    """Diurnal air temperature: coldest at phase 0, hottest at half period."""
    w = 2.0 * math.pi / ambient.day_length_ms
    return ambient.temp_mean_c - ambient.temp_amplitude_c * math.cos(w * sim_time_ms)


def ambient_light(sim_time_ms: int, ambient: AmbientProfile) -> int:
    """Sky illuminance: raised cosine from lux_night (phase 0) to lux_peak (noon)."""
    w = 2.0 * math.pi / ambient.day_length_ms
    frac = 0.5 * (1.0 - math.cos(w * sim_time_ms))
    lux = ambient.lux_night + (ambient.lux_peak - ambient.lux_night) * frac
    return int(clamp(round(lux), LUX_MIN, LUX_MAX))


def _temp_forced_response(t_ms: int, ambient: AmbientProfile,
                          effects: ActuatorEffects, cooler_on: bool) -> float:
    # Particular solution of T' = k*(A(t) - T) - c*u with
    # A(t) = mean - amp*cos(w*t):  P(t) = mean - c*u/k - k*amp*(k*cos + w*sin)/(k^2+w^2)
    k = effects.ambient_coupling_per_s / 1000.0
    w = 2.0 * math.pi / ambient.day_length_ms
    c = effects.cooler_delta_c_per_s / 1000.0 if cooler_on else 0.0
    amp = ambient.temp_amplitude_c
    osc = k * amp * (k * math.cos(w * t_ms) + w * math.sin(w * t_ms)) / (k * k + w * w)
    return ambient.temp_mean_c - c / k - osc


def step(state: EnvState, actuators: ActuatorFlags, ambient: AmbientProfile,
         effects: ActuatorEffects, dt_ms: int) -> EnvState:
    """Advance the chamber by dt_ms with the given regulator states held fixed."""
    if dt_ms < 0:
        raise ValueError("dt_ms must be >= 0")
    if dt_ms == 0:
        return state
    t0 = state.sim_time_ms
    t1 = t0 + dt_ms

    k = effects.ambient_coupling_per_s / 1000.0
    p0 = _temp_forced_response(t0, ambient, effects, actuators.cooler)
    p1 = _temp_forced_response(t1, ambient, effects, actuators.cooler)
    temp = p1 + (state.temp_c - p0) * math.exp(-k * dt_ms)
    temp = clamp(temp, TEMP_MIN_C, TEMP_MAX_C)

    rate_per_ms = (effects.pump_delta_adc_per_s if actuators.pump else 0.0) / 1000.0 \
        - ambient.moisture_decay_per_s / 1000.0
    moisture = clamp(state.moisture_adc + rate_per_ms * dt_ms, ADC_MIN, ADC_MAX)

    lux = ambient_light(t1, ambient)
    if actuators.light:
        lux = int(clamp(lux + effects.growlight_lux, LUX_MIN, LUX_MAX))

    return EnvState(temp_c=temp, moisture_adc=moisture, lux=lux, sim_time_ms=t1)


class GrowChamber:
    """Stateful wrapper: one chamber advanced lazily to the caller's clock.

    Snapshots (EnvState) are immutable; the chamber itself has a single
    logical owner but tolerates flag changes from the node's command path.
    """

    def __init__(self, initial: EnvState, ambient: AmbientProfile | None = None,
                 effects: ActuatorEffects | None = None):
        self.ambient = ambient or AmbientProfile()
        self.effects = effects or ActuatorEffects()
        self._state = initial
        self._flags = ActuatorFlags()
        self._lock = threading.Lock()

    @property
    def flags(self) -> ActuatorFlags:
        with self._lock:
            return self._flags

    def advance_to(self, t_ms: int) -> EnvState:
        with self._lock:
            dt = t_ms - self._state.sim_time_ms
            if dt > 0:
                self._state = step(self._state, self._flags, self.ambient,
                                   self.effects, dt)
            return self._state

    def set_flags(self, flags: ActuatorFlags, t_ms: int) -> None:
        # Advance under the old flags first so the change takes effect at t_ms.
        with self._lock:
            dt = t_ms - self._state.sim_time_ms
            if dt > 0:
                self._state = step(self._state, self._flags, self.ambient,
                                   self.effects, dt)
            self._flags = flags

    def sample(self, t_ms: int) -> tuple[float, int, int]:
        """Sensor view at t_ms: (temp 0.1-degree resolution, moisture ADC int, lux int)."""
        s = self.advance_to(t_ms)
        temp = round(s.temp_c, 1)
        adc = int(clamp(round(s.moisture_adc), ADC_MIN, ADC_MAX))
        return temp, adc, s.lux


def equilibrium_temp(ambient: AmbientProfile, effects: ActuatorEffects,
                     cooler_on: bool) -> float:
    """Steady-state temperature with constant ambient (amplitude folded out)."""
    pull = effects.cooler_delta_c_per_s / effects.ambient_coupling_per_s if cooler_on else 0.0
    return ambient.temp_mean_c - pull
