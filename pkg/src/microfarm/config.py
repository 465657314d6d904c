"""Flat key=value scenario configuration.

Lines are `section.key=value`; blank lines and `#` comments are ignored.
Unknown keys are startup errors (typo protection), and every value is
validated against the owning module's invariants before anything starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .control import Thresholds
from .model import ADC_MAX, LUX_MAX, LUX_MIN, TEMP_MAX_C, TEMP_MIN_C, Mode
from .simulation import ActuatorEffects, AmbientProfile


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    ambient: AmbientProfile = field(default_factory=AmbientProfile)
    effects: ActuatorEffects = field(default_factory=ActuatorEffects)
    initial_temp_c: float = 32.0
    initial_moisture_adc: float = 500.0
    initial_lux: int = 50
    thresholds: Thresholds = field(default_factory=Thresholds)
    initial_mode: Mode = Mode.AUTO
    store_dir: str = "./data-run"
    mem_window_h: float = 48.0
    host: str = "127.0.0.1"
    node_port: int = 7070
    api_port: int = 8080
    time_scale: float = 1.0
    ui_dir: str | None = None
    cadence_ms: int = 5000
    node_id: str = "node-1"


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    return int(s, 10)


def _str(s: str) -> str:
    return s


def _mode(s: str) -> Mode:
    try:
        return Mode(s)
    except ValueError:
        raise ValueError(f"must be AUTO or MANUAL, got {s!r}") from None


# key -> (constructor-kwarg bucket, field name, caster)
_KEYS = {
    "sim.temp_mean_c": ("ambient", "temp_mean_c", _float),
    "sim.temp_amplitude_c": ("ambient", "temp_amplitude_c", _float),
    "sim.lux_peak": ("ambient", "lux_peak", _int),
    "sim.lux_night": ("ambient", "lux_night", _int),
    "sim.day_length_ms": ("ambient", "day_length_ms", _int),
    "sim.moisture_decay_per_s": ("ambient", "moisture_decay_per_s", _float),
    "sim.cooler_delta_c_per_s": ("effects", "cooler_delta_c_per_s", _float),
    "sim.pump_delta_adc_per_s": ("effects", "pump_delta_adc_per_s", _float),
    "sim.growlight_lux": ("effects", "growlight_lux", _int),
    "sim.ambient_coupling_per_s": ("effects", "ambient_coupling_per_s", _float),
    "sim.initial_temp_c": ("top", "initial_temp_c", _float),
    "sim.initial_moisture_adc": ("top", "initial_moisture_adc", _float),
    "sim.initial_lux": ("top", "initial_lux", _int),
    "control.temp_max_c": ("thresholds", "temp_max_c", _float),
    "control.temp_hyst_c": ("thresholds", "temp_hyst_c", _float),
    "control.moisture_min_adc": ("thresholds", "moisture_min_adc", _int),
    "control.moisture_hyst_adc": ("thresholds", "moisture_hyst_adc", _int),
    "control.lux_min": ("thresholds", "lux_min", _int),
    "control.lux_hyst": ("thresholds", "lux_hyst", _int),
    "control.initial_mode": ("top", "initial_mode", _mode),
    "store.dir": ("top", "store_dir", _str),
    "store.mem_window_h": ("top", "mem_window_h", _float),
    "net.host": ("top", "host", _str),
    "net.node_port": ("top", "node_port", _int),
    "net.api_port": ("top", "api_port", _int),
    "net.time_scale": ("top", "time_scale", _float),
    "net.ui_dir": ("top", "ui_dir", _str),
    "node.cadence_ms": ("top", "cadence_ms", _int),
    "node.node_id": ("top", "node_id", _str),
}


def parse_config_text(text: str, source: str = "<config>") -> Config:
    buckets: dict[str, dict] = {"ambient": {}, "effects": {}, "thresholds": {},
                                "top": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        bucket, fname, caster = _KEYS[key]
        try:
            buckets[bucket][fname] = caster(value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None

    try:
        cfg = Config(ambient=AmbientProfile(**buckets["ambient"]),
                     effects=ActuatorEffects(**buckets["effects"]),
                     thresholds=Thresholds(**buckets["thresholds"]),
                     **buckets["top"])
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    _validate(cfg, source)
    return cfg


def _validate(cfg: Config, source: str) -> None:
    checks = [
        (TEMP_MIN_C <= cfg.initial_temp_c <= TEMP_MAX_C,
         f"sim.initial_temp_c must be in [{TEMP_MIN_C}, {TEMP_MAX_C}]"),
        (0 <= cfg.initial_moisture_adc <= ADC_MAX,
         f"sim.initial_moisture_adc must be in [0, {ADC_MAX}]"),
        (LUX_MIN <= cfg.initial_lux <= LUX_MAX,
         f"sim.initial_lux must be in [{LUX_MIN}, {LUX_MAX}]"),
        (0 <= cfg.node_port <= 65535, "net.node_port must be a port number"),
        (0 <= cfg.api_port <= 65535, "net.api_port must be a port number"),
        (cfg.time_scale > 0, "net.time_scale must be > 0"),
        (cfg.cadence_ms > 0, "node.cadence_ms must be > 0"),
        (cfg.mem_window_h > 0, "store.mem_window_h must be > 0"),
        (bool(cfg.node_id), "node.node_id must be non-empty"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(f"{source}: {message}")


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    return parse_config_text(text, source=str(p))
