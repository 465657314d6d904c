import pytest

from microfarm.config import Config, ConfigError, load_config, parse_config_text
from microfarm.control import Mode


class TestParsing:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg.cadence_ms == 5000
        assert cfg.thresholds.temp_max_c == 30.0
        assert cfg.thresholds.moisture_min_adc == 300
        assert cfg.thresholds.lux_min == 5000
        assert cfg.initial_mode is Mode.AUTO

    def test_round_trip_of_every_namespace(self):
        cfg = parse_config_text("""
# scenario tuned for a fast test day
sim.temp_mean_c = 28.0
sim.temp_amplitude_c = 3.0
sim.lux_peak = 30000
sim.day_length_ms = 60000
control.temp_max_c = 29.5
control.initial_mode = MANUAL
store.dir = /tmp/x
net.time_scale = 600
net.node_port = 0
node.cadence_ms = 1000
node.node_id = chamber-7
""")
        assert cfg.ambient.temp_mean_c == 28.0
        assert cfg.ambient.day_length_ms == 60000
        assert cfg.thresholds.temp_max_c == 29.5
        assert cfg.initial_mode is Mode.MANUAL
        assert cfg.store_dir == "/tmp/x"
        assert cfg.time_scale == 600
        assert cfg.cadence_ms == 1000
        assert cfg.node_id == "chamber-7"

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError) as ei:
            parse_config_text("controll.temp = 1\n")
        assert "controll.temp" in str(ei.value)

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("sim.temp_mean_c 28\n")

    def test_bad_value_type(self):
        with pytest.raises(ConfigError) as ei:
            parse_config_text("node.cadence_ms = soon\n")
        assert "node.cadence_ms" in str(ei.value)

    def test_module_invariants_enforced(self):
        with pytest.raises(ConfigError):
            parse_config_text("control.temp_max_c = 99\n")
        with pytest.raises(ConfigError):
            parse_config_text("sim.lux_night = 0\n")
        with pytest.raises(ConfigError):
            parse_config_text("node.cadence_ms = 0\n")
        with pytest.raises(ConfigError):
            parse_config_text("net.time_scale = -2\n")
        with pytest.raises(ConfigError):
            parse_config_text("sim.initial_temp_c = 60\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("\n# hello\n\nsim.lux_night = 20\n")
        assert cfg.ambient.lux_night == 20

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/no/such/file.conf")
