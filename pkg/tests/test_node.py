import random
import socket
import time

import pytest

from microfarm import protocol
from microfarm.clock import ManualClock
from microfarm.model import Action, Actuator, ActuatorFlags, RelayCommand, apply_command
from microfarm.node import LinkClosed, QueueLink, SensorNode
from microfarm.simulation import AmbientProfile, EnvState, GrowChamber


def make_chamber(temp=32.0, adc=500.0, lux=50, t=0):
    flat = AmbientProfile(temp_mean_c=34.0, temp_amplitude_c=0.0, lux_peak=50,
                          lux_night=50, moisture_decay_per_s=0.0)
    return GrowChamber(EnvState(temp_c=temp, moisture_adc=adc, lux=lux,
                                sim_time_ms=t), ambient=flat)


class GatewaySide:
    """Test double for the gateway end of the link."""

    def __init__(self, link: QueueLink):
        self.link = link
        self.lines: list[str] = []

    def drain(self):
        while True:
            line = self.link.recv_line(0.0)
            if line is None:
                return self.lines
            self.lines.append(line)

    def sensor_frames(self):
        self.drain()
        return [protocol.parse_node_line(l) for l in self.lines
                if l.startswith("SENSOR")]

    def of_kind(self, kind: str):
        self.drain()
        return [l for l in self.lines if l.startswith(kind)]


def run_node(node: SensorNode, until_ms: int):
    node.run(until_ms=until_ms)


class TestApplyCommand:
    def test_single_bit_set(self):
        out = apply_command(RelayCommand(1, Actuator.PUMP, Action.ON), ActuatorFlags())
        assert out == ActuatorFlags(pump=True, cooler=False, light=False)

    def test_idempotent(self):
        cmd = RelayCommand(1, Actuator.PUMP, Action.ON)
        once = apply_command(cmd, ActuatorFlags())
        assert apply_command(cmd, once) == once

    def test_random_sequence_matches_last_action_map_oracle(self):
        rng = random.Random(31337)
        flags = ActuatorFlags()
        last_action: dict[Actuator, Action] = {}
        for i in range(2000):
            cmd = RelayCommand(i, rng.choice(list(Actuator)),
                               rng.choice(list(Action)))
            flags = apply_command(cmd, flags)
            last_action[cmd.target] = cmd.action
        for target in Actuator:
            expected = last_action.get(target, Action.OFF) is Action.ON
            assert flags.get(target) == expected


class TestRunLoop:
    def test_cadence_12_frames_over_60s(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw = GatewaySide(gw_link)
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link,
                          cadence_ms=5000)
        run_node(node, until_ms=60_000)
        frames = gw.sensor_frames()
        assert len(frames) == 12
        assert [f.seq for f in frames] == list(range(1, 13))
        assert [f.timestamp_ms for f in frames] == [i * 5000 for i in range(12)]
        assert gw.of_kind("HELLO") == ["HELLO node-1 1"]

    def test_no_commands_leaves_actuators_off(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link)
        run_node(node, until_ms=30_000)
        assert node.flags == ActuatorFlags()

    def test_command_round_trip_acks_and_states(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw = GatewaySide(gw_link)
        gw_link.send_line("CMD 1 PUMP ON")
        gw_link.send_line("CMD 2 PUMP OFF")
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link)
        run_node(node, until_ms=5_000)
        assert gw.of_kind("ACK") == ["ACK 1", "ACK 2"]
        states = [protocol.parse_node_line(l) for l in gw.of_kind("STATE")]
        assert [s.flags.pump for s in states] == [True, False]
        assert node.flags.pump is False

    def test_commands_apply_before_next_sample(self):
        # The pump switched on just after t=0 must be reflected in the
        # chamber dynamics of the very next sample.
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw = GatewaySide(gw_link)
        node = SensorNode(make_chamber(adc=100.0), clock, connect=lambda: node_link,
                          cadence_ms=5000)
        gw_link.send_line("CMD 9 PUMP ON")
        run_node(node, until_ms=10_000)
        frames = gw.sensor_frames()
        assert frames[0].moisture_adc == 100  # sampled at t=0, pump just applied
        assert frames[1].moisture_adc == 110  # 2 ADC/s for 5 s

    def test_duplicate_command_acked_but_no_state(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw = GatewaySide(gw_link)
        gw_link.send_line("CMD 1 LIGHT ON")
        gw_link.send_line("CMD 2 LIGHT ON")  # no-op repeat
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link)
        run_node(node, until_ms=5_000)
        assert gw.of_kind("ACK") == ["ACK 1", "ACK 2"]
        assert len(gw.of_kind("STATE")) == 1

    def test_unknown_gateway_line_answered_with_err(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw = GatewaySide(gw_link)
        gw_link.send_line("FROBNICATE now")
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link)
        run_node(node, until_ms=5_000)
        assert any(l.startswith("ERR ") for l in gw.of_kind("ERR"))

    def test_ping_answered_with_pong(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw = GatewaySide(gw_link)
        gw_link.send_line("PING")
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link)
        run_node(node, until_ms=5_000)
        assert gw.of_kind("PONG") == ["PONG"]

    def test_welcome_sets_session_id(self):
        clock = ManualClock(auto_advance=True)
        node_link, gw_link = QueueLink.pipe()
        gw_link.send_line("WELCOME s42")
        node = SensorNode(make_chamber(), clock, connect=lambda: node_link)
        run_node(node, until_ms=5_000)
        assert node.session_id == "s42"


class FlakyConnector:
    """Fails the first `failures` attempts, then hands out fresh pipes."""

    def __init__(self, failures: int = 0):
        self.failures = failures
        self.attempt_times: list[int] = []
        self.gateway_sides: list[QueueLink] = []
        self.clock: ManualClock | None = None

    def __call__(self) -> QueueLink:
        assert self.clock is not None
        self.attempt_times.append(self.clock.now_ms())
        if len(self.attempt_times) <= self.failures:
            raise ConnectionRefusedError("nope")
        node_side, gw_side = QueueLink.pipe()
        self.gateway_sides.append(gw_side)
        return node_side


class TestReconnect:
    def test_backoff_doubles_and_caps(self):
        clock = ManualClock(auto_advance=True)
        connector = FlakyConnector(failures=8)
        connector.clock = clock
        node = SensorNode(make_chamber(), clock, connect=connector, cadence_ms=5000)
        run_node(node, until_ms=80_000)
        gaps = [b - a for a, b in zip(connector.attempt_times,
                                      connector.attempt_times[1:])]
        assert gaps[:6] == [1000, 2000, 4000, 8000, 16000, 30000]
        assert all(g == 30000 for g in gaps[5:])

    def test_seq_advances_through_outage_and_gap_is_reconstructable(self):
        clock = ManualClock(auto_advance=True)
        connector = FlakyConnector()
        connector.clock = clock
        node = SensorNode(make_chamber(), clock, connect=connector, cadence_ms=5000)
        run_node(node, until_ms=20_000)  # 4 frames on link 1
        first = GatewaySide(connector.gateway_sides[0]).sensor_frames()
        connector.gateway_sides[0].close()  # sever; sends start failing
        run_node(node, until_ms=21_000)   # discover the break, drop one sample
        run_node(node, until_ms=60_000)   # reconnect and carry on
        second = GatewaySide(connector.gateway_sides[-1]).sensor_frames()
        assert len(connector.gateway_sides) >= 2
        assert node.frames_dropped > 0
        last_seq_before = first[-1].seq
        first_seq_after = second[0].seq
        # The seq gap is exactly the number of dropped samples.
        assert first_seq_after - last_seq_before - 1 == node.frames_dropped
        assert [f.seq for f in second] == \
            list(range(first_seq_after, first_seq_after + len(second)))

    def test_backoff_resets_after_successful_connect(self):
        clock = ManualClock(auto_advance=True)
        connector = FlakyConnector(failures=3)
        connector.clock = clock
        node = SensorNode(make_chamber(), clock, connect=connector, cadence_ms=5000)
        run_node(node, until_ms=10_000)
        assert node.connected
        connector.gateway_sides[-1].close()
        run_node(node, until_ms=60_000)
        # Three failures back off 1/2/4 s; after the successful connect at
        # 7 s and the drop detected at 10 s, the retry delay is 1 s again.
        assert connector.attempt_times == [0, 1000, 3000, 7000, 11000]


class TestNoListener:
    def test_node_accepts_no_inbound_connections(self, live_stack_factory):
        stack = live_stack_factory(scale=50.0)
        stack.wait_for_readings(1)
        local_port = stack.node.link.local_port
        with pytest.raises(OSError):
            s = socket.create_connection(("127.0.0.1", local_port), timeout=0.5)
            s.close()
