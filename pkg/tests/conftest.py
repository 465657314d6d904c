import time
from pathlib import Path

import pytest

from microfarm.clock import ScaledClock
from microfarm.gateway import Gateway
from microfarm.node import SensorNode, tcp_connector
from microfarm.simulation import ActuatorEffects, AmbientProfile, EnvState, GrowChamber
from microfarm.store import DataStore

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def repo_root() -> Path:
    return REPO_ROOT


class LiveStack:
    """Gateway + store (+ optionally an embedded chamber/node) on loopback."""

    def __init__(self, tmp_path: Path, scale: float = 300.0, cadence_ms: int = 5000,
                 with_node: bool = True, initial=None, ambient=None, effects=None,
                 **gateway_kwargs):
        self.clock = ScaledClock(scale=scale)
        self.store = DataStore(tmp_path / "store")
        self.gateway = Gateway(self.store, self.clock, cadence_ms=cadence_ms,
                               **gateway_kwargs).start()
        self.node = None
        self.chamber = None
        if with_node:
            state = initial or EnvState(temp_c=32.0, moisture_adc=500.0, lux=50,
                                        sim_time_ms=self.clock.now_ms())
            self.chamber = GrowChamber(state, ambient=ambient or AmbientProfile(),
                                       effects=effects or ActuatorEffects())
            self.node = SensorNode(self.chamber, self.clock,
                                   tcp_connector("127.0.0.1", self.gateway.node_port),
                                   cadence_ms=cadence_ms).start()

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.gateway.api_port}"

    def wait_for_readings(self, n: int, timeout_s: float = 10.0) -> None:
        deadline = time.monotonic() + timeout_s
        while self.store.reading_count() < n:
            if time.monotonic() > deadline:
                raise TimeoutError(
                    f"only {self.store.reading_count()}/{n} readings arrived")
            time.sleep(0.02)

    def stop(self):
        if self.node is not None:
            self.node.stop()
        self.gateway.stop()
        self.store.close()


@pytest.fixture
def live_stack_factory(tmp_path):
    stacks = []

    def make(**kwargs) -> LiveStack:
        stack = LiveStack(tmp_path, **kwargs)
        stacks.append(stack)
        return stack

    yield make
    for stack in stacks:
        stack.stop()
