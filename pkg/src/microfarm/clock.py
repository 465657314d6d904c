"""Virtual time sources.

Every component that needs "now" takes a clock handle instead of calling
time.time(), so a whole day of chamber time can replay in seconds and
timeout logic stays testable without sleeping.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Interface: virtual milliseconds since scenario start."""

    def now_ms(self) -> int:
        raise NotImplementedError

    def sleep_until(self, t_ms: int) -> None:
        raise NotImplementedError

    def wall_delay_s(self, virtual_ms: int) -> float:
        """Wall-clock seconds corresponding to a virtual duration."""
        raise NotImplementedError


class ScaledClock(Clock):
    """Wall-backed clock: virtual time = wall time since start x scale.

    scale=1.0 is real time; scale=600 replays a simulated hour in six seconds.
    """

    def __init__(self, scale: float = 1.0):
        if scale <= 0:
            raise ValueError("time scale must be > 0")
        self.scale = scale
        self._start = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._start) * 1000.0 * self.scale)

    def wall_delay_s(self, virtual_ms: int) -> float:
        return max(0.0, virtual_ms / 1000.0 / self.scale)

    def sleep_until(self, t_ms: int) -> None:
        delay = self.wall_delay_s(t_ms - self.now_ms())
        if delay > 0:
            time.sleep(delay)


class ManualClock(Clock):
    """Test clock driven explicitly via advance()/advance_to().

    With auto_advance=True, sleep_until() jumps time forward instead of
    blocking, so a single-threaded loop runs as fast as possible while
    still seeing exact tick timestamps.
    """

    def __init__(self, start_ms: int = 0, auto_advance: bool = False):
        self._now = start_ms
        self.auto_advance = auto_advance
        self._cond = threading.Condition()

    def now_ms(self) -> int:
        with self._cond:
            return self._now

    def wall_delay_s(self, virtual_ms: int) -> float:
        return 0.0

    def advance_to(self, t_ms: int) -> None:
        with self._cond:
            if t_ms > self._now:
                self._now = t_ms
            self._cond.notify_all()

    def advance(self, delta_ms: int) -> None:
        self.advance_to(self.now_ms() + delta_ms)

    def sleep_until(self, t_ms: int) -> None:
        with self._cond:
            if self.auto_advance:
                if t_ms > self._now:
                    self._now = t_ms
                return
            while self._now < t_ms:
                self._cond.wait(timeout=0.05)
