import os
import signal
import subprocess
import sys
import time

import pytest
from hypothesis import given, settings, strategies as st

from microfarm.control import ActuationEvent, ModeChange
from microfarm.model import Action, Actuator, Mode, SensorReading
from microfarm.store import (
    DataStore,
    UnknownParameterError,
    VisitRecord,
)


def reading(seq, ts=None, temp=25.0, adc=500, lux=6000, node="node-1"):
    return SensorReading(node_id=node, seq=seq,
                         timestamp_ms=ts if ts is not None else seq * 5000,
                         temp_c=temp, moisture_adc=adc, lux=lux)


@pytest.fixture
def store(tmp_path):
    s = DataStore(tmp_path / "data")
    yield s
    s.close()


class TestAppendReading:
    def test_first_reading_gets_id_1_and_is_queryable(self, store):
        assert store.append_reading(reading(1)) == 1
        rows = store.query_window("temp", now_ms=10_000, window_s=60)
        assert rows == [(5000, 25.0)]

    def test_duplicate_node_seq_rejected(self, store):
        assert store.append_reading(reading(1)) == 1
        assert store.append_reading(reading(1, temp=30.0)) is None
        assert store.reading_count() == 1

    def test_same_seq_different_node_accepted(self, store):
        assert store.append_reading(reading(1, node="a")) == 1
        assert store.append_reading(reading(1, node="b")) == 2

    def test_bulk_10k_round_trip_in_order(self, store):
        for i in range(1, 10_001):
            assert store.append_reading(reading(i, ts=i * 100)) == i
        assert store.reading_count() == 10_000
        rows = store.readings()
        assert len(rows) == 10_000
        assert [r.timestamp_ms for r in rows] == [i * 100 for i in range(1, 10_001)]


class TestQueryWindow:
    def test_superset_window_returns_all(self, store):
        for i in range(1, 11):
            store.append_reading(reading(i))
        assert len(store.query_window("light", now_ms=60_000, window_s=3600)) == 10

    def test_eight_hour_fixture_returns_newer_half(self, store):
        # One reading per minute for 8 hours; a 4-hour window must return
        # exactly the newer half (boundary inclusive).
        for i in range(480):
            store.append_reading(reading(i + 1, ts=i * 60_000))
        now = 479 * 60_000
        rows = store.query_window("moisture", now_ms=now, window_s=4 * 3600)
        assert len(rows) == 241  # 240 minutes plus the inclusive boundary
        assert rows[0][0] == now - 4 * 3600 * 1000
        assert rows[-1][0] == now

    def test_empty_store(self, store):
        assert store.query_window("temp", now_ms=0, window_s=10) == []

    def test_unknown_param(self, store):
        with pytest.raises(UnknownParameterError):
            store.query_window("humidity", now_ms=0, window_s=10)

    def test_param_projection(self, store):
        store.append_reading(reading(1, temp=31.5, adc=290, lux=4800))
        assert store.query_window("temp", 10_000, 60)[0][1] == 31.5
        assert store.query_window("moisture", 10_000, 60)[0][1] == 290
        assert store.query_window("light", 10_000, 60)[0][1] == 4800

    @given(now=st.integers(0, 200_000), window=st.integers(1, 300))
    @settings(max_examples=100, deadline=None)
    def test_results_sorted_and_in_bounds(self, now, window):
        import tempfile
        with tempfile.TemporaryDirectory() as d:
            s = DataStore(d)
            for i in range(1, 40):
                s.append_reading(reading(i, ts=(i * 7919) % 150_000))
            rows = s.query_window("temp", now_ms=now, window_s=window)
            assert rows == sorted(rows, key=lambda p: p[0])
            for ts, _ in rows:
                assert now - window * 1000 <= ts <= now
            s.close()


class TestEventsAndModes:
    def test_event_round_trip(self, store, tmp_path):
        ev = ActuationEvent(ts_ms=1000, actuator=Actuator.COOLER, action=Action.ON,
                            source=Mode.AUTO, cause_reading_seq=7,
                            cause_param_value=31.5)
        manual = ActuationEvent(ts_ms=2000, actuator=Actuator.PUMP,
                                action=Action.OFF, source=Mode.MANUAL)
        store.append_event(ev)
        store.append_event(manual)
        store.append_mode(ModeChange(ts_ms=1500, mode=Mode.MANUAL, changed_by="u"))
        store.close()
        reopened = DataStore(tmp_path / "data")
        assert reopened.events() == [ev, manual]
        assert reopened.modes() == [ModeChange(1500, Mode.MANUAL, "u")]
        reopened.close()

    def test_cause_value_formatting(self, store, tmp_path):
        store.append_event(ActuationEvent(1, Actuator.COOLER, Action.ON,
                                          Mode.AUTO, 1, 31.5))
        store.append_event(ActuationEvent(2, Actuator.PUMP, Action.ON,
                                          Mode.AUTO, 2, 290.0))
        lines = (tmp_path / "data" / "events.csv").read_text().splitlines()
        assert lines[1].endswith(",31.5")
        assert lines[2].endswith(",290")


class TestVisits:
    def test_unknown_user_is_none(self, store):
        assert store.last_visit("nobody") is None

    def test_record_then_read_back(self, store):
        v = VisitRecord(user="alice", ts_ms=1000, temp_c=25.5,
                        moisture_adc=400, lux=5000)
        store.record_visit(v)
        assert store.last_visit("alice") == v

    def test_two_visit_read_before_write(self, store):
        # The UI reads the previous visit first, then records the new one.
        first = VisitRecord("bob", 1000, 25.0, 400, 5000)
        store.record_visit(first)
        seen = store.last_visit("bob")
        store.record_visit(VisitRecord("bob", 9000, 30.0, 300, 100))
        assert seen == first
        assert store.last_visit("bob").ts_ms == 9000

    def test_latest_overwrites_on_reload(self, store, tmp_path):
        store.record_visit(VisitRecord("c", 1, 20.0, 1, 1))
        store.record_visit(VisitRecord("c", 2, 21.0, 2, 2))
        store.close()
        reopened = DataStore(tmp_path / "data")
        assert reopened.last_visit("c").ts_ms == 2
        reopened.close()


class TestPersistence:
    def test_reload_equals_in_memory_state(self, store, tmp_path):
        for i in range(1, 50):
            store.append_reading(reading(i))
        store.append_event(ActuationEvent(1, Actuator.LIGHT, Action.ON,
                                          Mode.AUTO, 1, 4800.0))
        before = (store.readings(), store.events(), store.modes())
        store.close()
        reopened = DataStore(tmp_path / "data")
        assert (reopened.readings(), reopened.events(), reopened.modes()) == before
        reopened.close()

    def test_headers_exact(self, store, tmp_path):
        store.append_reading(reading(1))
        d = tmp_path / "data"
        assert (d / "readings.csv").read_text().splitlines()[0] == \
            "ts_ms,node_id,seq,temp_c,moisture_adc,lux"
        assert (d / "events.csv").read_text().splitlines()[0] == \
            "ts_ms,actuator,action,source,cause_seq,cause_value"
        assert (d / "modes.csv").read_text().splitlines()[0] == \
            "ts_ms,mode,changed_by"
        assert (d / "visits.csv").read_text().splitlines()[0] == \
            "user,ts_ms,temp_c,moisture_adc,lux"

    def test_reading_formatting(self, store, tmp_path):
        store.append_reading(reading(1, ts=5000, temp=31.0, adc=290, lux=4800))
        line = (tmp_path / "data" / "readings.csv").read_text().splitlines()[1]
        assert line == "5000,node-1,1,31.0,290,4800"

    def test_memory_window_prunes_but_file_keeps_all(self, tmp_path):
        s = DataStore(tmp_path / "d", mem_window_h=1.0)
        for i in range(10):
            s.append_reading(reading(i + 1, ts=i * 30 * 60_000))  # every 30 min
        assert s.reading_count() == 10
        in_mem = s.readings()
        assert len(in_mem) == 3  # newest ts minus 1 h, inclusive
        text = (tmp_path / "d" / "readings.csv").read_text()
        assert text.count("\n") == 11
        s.close()

    def test_dedup_after_restart(self, tmp_path):
        s = DataStore(tmp_path / "d")
        s.append_reading(reading(5))
        s.close()
        s2 = DataStore(tmp_path / "d")
        assert s2.append_reading(reading(5)) is None
        s2.close()


DURABILITY_CHILD = """
import sys
from microfarm.model import SensorReading
from microfarm.store import DataStore

store = DataStore(sys.argv[1])
i = 0
while True:
    i += 1
    r = SensorReading(node_id="node-1", seq=i, timestamp_ms=i * 5000,
                      temp_c=25.0, moisture_adc=500, lux=6000)
    store.append_reading(r)
    print(i, flush=True)   # acknowledged once durably appended
"""


class TestCrashDurability:
    def test_kill9_loses_no_acknowledged_reading(self, tmp_path):
        d = tmp_path / "data"
        proc = subprocess.Popen([sys.executable, "-c", DURABILITY_CHILD, str(d)],
                                stdout=subprocess.PIPE, text=True)
        acked = []
        try:
            while len(acked) < 500:
                line = proc.stdout.readline()
                assert line, "child died early"
                acked.append(int(line))
        finally:
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait()
        reopened = DataStore(d)
        stored = {r.seq for r in reopened.readings()}
        missing = [seq for seq in acked if seq not in stored]
        assert missing == []
        # Reparse equals pre-kill state for the acknowledged prefix.
        assert sorted(stored)[:len(acked)] == acked
        reopened.close()
