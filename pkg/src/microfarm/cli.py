"""Operator CLI: run the stack, replay logs, run the stats battery, emit
plot-ready reports.  Exit codes: 0 success, 1 runtime failure, 2 usage or
config error."""

from __future__ import annotations

import argparse
import signal
import sys
import threading
from pathlib import Path

from . import store as store_mod
from .clock import ScaledClock
from .config import Config, ConfigError, load_config
from .control import ControlEngine, Mode
from .gateway import Gateway
from .model import Actuator, PARAM_ACTUATOR
from .node import SensorNode, tcp_connector
from .simulation import EnvState, GrowChamber
from .stats import (
    HeightCsvError,
    InsufficientDataError,
    DegenerateSampleError,
    bundled_heights_path,
    load_height_csv,
    one_sample_ttest,
)
from .store import DataStore

DAY_MS = 86_400_000


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="microfarm",
                                description="simulated IoT microfarm stack")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run gateway + embedded chamber and node")
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--duration-virtual-s", type=float, default=0.0,
                     help="stop after this much virtual time (0 = until interrupt)")

    gw = sub.add_parser("gateway", help="run the gateway alone")
    gw.add_argument("--config")
    gw.add_argument("--duration-virtual-s", type=float, default=0.0)

    node = sub.add_parser("node", help="run a chamber + node against a remote gateway")
    node.add_argument("--config")
    node.add_argument("--duration-virtual-s", type=float, default=0.0)

    replay = sub.add_parser("replay",
                            help="feed a readings log through the automation engine")
    replay.add_argument("readings_csv")
    replay.add_argument("--config")
    replay.add_argument("--out", required=True, help="events CSV to write")

    tt = sub.add_parser("ttest", help="one-sample t-test over a height record")
    tt.add_argument("heights_csv", nargs="?", default=None,
                    help="height CSV (default: bundled mustard greens record)")
    tt.add_argument("--day", default=None,
                    help="day column label or unique prefix (default: last column)")
    tt.add_argument("--test-value", type=float, required=True)

    rep = sub.add_parser("report",
                         help="per-parameter value + regulator series for plotting")
    rep.add_argument("data_dir")
    rep.add_argument("--date", type=int, default=None,
                     help="virtual day index, 0-based (default: all data)")
    rep.add_argument("--out", default=None, help="output directory")
    return p


# ---------------------------------------------------------------------------
# run / gateway / node
# ---------------------------------------------------------------------------

def _make_chamber(cfg: Config, start_ms: int) -> GrowChamber:
    initial = EnvState(temp_c=cfg.initial_temp_c,
                       moisture_adc=cfg.initial_moisture_adc,
                       lux=cfg.initial_lux, sim_time_ms=start_ms)
    return GrowChamber(initial, ambient=cfg.ambient, effects=cfg.effects)


def _wait_til_done(clock: ScaledClock, duration_virtual_s: float) -> None:
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    deadline_ms = duration_virtual_s * 1000.0
    while not stop.is_set():
        if deadline_ms > 0 and clock.now_ms() >= deadline_ms:
            break
        stop.wait(0.05)


def cmd_run(args, embed_node: bool) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        return _fail(str(e), code=2)
    clock = ScaledClock(cfg.time_scale)
    store = DataStore(cfg.store_dir, mem_window_h=cfg.mem_window_h)
    try:
        gateway = Gateway(store, clock, thresholds=cfg.thresholds,
                          initial_mode=cfg.initial_mode, host=cfg.host,
                          node_port=cfg.node_port, api_port=cfg.api_port,
                          cadence_ms=cfg.cadence_ms, ui_dir=cfg.ui_dir)
    except OSError as e:
        store.close()
        return _fail(f"cannot bind listeners: {e}")
    gateway.start()
    node = None
    if embed_node:
        chamber = _make_chamber(cfg, clock.now_ms())
        node = SensorNode(chamber, clock,
                          tcp_connector(cfg.host, gateway.node_port),
                          node_id=cfg.node_id, cadence_ms=cfg.cadence_ms).start()
    print(f"gateway: node port {gateway.node_port}, "
          f"api http://{cfg.host}:{gateway.api_port}", flush=True)
    _wait_til_done(clock, args.duration_virtual_s)
    if node is not None:
        node.stop()
    gateway.stop()
    store.close()
    return 0


def cmd_node(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        return _fail(str(e), code=2)
    clock = ScaledClock(cfg.time_scale)
    chamber = _make_chamber(cfg, clock.now_ms())
    node = SensorNode(chamber, clock, tcp_connector(cfg.host, cfg.node_port),
                      node_id=cfg.node_id, cadence_ms=cfg.cadence_ms).start()
    print(f"node {cfg.node_id}: gateway {cfg.host}:{cfg.node_port}", flush=True)
    _wait_til_done(clock, args.duration_virtual_s)
    node.stop()
    return 0


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def _read_readings_csv(path: Path):
    return [store_mod.parse_reading_row(cells)
            for cells in store_mod._read_rows(path, store_mod.READINGS_HEADER, 6)]


def cmd_replay(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        return _fail(str(e), code=2)
    path = Path(args.readings_csv)
    if not path.exists():
        return _fail(f"no such file: {path}")
    try:
        readings = _read_readings_csv(path)
    except (store_mod.StoreFormatError, ValueError) as e:
        return _fail(f"malformed readings CSV: {e}")
    events = []
    engine = ControlEngine(cfg.thresholds, Mode.AUTO, on_event=events.append)
    for r in readings:
        engine.on_reading(r)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as f:
        f.write(store_mod.EVENTS_HEADER + "\n")
        for ev in events:
            f.write(store_mod.format_event_row(ev) + "\n")
    print(f"{len(readings)} readings -> {len(events)} events ({out})")
    return 0


# ---------------------------------------------------------------------------
# ttest
# ---------------------------------------------------------------------------

def cmd_ttest(args) -> int:
    path = args.heights_csv or str(bundled_heights_path())
    try:
        table = load_height_csv(path)
    except (OSError, HeightCsvError) as e:
        return _fail(f"cannot load {path}: {e}")
    label = args.day if args.day is not None else table.day_labels[-1]
    try:
        samples = table.day(label)
    except KeyError:
        return _fail(f"unknown day {label!r}; available: "
                     f"{', '.join(table.day_labels)}")
    try:
        r = one_sample_ttest(samples, args.test_value)
    except (InsufficientDataError, DegenerateSampleError) as e:
        return _fail(str(e))
    print(f"day         {table.resolve_day(label)}")
    print(f"n           {r.n}")
    print(f"mean        {r.mean:.4f}")
    print(f"sd          {r.sd:.4f}")
    print(f"se          {r.se:.4f}")
    print(f"test_value  {r.test_value:.4f}")
    print(f"mean_diff   {r.mean_diff:.4f}")
    print(f"t           {r.t:.4f}")
    print(f"df          {r.df}")
    print(f"p           {r.p_two_tailed:.4f}")
    print(f"ci_95       [{r.ci_low:.4f}, {r.ci_high:.4f}]")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _fmt_value(param: str, v: float) -> str:
    return f"{v:.1f}" if param == "temp" else str(int(v))


def cmd_report(args) -> int:
    data_dir = Path(args.data_dir)
    readings_path = data_dir / "readings.csv"
    events_path = data_dir / "events.csv"
    if not readings_path.exists() or not events_path.exists():
        return _fail(f"missing store files under {data_dir}")
    try:
        readings = _read_readings_csv(readings_path)
        events = [store_mod.parse_event_row(c)
                  for c in store_mod._read_rows(events_path,
                                                store_mod.EVENTS_HEADER, 6)]
    except (store_mod.StoreFormatError, ValueError) as e:
        return _fail(f"malformed store files: {e}")
    lo, hi = 0, None
    if args.date is not None:
        lo, hi = args.date * DAY_MS, (args.date + 1) * DAY_MS
    in_window = lambda ts: ts >= lo and (hi is None or ts < hi)

    out_dir = Path(args.out) if args.out else data_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    for param, actuator in PARAM_ACTUATOR.items():
        with open(out_dir / f"{param}_values.csv", "w", encoding="utf-8") as f:
            f.write("ts_ms,value\n")
            for r in readings:
                if in_window(r.timestamp_ms):
                    f.write(f"{r.timestamp_ms},{_fmt_value(param, r.value(param))}\n")
        with open(out_dir / f"{param}_regulator.csv", "w", encoding="utf-8") as f:
            f.write("ts_ms,state\n")
            for ev in events:
                if ev.actuator is actuator and in_window(ev.ts_ms):
                    f.write(f"{ev.ts_ms},{1 if ev.action.value == 'ON' else 0}\n")
    print(f"report written to {out_dir}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args, embed_node=True)
    if args.command == "gateway":
        return cmd_run(args, embed_node=False)
    if args.command == "node":
        return cmd_node(args)
    if args.command == "replay":
        return cmd_replay(args)
    if args.command == "ttest":
        return cmd_ttest(args)
    if args.command == "report":
        return cmd_report(args)
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
