"""Operator command line.

Subcommands: ``sim`` (run a scripted scenario on the digital twin),
``operate`` (serve the topside endpoints), ``leakcheck`` (replay a leak
trace through the detector), ``calc`` (enclosure and buoyancy numbers),
``replay`` (stream a telemetry log back out).

Exit codes: 0 clean, 2 alarm-terminated, 3 fault-terminated, 64 usage,
1 any other operational failure.  Diagnostics go to stderr, one per
line, prefixed ``error:``.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import Sequence

from . import hydrocalc
from .config import ConfigError, StackConfig, load_config
from .constants import PASCALS_PER_BAR, SEAWATER_DENSITY
from .leakwatch import (
    DetectorConfig,
    Fleet,
    LeakState,
    OutOfOrderError,
    TraceParseError,
    read_trace,
)
from .service import OperateService, run_scenario
from .sim.scenario import ScenarioError, load_scenario
from .telemetry import CorruptLogError, LogVersionError, depth_from_pressure, read_log

EXIT_OK = 0
EXIT_ALARM = 2
EXIT_FAULT = 3
EXIT_USAGE = 64
EXIT_ERROR = 1


def _fail(message: str) -> int:
    for line in str(message).splitlines():
        print(f"error: {line}", file=sys.stderr)
    return EXIT_ERROR


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="seajoint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("sim", help="run a scripted scenario on the simulator")
    p_sim.add_argument("--config", required=True, help="stack config YAML")
    p_sim.add_argument("--scenario", required=True, help="scenario YAML")
    p_sim.add_argument("--log", required=True, help="telemetry log output path")
    p_sim.add_argument("--trace", help="also write the leak trace here")

    p_op = sub.add_parser("operate", help="serve telemetry and command endpoints")
    p_op.add_argument("--config", required=True)
    p_op.add_argument("--backend", default="sim", help="sim (default) or serial:<port>")
    p_op.add_argument("--listen", help="override telemetry TCP address host:port")
    p_op.add_argument("--ws-listen", help="override websocket address host:port")
    p_op.add_argument("--log", help="telemetry log output path")

    p_leak = sub.add_parser("leakcheck", help="replay a leak trace through the detector")
    p_leak.add_argument("trace", help="trace file path")
    p_leak.add_argument("--window-s", type=float, default=60.0)
    p_leak.add_argument("--warn-pct", type=float, default=3.0)
    p_leak.add_argument("--alarm-pct", type=float, default=5.0)
    p_leak.add_argument("--persistence", type=int, default=3)

    p_calc = sub.add_parser("calc", help="enclosure and buoyancy calculators")
    calc_sub = p_calc.add_subparsers(dest="calc_command", required=True)

    c_depth = calc_sub.add_parser("depth", help="pressure to depth")
    c_depth.add_argument("--pressure-bar", type=float, required=True, help="absolute")
    c_depth.add_argument("--rho", type=float, default=SEAWATER_DENSITY)

    c_sub = calc_sub.add_parser("submerged", help="submerged weight of a body")
    c_sub.add_argument("--dry-kg", type=float, required=True)
    c_sub.add_argument("--volume-cm3", type=float, required=True)
    c_sub.add_argument("--rho", type=float, default=SEAWATER_DENSITY)

    c_bal = calc_sub.add_parser("ballast", help="underwater weight of solid ballast")
    c_bal.add_argument("--mass-kg", type=float, required=True)
    c_bal.add_argument("--material-density", type=float, required=True)
    c_bal.add_argument("--rho", type=float, default=SEAWATER_DENSITY)

    c_buck = calc_sub.add_parser("buckling", help="canister collapse margin")
    c_buck.add_argument("--outer-diameter-mm", type=float, required=True)
    c_buck.add_argument("--wall-mm", type=float, required=True)
    c_buck.add_argument("--length-mm", type=float, required=True)
    c_buck.add_argument("--depth-m", type=float, required=True)
    c_buck.add_argument("--modulus-gpa", type=float, default=68.9)
    c_buck.add_argument("--poisson", type=float, default=0.33)
    c_buck.add_argument("--yield-mpa", type=float, default=276.0)
    c_buck.add_argument("--material-density", type=float, default=2700.0)
    c_buck.add_argument("--rho", type=float, default=SEAWATER_DENSITY)

    p_replay = sub.add_parser("replay", help="stream a telemetry log back out")
    p_replay.add_argument("log", help="telemetry log path")
    p_replay.add_argument("--quiet", action="store_true", help="integrity check only")

    return parser


def _cmd_sim(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as err:
        return _fail(err)
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as err:
        return _fail(err)
    trace_fp = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        with open(args.log, "w", encoding="utf-8") as log_fp:
            result = run_scenario(config, scenario, log_fp, trace_fp)
    finally:
        if trace_fp is not None:
            trace_fp.close()
    print(f"scenario {scenario.name}: {result.reason} after {result.duration:.1f} s")
    if result.alarmed_zones:
        print(f"alarmed zones: {', '.join(result.alarmed_zones)}")
    for joint, halves in result.cycle_halves.items():
        print(f"joint {joint}: {halves // 2} full cycles")
    return result.exit_code


def _cmd_operate(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as err:
        return _fail(err)
    if args.backend != "sim":
        return _fail(
            f"backend {args.backend!r} not available in this build; use 'sim'"
        )
    log_fp = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        service = OperateService(
            config,
            log_fp=log_fp,
            tcp_listen=args.listen,
            ws_listen=args.ws_listen,
        )
    except OSError as err:
        if log_fp:
            log_fp.close()
        return _fail(f"cannot bind endpoint: {err}")
    print(f"telemetry on {service.tcp.port}, websocket on {service.ws.port}")
    try:
        service.run()
    finally:
        if log_fp:
            log_fp.close()
    return EXIT_OK


def _cmd_leakcheck(args) -> int:
    try:
        detector = DetectorConfig(
            window_s=args.window_s,
            warn_pct=args.warn_pct,
            alarm_pct=args.alarm_pct,
            persistence=args.persistence,
        )
    except ValueError as err:
        return _fail(err)
    try:
        with open(args.trace, "r", encoding="utf-8") as fp:
            trace = read_trace(fp)
    except FileNotFoundError as err:
        return _fail(err)
    except TraceParseError as err:
        return _fail(err)
    if not trace.rows:
        return _fail("trace holds no samples")

    zones: list[str] = []
    for row in trace.rows:
        if row.sample.zone not in zones:
            zones.append(row.sample.zone)
    fleet = Fleet(zones, detector)
    alarm_at: dict[str, float] = {}
    transitions: dict[str, list[tuple[float, LeakState]]] = {z: [] for z in zones}
    last_state: dict[str, LeakState] = {}
    for row in trace.rows:
        try:
            status = fleet.ingest(row.sample)
        except OutOfOrderError as err:
            return _fail(f"line {row.line_no}: {err}")
        if status.state is not last_state.get(status.zone):
            transitions[status.zone].append((row.sample.t, status.state))
            last_state[status.zone] = status.state
            if status.state is LeakState.ALARM and status.zone not in alarm_at:
                alarm_at[status.zone] = row.sample.t

    false_alarms = 0
    for zone in zones:
        onset = trace.onsets.get(zone)
        steps = " -> ".join(f"{state.name}@{t:g}s" for t, state in transitions[zone])
        print(f"zone {zone}: {steps}")
        if zone in alarm_at:
            if onset is None:
                false_alarms += 1
                print(f"zone {zone}: ALARM with no annotated onset (false alarm)")
            elif alarm_at[zone] < onset:
                false_alarms += 1
                print(f"zone {zone}: ALARM at {alarm_at[zone]:g}s precedes onset {onset:g}s")
            else:
                print(
                    f"zone {zone}: detection latency "
                    f"{alarm_at[zone] - onset:.1f} s after onset {onset:g}s"
                )
        elif onset is not None:
            print(f"zone {zone}: MISSED annotated onset at {onset:g}s")
    print(f"false alarms: {false_alarms}")
    if not alarm_at:
        print("no alarms")
    return EXIT_ALARM if alarm_at else EXIT_OK


def _cmd_calc(args) -> int:
    try:
        if args.calc_command == "depth":
            depth = depth_from_pressure(args.pressure_bar * PASCALS_PER_BAR, args.rho)
            print(f"pressure_bar_abs: {args.pressure_bar:g}")
            print(f"depth_m: {depth.meters:.2f}")
            print(f"surface: {depth.surface}")
        elif args.calc_command == "submerged":
            body = hydrocalc.BodyMass(
                dry_mass=args.dry_kg,
                displaced_volume=args.volume_cm3 * 1e-6,
                fluid_density=args.rho,
            )
            w = hydrocalc.submerged_weight(body)
            print(f"dry_mass_kg: {args.dry_kg:g}")
            print(f"displaced_volume_cm3: {args.volume_cm3:g}")
            print(f"submerged_weight_kgf: {w.kgf:.4f}")
            print(f"submerged_weight_n: {w.newtons:.3f}")
        elif args.calc_command == "ballast":
            w = hydrocalc.effective_underwater_weight(
                args.mass_kg, args.material_density, args.rho
            )
            print(f"mass_kg: {args.mass_kg:g}")
            print(f"underwater_weight_kgf: {w.kgf:.4f}")
            print(f"underwater_weight_n: {w.newtons:.3f}")
        else:
            enclosure = hydrocalc.Enclosure(
                outer_diameter=args.outer_diameter_mm * 1e-3,
                wall_thickness=args.wall_mm * 1e-3,
                length=args.length_mm * 1e-3,
                material=hydrocalc.Material(
                    elastic_modulus=args.modulus_gpa * 1e9,
                    poisson_ratio=args.poisson,
                    density=args.material_density,
                    yield_strength=args.yield_mpa * 1e6,
                ),
            )
            result = hydrocalc.buckling_margin(enclosure, args.depth_m, args.rho)
            print(f"critical_pressure_bar: {result.critical_pressure / PASCALS_PER_BAR:.2f}")
            print(f"depth_m: {args.depth_m:g}")
            print(f"margin: {result.margin:.2f}" if math.isfinite(result.margin) else "margin: inf")
            print(f"thin_wall_ok: {enclosure.thin_wall}")
    except hydrocalc.DomainError as err:
        return _fail(err)
    except ValueError as err:
        return _fail(err)
    return EXIT_OK


def _cmd_replay(args) -> int:
    try:
        with open(args.log, "r", encoding="utf-8", newline="") as fp:
            header, envelopes = read_log(fp)
            count = 0
            for envelope in envelopes:
                if not args.quiet:
                    print(envelope.to_json())
                count += 1
    except FileNotFoundError as err:
        return _fail(err)
    except LogVersionError as err:
        return _fail(f"version mismatch: {err}")
    except CorruptLogError as err:
        return _fail(f"corrupt log: {err}")
    if args.quiet:
        print(f"ok: {count} envelopes")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "sim": _cmd_sim,
        "operate": _cmd_operate,
        "leakcheck": _cmd_leakcheck,
        "calc": _cmd_calc,
        "replay": _cmd_replay,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    raise SystemExit(main())
