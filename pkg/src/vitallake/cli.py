"""Command-line entry points.

    vitallake serve --config cfg.json
    vitallake simulate monitors|labs|load|freeze-corpus ...
    vitallake bench --corpus <dir> --reps 3
    vitallake analyze alarms|series|storage-report --archive <dir> ...

Timestamps on analyze flags are epoch milliseconds UTC.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        print(text)


def _cmd_serve(args) -> int:
    from .platform import Platform, PlatformConfig

    cfg = PlatformConfig.from_file(args.config) if args.config else PlatformConfig()
    overrides = {}
    for name in ("data_dir", "monitor_port", "lab_port", "gateway_port", "token_file"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    cfg = cfg.with_env_overrides()
    platform = Platform(cfg)
    platform.start()
    print(f"listening: monitor mllp :{platform.monitor_port}, "
          f"lab mllp :{platform.lab_port}, "
          f"gateway {'http :' + str(platform.gateway_port) if platform.gateway else 'disabled'}")
    platform.run_forever()
    return 0


def _monitor_profile(args):
    from .simgen import ADULT_MONITOR_PLAN, PEDIATRIC_MONITOR_PLAN, VENTILATOR_PLAN, FleetProfile

    plans = {"adult": ADULT_MONITOR_PLAN, "pediatric": PEDIATRIC_MONITOR_PLAN,
             "ventilator": VENTILATOR_PLAN}
    return FleetProfile(
        units=tuple(args.units.split(",")),
        beds_per_unit=args.beds,
        channel_plan=plans[args.plan],
        kind="ventilator" if args.plan == "ventilator" else "monitor",
        alarm_rate_per_hour=args.alarm_rate,
        seed=args.seed,
    )


def _cmd_simulate(args) -> int:
    from . import simgen

    if args.what == "monitors":
        profile = _monitor_profile(args)
        if args.out:
            Path(args.out).write_bytes(simgen.gen_monitor_stream(profile, args.duration))
            print(f"wrote {args.out}")
            return 0
        messages = [t for _, t in simgen.gen_monitor_messages(profile, args.duration)]
        report = simgen.run_load(args.host, args.port, messages,
                                 args.rate or len(messages) / args.duration,
                                 connections=args.connections)
        print(report.to_json())
        return 0

    if args.what == "labs":
        profile = simgen.LabFlowProfile(orders_per_hour=args.orders_per_hour,
                                        seed=args.seed)
        stream, manifest = simgen.gen_lab_stream(profile, args.duration)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "labs.hl7").write_bytes(stream)
            (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
            print(f"wrote {out}/labs.hl7 ({len(manifest)} orders) and manifest.json")
            return 0
        events, manifest = simgen.gen_lab_messages(profile, args.duration)
        report = simgen.run_load(args.host, args.port, [t for _, t in events],
                                 args.rate or max(1.0, len(events) / args.duration),
                                 connections=args.connections)
        print(report.to_json())
        return 0

    if args.what == "load":
        profile = simgen.FleetProfile(
            units=("MICU", "PICU"), beds_per_unit=10, seed=args.seed)
        need = int(args.rate * args.duration)
        messages = []
        gen = simgen.gen_monitor_messages(profile, 10 * 86400)
        for _ in range(need):
            messages.append(next(gen)[1])
        report = simgen.run_load(args.host, args.port, messages, args.rate,
                                 connections=args.connections)
        _write_out(report.to_json(), args.report)
        return 0

    # freeze-corpus
    manifest = simgen.freeze_benchmark_corpus(args.out, sim_seconds=args.sim_seconds)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    from .archive import benchmark_formats
    from .simgen import load_corpus
    from .topology import SIGNAL_SCHEMA

    records, manifest = load_corpus(args.corpus)
    report = benchmark_formats(
        records, SIGNAL_SCHEMA, args.workdir or (Path(args.corpus) / "bench"),
        repetitions=args.reps, corpus_descriptor={"sha256": manifest["sha256"],
                                                  "records": manifest["record_count"]})
    print(report.to_table())
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return 0


def _cmd_analyze(args) -> int:
    from .analytics import MonitorAnalytics, rows_to_csv
    from .topology import PartitionedArchive

    facade = MonitorAnalytics(PartitionedArchive(args.archive))
    t0 = args.t0 if args.t0 is not None else 0
    t1 = args.t1 if args.t1 is not None else int(time.time() * 1000)
    if args.what == "alarms":
        rows = facade.alarms(t0, t1, source=args.source, channel=args.channel,
                             gap_threshold_ms=args.gap)
        payload, csv_rows = {"events": rows}, rows
    elif args.what == "series":
        series = facade.series(args.source, args.channel, t0, t1)
        payload = series
        csv_rows = [{"ts": ts, "value": v} for ts, v in series["points"]]
    else:  # storage-report
        payload = facade.storage(classes=args.classes.split(",") if args.classes else None)
        csv_rows = payload["rows"]
    if args.format == "csv":
        _write_out(rows_to_csv(csv_rows), args.out)
    else:
        _write_out(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitallake")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the full platform")
    serve.add_argument("--config", help="JSON config file")
    serve.add_argument("--data-dir", dest="data_dir")
    serve.add_argument("--monitor-port", dest="monitor_port", type=int)
    serve.add_argument("--lab-port", dest="lab_port", type=int)
    serve.add_argument("--gateway-port", dest="gateway_port", type=int)
    serve.add_argument("--token-file", dest="token_file")
    serve.set_defaults(fn=_cmd_serve)

    sim = sub.add_parser("simulate", help="synthetic traffic and load")
    sim_sub = sim.add_subparsers(dest="what", required=True)

    mon = sim_sub.add_parser("monitors")
    mon.add_argument("--duration", type=int, default=60, help="simulated seconds")
    mon.add_argument("--units", default="MICU")
    mon.add_argument("--beds", type=int, default=1)
    mon.add_argument("--plan", choices=("adult", "pediatric", "ventilator"),
                     default="adult")
    mon.add_argument("--alarm-rate", dest="alarm_rate", type=float, default=0.0)
    mon.add_argument("--seed", type=int, default=1)
    mon.add_argument("--out", help="write MLLP frames to a file instead of sending")
    mon.add_argument("--host", default="127.0.0.1")
    mon.add_argument("--port", type=int)
    mon.add_argument("--rate", type=float)
    mon.add_argument("--connections", type=int, default=4)

    labs = sim_sub.add_parser("labs")
    labs.add_argument("--duration", type=int, default=3600)
    labs.add_argument("--orders-per-hour", dest="orders_per_hour", type=float,
                      default=120.0)
    labs.add_argument("--seed", type=int, default=1)
    labs.add_argument("--out", help="directory for labs.hl7 + manifest.json")
    labs.add_argument("--host", default="127.0.0.1")
    labs.add_argument("--port", type=int)
    labs.add_argument("--rate", type=float)
    labs.add_argument("--connections", type=int, default=2)

    load = sim_sub.add_parser("load")
    load.add_argument("--host", default="127.0.0.1")
    load.add_argument("--port", type=int, required=True)
    load.add_argument("--rate", type=float, default=400.0)
    load.add_argument("--duration", type=int, default=60)
    load.add_argument("--connections", type=int, default=4)
    load.add_argument("--seed", type=int, default=1)
    load.add_argument("--report", help="write the JSON report here")

    freeze = sim_sub.add_parser("freeze-corpus")
    freeze.add_argument("--out", required=True)
    freeze.add_argument("--sim-seconds", dest="sim_seconds", type=int, default=3600)
    sim.set_defaults(fn=_cmd_simulate)

    bench = sub.add_parser("bench", help="three-format storage/speed benchmark")
    bench.add_argument("--corpus", required=True, help="frozen corpus directory")
    bench.add_argument("--reps", type=int, default=3)
    bench.add_argument("--workdir")
    bench.add_argument("--json", help="also write the JSON report here")
    bench.set_defaults(fn=_cmd_bench)

    analyze = sub.add_parser("analyze", help="batch analytics over the archive")
    analyze_sub = analyze.add_subparsers(dest="what", required=True)
    for name in ("alarms", "series", "storage-report"):
        p = analyze_sub.add_parser(name)
        p.add_argument("--archive", required=True)
        p.add_argument("--t0", type=int, help="epoch ms")
        p.add_argument("--t1", type=int, help="epoch ms")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out")
        if name == "alarms":
            p.add_argument("--gap", type=int, default=30_000)
            p.add_argument("--source")
            p.add_argument("--channel")
        elif name == "series":
            p.add_argument("--source", required=True)
            p.add_argument("--channel", required=True)
        else:
            p.add_argument("--classes", help="comma-separated source classes")
    analyze.set_defaults(fn=_cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
