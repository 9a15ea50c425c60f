"""Command-line entry point.

Subcommands: simulate, node, ingestd, analyze, report, power, export,
end-to-end. All artifacts are plain JSON/CSV under --out. Exit codes are a
stable contract: 0 success, 2 configuration error, 3 transport error,
4 analysis error.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from spanmon import __version__, beam, fleet, fusion, ingest, node, power
from spanmon.errors import (
    AnalysisError,
    ConfigError,
    DomainError,
    AcquisitionError,
    NoPeakError,
    SpanmonError,
    TransportError,
)
from spanmon.store import RecordStore

log = logging.getLogger("spanmon")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_ANALYSIS = 4


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _log_config(args):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True, default=str))


def _load_scenario(args):
    if args.scenario == "demo":
        sc = beam.demo_scenario()
    else:
        sc = beam.load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        sc = beam.Scenario.from_dict({**sc.to_dict(), "seed": args.seed})
    return sc


def _write_truth_csv(path, truth):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (
            ["t_s"]
            + [f"u_mm@{x:g}m" for x in truth.output_positions_m]
            + [f"strain_ue@{x:g}m" for x in truth.beam.gauge_positions_m]
            + [f"accel_g@{x:g}m" for x in truth.output_positions_m]
        )
        writer.writerow(header)
        for i in range(truth.n_samples):
            row = [f"{truth.time_s[i]:.6f}"]
            row += [f"{v:.9f}" for v in truth.disp_mm[:, i]]
            row += [f"{v:.9f}" for v in truth.strain_ue[:, i]]
            row += [f"{v:.9f}" for v in truth.accel_g[:, i]]
            writer.writerow(row)


def cmd_simulate(args):
    sc = _load_scenario(args)
    out = _out_dir(args)
    truth = sc.simulate()
    _write_truth_csv(out / "ground_truth.csv", truth)
    _write_json(out / "scenario.json", sc.to_dict())
    meta = {
        "samples": truth.n_samples,
        "fs_hz": truth.fs_hz,
        "peak_disp_mm": float(np.max(np.abs(truth.disp_mm))),
        "peak_strain_ue": float(np.max(np.abs(truth.strain_ue))),
        "peak_accel_g": float(np.max(np.abs(truth.accel_g))),
    }
    _write_json(out / "ground_truth_meta.json", meta)
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def _node_config(args):
    if args.config:
        cfg = node.load_node_config(args.config)
    elif getattr(args, "scenario", None) == "demo":
        cfg = node.demo_config()
    else:
        cfg = node.SensorConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = node.SensorConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _run_node_sessions(cfg, sc, transport, max_resends=None):
    truth = sc.simulate()
    wd = node.watchdog_stream(truth, cfg)
    events = node.run_trigger_loop(cfg, wd, start_epoch_ms=sc.start_epoch_ms)
    env = node.NodeEnvironment(temperature_c=sc.temperature_c)
    reports = []
    sessions = []
    for ev in events:
        sess, _, report = node.run_session_pipeline(
            cfg, truth, ev, transport, env=env,
            start_epoch_ms=sc.start_epoch_ms, max_resends_per_packet=max_resends,
        )
        sessions.append(sess)
        reports.append(report)
    return truth, sessions, reports


def cmd_node(args):
    cfg = _node_config(args)
    sc = _load_scenario(args)
    host, _, port = args.server.partition(":")
    transport = node.TcpTransport(host, int(port), timeout_s=cfg.ack_timeout_s)
    if args.loss_rate > 0:
        transport = node.LossyTransport(transport, args.loss_rate, seed=cfg.seed)
    out = _out_dir(args)
    truth, sessions, reports = _run_node_sessions(cfg, sc, transport, args.max_resends)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    (out / "transmission_reports.jsonl").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_ingestd(args):
    pipeline = None
    if args.analysis_config:
        pipeline = _pipeline_from_config(args.analysis_config)
    server = ingest.serve(args.bind, args.store, pipeline=pipeline)
    host, port = server.address
    print(json.dumps({"listening": f"{host}:{port}", "store": args.store}))
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def _pipeline_from_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read analysis config {path}: {exc}") from exc
    return _pipeline_from_dict(doc)


def _pipeline_from_dict(doc):
    bm = beam.BeamModel.from_dict(doc["beam"]) if "beam" in doc else beam.BeamModel()
    basis = fusion.ModeBasis.from_beam(bm)
    fcfg_fields = {k: v for k, v in doc.get("fusion", {}).items()}
    return fusion.make_pipeline(basis, fusion.FusionConfig(**fcfg_fields))


def cmd_analyze(args):
    store = RecordStore(args.store)
    table = args.table
    if table is None:
        data_tables = [t for t in store.tables() if t.endswith("_data")]
        if len(data_tables) != 1:
            raise ConfigError(f"specify --table (found {data_tables})")
        table = data_tables[0]
    data = ingest.reconstruct_session(store, table, args.node, args.session)
    if args.analysis_config:
        with open(args.analysis_config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        bm = beam.BeamModel.from_dict(doc["beam"]) if "beam" in doc else beam.BeamModel()
        fcfg = fusion.FusionConfig(**doc.get("fusion", {}))
    else:
        bm, fcfg = beam.BeamModel(), fusion.FusionConfig()
    basis = fusion.ModeBasis.from_beam(bm)
    result = fusion.fuse(data, basis, fcfg)
    out = _out_dir(args)
    summary = result.summary()
    _write_json(out / f"fusion_{args.node}_{args.session}.json", summary)
    if args.csv:
        path = out / f"u_fused_{args.node}_{args.session}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "u_fused_mm", "u_acc_mm"])
            for i, (uf, ua) in enumerate(zip(result.u_fused_mm, result.u_acc_mm)):
                writer.writerow([f"{i / data.fs_hz:.4f}", f"{uf:.6f}", f"{ua:.6f}"])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_report(args):
    store = RecordStore(args.store)
    window = None
    if args.window:
        lo, _, hi = args.window.partition(":")
        try:
            window = (int(lo), int(hi))
        except ValueError as exc:
            raise ConfigError(f"bad window {args.window!r} (want lo_ms:hi_ms)") from exc
    report = fleet.girder_report(
        store, args.node_a, args.node_b, window=window, ena_threshold=args.ena_threshold
    )
    out = _out_dir(args)
    doc = report.to_dict()
    _write_json(out / "girder_report.json", doc)
    for name, stats in (("a", report.node_a), ("b", report.node_b)):
        with open(out / f"peaks_{name}_{stats.node}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["peak_mm"])
            for p in stats.peaks_mm:
                writer.writerow([f"{p:.6f}"])
    if args.gnuplot:
        for name, stats in (("a", report.node_a), ("b", report.node_b)):
            path = out / f"peaks_{name}_{stats.node}.dat"
            path.write_text("\n".join(f"{p:.6f}" for p in stats.peaks_mm) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_power(args):
    profile = power.load_power_profile(args.profile) if args.profile else power.PowerProfile()
    report = power.budget_report(profile)
    if args.out:
        _write_json(_out_dir(args) / "power_budget.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export(args):
    store = RecordStore(args.store)
    out = _out_dir(args)
    tables = [args.table] if args.table else store.tables()
    written = {}
    for table in tables:
        written[table] = store.export_csv(table, out / f"{table}.csv")
    print(json.dumps(written, sort_keys=True))
    return EXIT_OK


def _vehicle_windows(sc):
    for k, ld in enumerate(sc.loads):
        span = sc.beam.length_m + sum(ld.axle_spacings_m)
        yield k, ld.arrival_s, ld.arrival_s + span / ld.speed_mps + 2.0


def cmd_end_to_end(args):
    sc = _load_scenario(args)
    out = _out_dir(args)
    cfg = _node_config(args)
    store = RecordStore(out / "store")
    basis = fusion.ModeBasis.from_beam(sc.beam)
    pipeline = fusion.make_pipeline(basis)
    server = ingest.IngestServer(store, pipeline=pipeline)
    host, port = server.start()
    transport = node.TcpTransport(host, port, timeout_s=cfg.ack_timeout_s)
    if args.loss_rate > 0:
        transport = node.LossyTransport(transport, args.loss_rate, seed=cfg.seed)
    try:
        truth, sessions, reports = _run_node_sessions(cfg, sc, transport, args.max_resends)
        server.wait_idle()
        if not sessions:
            raise AnalysisError("no session was triggered by the scenario")
        sess = sessions[0]
        data = ingest.reconstruct_session(store, cfg.data_table, sess.node_id, sess.session_id)
        try:
            result = fusion.fuse(data, basis)
        except NoPeakError as exc:
            doc = {
                "scenario_seed": sc.seed,
                "outcome": "no-peak",
                "detail": str(exc),
                "uplink": [r.to_dict() for r in reports],
                "analysis_rows": store.rows(cfg.info_table),
            }
            _write_json(out / "end_to_end_report.json", doc)
            print("no dominant spectral peak: nothing to fuse (no-peak outcome)")
            return EXIT_ANALYSIS
        t0_s = (sess.t0_ms - sc.start_epoch_ms) / 1e3
        t_f = t0_s + np.arange(data.samples.shape[1]) / data.fs_hz
        rows = []
        for k, lo, hi in _vehicle_windows(sc):
            mt = (truth.time_s >= lo) & (truth.time_s <= hi)
            mf = (t_f >= lo) & (t_f <= hi)
            if not mt.any() or not mf.any():
                continue
            p_true = float(np.max(np.abs(truth.disp_mm[0, mt])))
            p_fused = float(np.max(np.abs(result.u_fused_mm[mf])))
            rows.append(
                {
                    "vehicle": k + 1,
                    "true_peak_mm": round(p_true, 4),
                    "fused_peak_mm": round(p_fused, 4),
                    "error_mm": round(abs(p_fused - p_true), 4),
                }
            )
        doc = {
            "scenario_seed": sc.seed,
            "f_n_hz": round(result.f_n_hz, 4),
            "ena_mm": round(result.ena_mm, 2),
            "alpha": result.alpha,
            "peaks": rows,
            "uplink": [r.to_dict() for r in reports],
            "analysis_rows": store.rows(cfg.info_table),
        }
        _write_json(out / "end_to_end_report.json", doc)
        print(f"{'vehicle':>8} {'true mm':>9} {'fused mm':>9} {'error mm':>9}")
        for r in rows:
            print(
                f"{r['vehicle']:>8} {r['true_peak_mm']:>9.3f} "
                f"{r['fused_peak_mm']:>9.3f} {r['error_mm']:>9.3f}"
            )
        print(f"f_n = {doc['f_n_hz']} Hz, ENA = {doc['ena_mm']} mm")
        return EXIT_OK
    finally:
        server.shutdown()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spanmon",
        description="Bridge monitoring toolkit: simulation, node emulation, "
        "ingestion, fusion analysis, fleet reports, power budgets.",
    )
    parser.add_argument("--version", action="version", version=f"spanmon {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--verbose", action="store_true", help="log at DEBUG level")
        p.add_argument("--out", default=out_default, help="artifact output directory")

    p = sub.add_parser("simulate", help="run a scenario and write ground-truth files")
    p.add_argument("--scenario", default="demo", help="scenario JSON path or 'demo'")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("node", help="emulate a sensor node against a server")
    p.add_argument("--scenario", default="demo")
    p.add_argument("--config", default=None, help="node config JSON")
    p.add_argument("--server", required=True, help="host:port of the ingestion service")
    p.add_argument("--loss-rate", type=float, default=0.0, dest="loss_rate")
    p.add_argument("--max-resends", type=int, default=None, dest="max_resends",
                   help="test-only per-packet retry ceiling")
    common(p)
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("ingestd", help="run the TCP ingestion service")
    p.add_argument("--bind", default="127.0.0.1:9000")
    p.add_argument("--store", required=True)
    p.add_argument("--analysis-config", default=None, dest="analysis_config",
                   help="JSON with beam/fusion settings enabling server-side analysis")
    common(p)
    p.set_defaults(func=cmd_ingestd)

    p = sub.add_parser("analyze", help="fuse one stored session")
    p.add_argument("--store", required=True)
    p.add_argument("--node", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--table", default=None, help="data table (defaults to the only one)")
    p.add_argument("--analysis-config", default=None, dest="analysis_config")
    p.add_argument("--csv", action="store_true", help="also write the fused series as CSV")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="cross-girder comparison report")
    p.add_argument("--store", required=True)
    p.add_argument("--node-a", required=True, dest="node_a")
    p.add_argument("--node-b", required=True, dest="node_b")
    p.add_argument("--window", default=None, help="epoch-ms window lo:hi")
    p.add_argument("--ena-threshold", type=float, default=0.10, dest="ena_threshold")
    p.add_argument("--gnuplot", action="store_true")
    common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("power", help="print the power budget")
    p.add_argument("--profile", default=None, help="PowerProfile JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("export", help="dump store tables to CSV")
    p.add_argument("--store", required=True)
    p.add_argument("--table", default=None)
    common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("end-to-end", help="simulate, uplink, ingest, fuse, compare")
    p.add_argument("--scenario", default="demo")
    p.add_argument("--config", default=None)
    p.add_argument("--loss-rate", type=float, default=0.0, dest="loss_rate")
    p.add_argument("--max-resends", type=int, default=None, dest="max_resends")
    common(p)
    p.set_defaults(func=cmd_end_to_end)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    _log_config(args)
    try:
        return args.func(args)
    except (ConfigError, DomainError, AcquisitionError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except TransportError as exc:
        log.error("transport error: %s", exc)
        return EXIT_TRANSPORT
    except AnalysisError as exc:
        log.error("analysis error: %s", exc)
        return EXIT_ANALYSIS
    except SpanmonError as exc:
        log.error("error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
