"""Batch entry point: experiment sweeps, worker pool, results persistence.

Every (policy, sweep-point) combination becomes one run directory holding
latency_samples.csv, cell_tput.csv, pairing_events.csv and summary.json, plus
an echo of the fully resolved configuration. A cross-run comparison.csv sits
at the output root. Identical (config, seed) inputs produce byte-identical
summary.json files regardless of the worker-pool size.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import KEYMAP, ConfigError, SimConfig, config_hash, dump_config, load_config
from .engine import aggregate_runs, run_drop
from .traffic import read_arrival_trace, write_arrival_trace

PID_STRIDE = 2**32  # packet ids offset per drop in pooled CSVs


def _parse_sweeps(specs: list[str]) -> list[dict]:
    """Expand --sweep KEY=V1,V2,... flags into a Cartesian product of overrides."""
    axes = []
    for spec in specs or []:
        if "=" not in spec:
            raise ConfigError(f"--sweep expects KEY=V1,V2,..., got {spec!r}")
        key, raw = spec.split("=", 1)
        key = key.strip()
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"--sweep {key}: no values given")
        if key == "omega":
            points = []
            for v in values:
                try:
                    ke, ku = v.split(":")
                    points.append({"users_embb": int(ke), "users_urllc": int(ku)})
                except ValueError as exc:
                    raise ConfigError(f"omega values look like KE:KU, got {v!r}") from exc
            axes.append(("omega", values, points))
        elif key in KEYMAP:
            attr = KEYMAP[key]
            probe = SimConfig()
            kind = type(getattr(probe, attr))
            cast = {int: int, float: float, bool: lambda s: s.lower() in ("true", "1")}.get(kind, str)
            axes.append((key, values, [{attr: cast(v)} for v in values]))
        else:
            raise ConfigError(f"--sweep: unknown key {key!r}")
    combos = [({}, [])]
    for key, values, points in axes:
        combos = [
            ({**base, **override}, labels + [f"{key.split('.')[-1]}{value}"])
            for base, labels in combos
            for override, value in zip(points, values)
        ]
    return [{"overrides": base, "labels": labels} for base, labels in combos]


def build_run_specs(cfg: SimConfig, sweeps: list[str] | None) -> list[dict]:
    """One run spec per (policy, sweep point)."""
    specs = []
    for combo in _parse_sweeps(sweeps or []):
        for policy in cfg.policies:
            name = "_".join([policy] + combo["labels"]) if combo["labels"] else policy
            run_cfg = replace(cfg, policies=[policy], **combo["overrides"])
            run_cfg.validate()
            specs.append({"name": name.replace(":", "x"), "policy": policy, "config": run_cfg})
    return specs


def _drop_job(args):
    cfg, seed, policy, drop_index, trace = args
    return run_drop(cfg, seed, policy, drop_index, arrival_trace=trace)


def _write_run_outputs(run_dir: Path, spec: dict, stores: list):
    cfg = spec["config"]
    with open(run_dir / "latency_samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["packet_id", "arrival_tick", "latency_ms", "harq_tx_count"])
        for store in stores:
            off = store.drop_index * PID_STRIDE
            for pid, arr, ms, txc in store.latency_rows:
                w.writerow([pid + off, arr, ms, txc])
    with open(run_dir / "cell_tput.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "cell", "mbps"])
        for store in stores:
            for row in store.cell_tput_rows:
                w.writerow(row)
    with open(run_dir / "pairing_events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "cell", "urllc_user", "outcome", "partner", "chordal",
                    "angle_deg", "prbs"])
        for store in stores:
            for row in store.pairing_rows:
                w.writerow(row)
    summary = aggregate_runs(stores)
    summary.update({
        "run": spec["name"],
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "config": {key: getattr(cfg, attr) for key, attr in sorted(KEYMAP.items())},
        "arrivals_sha": [s.arrivals_sha for s in sorted(stores, key=lambda s: s.drop_index)],
    })
    (run_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    (run_dir / "config.echo").write_text(dump_config(cfg))
    return summary


def run_experiment(cfg: SimConfig, out_dir, sweeps: list[str] | None = None,
                   replay_path: str | None = None, export_trace: str | None = None) -> int:
    """Execute all (policy, sweep, drop) combinations; nonzero on any failure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = build_run_specs(cfg, sweeps)
    trace = None
    if replay_path:
        trace = read_arrival_trace(replay_path)
        for spec in specs:
            spec["config"] = replace(spec["config"], drops=1)
    threads = int(os.environ.get("MUPS_SIM_THREADS", "0")) or (os.cpu_count() or 1)
    status = 0
    comparison = []
    for spec in specs:
        run_cfg = spec["config"]
        jobs = [(run_cfg, run_cfg.seed, spec["policy"], d, trace)
                for d in range(run_cfg.drops)]
        try:
            if threads > 1 and len(jobs) > 1:
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    stores = list(pool.map(_drop_job, jobs))
            else:
                stores = [_drop_job(j) for j in jobs]
            stores.sort(key=lambda s: s.drop_index)
            run_dir = out / spec["name"]
            run_dir.mkdir(parents=True, exist_ok=True)
            summary = _write_run_outputs(run_dir, spec, stores)
            comparison.append((spec, summary))
            if export_trace and spec is specs[0]:
                first = run_drop(run_cfg, run_cfg.seed, spec["policy"], 0,
                                 arrival_trace=trace, collect_trace=True)
                write_arrival_trace(export_trace, first.trace)
        except Exception:
            traceback.print_exc()
            status = 1
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "policy", "users_embb", "users_urllc",
                    "latency_q1e-1_ms", "latency_q1e-2_ms", "latency_q1e-3_ms",
                    "mean_cell_tput_mbps", "mu_success_ratio", "preemption_events"])
        for spec, summary in comparison:
            q = summary["latency_quantiles_ms"]
            w.writerow([
                spec["name"], spec["policy"],
                spec["config"].users_embb, spec["config"].users_urllc,
                q.get("1e-01"), q.get("1e-02"), q.get("1e-03"),
                round(summary["mean_cell_tput_mbps"], 6),
                round(summary["mu_success_ratio"], 6),
                summary["preemption_events"],
            ])
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mups-sim",
        description="Multi-cell 5G downlink scheduler simulation (PF/WPF/PS/MUPS/C-MUPS)",
    )
    parser.add_argument("--config", default=None, help="dotted-key config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--drops", type=int, default=None)
    parser.add_argument("--policies", default=None, help="comma list: pf,wpf,ps,mups,cmups")
    parser.add_argument("--sweep", action="append", default=[],
                        help="KEY=V1,V2,... (repeatable; use omega=KE:KU,... for loading sweeps)")
    parser.add_argument("--replay", default=None, help="arrival trace CSV to replay")
    parser.add_argument("--export-trace", default=None,
                        help="write the first run's arrival trace to this CSV")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--deterministic-bler", action="store_true",
                        help="replace BLER draws with a hard SINR threshold")
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = SimConfig().validate()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.drops is not None:
            cfg.drops = args.drops
        if args.policies:
            cfg.policies = [p.strip() for p in args.policies.split(",") if p.strip()]
        if args.deterministic_bler:
            cfg.deterministic_bler = True
        cfg.validate()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_experiment(cfg, args.out, sweeps=args.sweep, replay_path=args.replay,
                          export_trace=args.export_trace)


if __name__ == "__main__":
    sys.exit(main())
