"""Command line: gen / run / preset / check."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from .engine import InvariantViolation
from .sim import (PRESETS, ConfigError, SimConfig, Simulation, UnknownPreset, build, coerce_field,
                  execute, metrics_csv, parse_config, preset, simulate)
from .workload import (InvalidSpec, Trace, WorkloadSpec, assign_frequencies, build_namespace,
                       parse_spec, sample_trace)

EXIT_VIOLATION = 2
EXIT_USAGE = 64


def _add_config_flags(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("simulation config (mirrors SimConfig)")
    g.add_argument("--config", help="flat key = value config file")
    for f in fields(SimConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None,
                       metavar=f.type.upper() if isinstance(f.type, str) else "V")


def _add_workload_flags(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("workload")
    g.add_argument("--spec", help="flat key = value workload spec file")
    g.add_argument("--workload", default=None, help="alibaba | training | thumb | linkedin")
    g.add_argument("--n-files", type=int, default=None)
    g.add_argument("--length", type=int, default=None)
    g.add_argument("--max-depth", type=int, default=None)
    g.add_argument("--skew", default=None, help="powerlaw | uniform")
    g.add_argument("--exponent", type=float, default=None)
    g.add_argument("--order", default=None, help="random | hlf | llf")
    g.add_argument("--no-eighty-twenty", action="store_true")
    g.add_argument("--workload-seed", type=int, default=None)


def _config(args) -> SimConfig:
    cfg = SimConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), cfg)
    kw = {}
    for f in fields(SimConfig):
        v = getattr(args, "cfg_" + f.name)
        if v is not None:
            kw[f.name] = coerce_field(f.name, v)
    return cfg.replace(**kw) if kw else cfg


def _spec(args, n_clients: int | None = None) -> WorkloadSpec:
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = parse_spec(fh.read())
        base = {f.name: getattr(spec, f.name) for f in fields(WorkloadSpec)}
    else:
        base = {"name": "thumb"}
    over = {"name": args.workload, "n_files": args.n_files, "length": args.length,
            "max_depth": args.max_depth, "skew": args.skew, "exponent": args.exponent,
            "order": args.order, "seed": args.workload_seed, "n_clients": n_clients}
    for k, v in over.items():
        if v is not None:
            base[k] = v
            if k == "name":
                base["mix"] = {}
    if args.no_eighty_twenty:
        base["eighty_twenty"] = False
    return WorkloadSpec(**base)


def _materialize(spec: WorkloadSpec):
    rng = np.random.default_rng(spec.seed)
    tree, files = build_namespace(spec)
    weights = assign_frequencies(files, spec.skew, spec.order, spec.exponent,
                                 spec.eighty_twenty, rng)
    return tree, weights, rng


def cmd_gen(args) -> int:
    spec = _spec(args)
    tree, weights, rng = _materialize(spec)
    trace = sample_trace(spec, weights, rng=rng)
    if args.out == "-":
        sys.stdout.write(trace.dumps())
    else:
        trace.save(args.out)
        print(f"wrote {len(trace)} ops to {args.out}", file=sys.stderr)
    if args.namespace_out:
        with open(args.namespace_out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(tree.export_lines()) + "\n")
    return 0


def _write(path: str | None, text: str) -> None:
    if not path or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.latency_out:
        cfg = cfg.replace(latency_log=True)
    spec = _spec(args, cfg.n_clients)
    tree, weights, rng = _materialize(spec)
    trace = Trace.load(args.trace) if args.trace else sample_trace(spec, weights, rng=rng)
    sim = build(cfg, trace, tree, weights)
    sim.start()
    try:
        m = sim.run()
    except InvariantViolation as e:
        print(f"invariant violation at t={sim.engine.now:.9f}: {e}", file=sys.stderr)
        _dump(args, sim)
        return EXIT_VIOLATION
    _write(args.out, metrics_csv([m.row()]))
    if args.latency_out:
        rows = ["client,op,depth,hit,latency_s"] + [f"{c},{o},{d},{h},{lat:.9f}"
                                                    for c, o, d, h, lat in sim.latency_rows]
        _write(args.latency_out, "\n".join(rows) + "\n")
    if args.series_out and m.series:
        _write(args.series_out, "bin,throughput_ops\n" +
               "".join(f"{i},{v:.6g}\n" for i, v in enumerate(m.series)))
    _dump(args, sim)
    for v in m.violations[:20]:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_VIOLATION if m.violations else 0


def _dump(args, sim: Simulation | None) -> None:
    if sim is None or not getattr(args, "events_out", None):
        return
    _write(args.events_out, "\n".join(sim.switch.event_log) + "\n")


def cmd_preset(args) -> int:
    base = _config(args)
    try:
        runs = preset(args.name, n_files=args.n_files, length=args.length, seed=base.seed,
                      base=base, time_scale=args.time_scale)
    except UnknownPreset:
        print(f"unknown preset {args.name!r}; choose from {', '.join(PRESETS)}", file=sys.stderr)
        return EXIT_USAGE
    if args.list:
        for r in runs:
            print(r.label)
        return 0
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    bad = 0
    for r in runs:
        m = execute(r)
        row = {"run": r.label, **m.row()}
        rows.append(row)
        safe = r.label.replace("/", "_")
        _write(os.path.join(args.out_dir, f"{safe}.csv"), metrics_csv([row]))
        if m.series:
            _write(os.path.join(args.out_dir, f"{safe}.series.csv"), "bin,throughput_ops\n" +
                   "".join(f"{i},{v:.6g}\n" for i, v in enumerate(m.series)))
        bad += len(m.violations)
        print(f"{r.label}: throughput={m.throughput:.4g} ops/s hit={m.hit_rate:.3f} "
              f"recirc={m.recirc_mean:.3f} violations={len(m.violations)}", file=sys.stderr)
    _write(os.path.join(args.out_dir, f"{args.name}_summary.csv"), metrics_csv(rows))
    return EXIT_VIOLATION if bad else 0


def cmd_check(args) -> int:
    """Quick invariant suites: lossy adversity, collisions, recursive writes."""
    from .namespace import OpKind
    from .workload import chmod_mix
    suites = {
        "adversity": (SimConfig(n_servers=4, loss_reply=0.3, loss_ack=0.3, foreign_every=4,
                                seed=args.seed),
                      WorkloadSpec(name="custom", mix={OpKind.STAT: 0.5, OpKind.OPEN: 0.2,
                                                       OpKind.CHMOD: 0.3},
                                   n_files=2000, length=args.length, n_clients=128,
                                   seed=args.seed)),
        "collisions": (SimConfig(n_servers=4, hasher="weak", weak_buckets=1, capacity=1024,
                                 preload=200, seed=args.seed),
                       WorkloadSpec(name="thumb", n_files=3000, max_depth=4, length=args.length,
                                    seed=args.seed)),
        "recursive": (SimConfig(n_servers=4, seed=args.seed),
                      WorkloadSpec(name="custom", mix={OpKind.STAT: 0.9,
                                                       OpKind.CHMOD_RECURSIVE: 0.1},
                                   n_files=500, length=args.length, seed=args.seed)),
        "chmod": (SimConfig(n_servers=4, seed=args.seed),
                  WorkloadSpec(name="custom", mix=chmod_mix(0.75), n_files=2000,
                               length=args.length, seed=args.seed)),
    }
    failed = 0
    for name, (cfg, spec) in suites.items():
        tree, weights, rng = _materialize(spec)
        trace = sample_trace(spec, weights, rng=rng)
        try:
            m, _ = simulate(cfg, trace, tree, weights)
            problems = m.violations
        except InvariantViolation as e:
            problems = [str(e)]
        status = "PASS" if not problems else "FAIL"
        failed += bool(problems)
        print(f"{status} {name}: {len(problems)} violation(s)")
        for p in problems[:10]:
            print(f"  {p}")
    return EXIT_VIOLATION if failed else 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fletchsim", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a trace from a workload spec")
    _add_workload_flags(g)
    g.add_argument("--out", default="-", help="trace file ('-' for stdout)")
    g.add_argument("--namespace-out", default=None, help="also write the namespace snapshot")
    g.set_defaults(fn=cmd_gen)

    r = sub.add_parser("run", help="run one simulation and print a CSV row")
    _add_workload_flags(r)
    _add_config_flags(r)
    r.add_argument("--trace", default=None, help="replay this trace instead of sampling")
    r.add_argument("--out", default="-", help="metrics CSV ('-' for stdout)")
    r.add_argument("--latency-out", default=None, help="per-request latency CSV")
    r.add_argument("--series-out", default=None, help="per-bin throughput CSV")
    r.add_argument("--events-out", default=None,
                   help="packet trace file (use with --dump-events true)")
    r.set_defaults(fn=cmd_run)

    p = sub.add_parser("preset", help="run an experiment matrix")
    p.add_argument("name", help="one of " + ", ".join(PRESETS))
    _add_config_flags(p)
    p.add_argument("--n-files", type=int, default=20_000)
    p.add_argument("--length", type=int, default=100_000)
    p.add_argument("--time-scale", type=float, default=0.01)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--list", action="store_true", help="only list the runs")
    p.set_defaults(fn=cmd_preset)

    c = sub.add_parser("check", help="run the invariant suites")
    c.add_argument("--length", type=int, default=20_000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InvalidSpec) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
