"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 search failure, 4 unreadable
results, 5 expectation not met.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .bench import (
    ExperimentSpec,
    partition_impact_sweep,
    resolve_fixed_ims,
    run_sweep,
    search_plan,
    top_point_result,
    write_metadata,
    write_results,
)
from .devices import get_device
from .errors import ConfigError, ExpectationFailed, GpuIsoError
from .partition import (
    Regime,
    enumerate_gc_layouts,
    gc_valid_sizes,
    make_plan,
    mig_instance_counts,
    validate_plan,
)
from .report import summarize
from .scenario import Scenario, load_scenario, scenario_from_mapping
from .search import ConstantExecutor, search_max_frequency, summary_line
from .sim import executor_for
from .workload import (
    ROUND_TRIP_TOL,
    anchor_allocation,
    anchor_table,
    dump_profiles,
    predict_latency,
    profiles_for,
)


def _scenario(args, need_device=True) -> Scenario:
    if args.scenario:
        sc = load_scenario(args.scenario)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["out"] = args.out
        return dataclasses.replace(sc, **over)
    if need_device and not args.device:
        raise ConfigError("give --device or --scenario")
    doc = {"device": args.device}
    if args.regime:
        doc["regime"] = args.regime.split(",")
    if args.model:
        doc["models"] = "all" if args.model == ["all"] else args.model
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    for key in ("n_processes", "inferences_per_point", "fixed_ims"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    if getattr(args, "agx_equivalence", False):
        doc["agx_equivalence"] = True
    if getattr(args, "sizes", None):
        doc["sizes"] = args.sizes
    return scenario_from_mapping(doc, "command line")


def _out_dir(sc: Scenario) -> Path:
    d = Path(sc.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _meta_spec(sc: Scenario) -> dict:
    d = dataclasses.asdict(sc)
    d["regimes"] = [r.value for r in sc.regimes]
    d.pop("expect")
    return d


def _expect_records(sc: Scenario) -> list[dict]:
    return [dataclasses.asdict(e) for e in sc.expect]


# -- commands ----------------------------------------------------------------

def cmd_partitions(args) -> int:
    gpu = get_device(args.device)
    regimes = [Regime.parse(args.regime)] if args.regime else [
        r for r, ok in ((Regime.MIG, gpu.supports_mig), (Regime.GC, gpu.supports_gc)) if ok
    ]
    print(f"{gpu.name}: {gpu.total_sms} SMs in {gpu.gpc_count} GPCs ({gpu.sms_per_gpc} SMs each)")
    for regime in regimes:
        if regime is Regime.MIG:
            counts = mig_instance_counts(gpu)
            print("MIG instance sizes (GPCs): " + ", ".join(str(g) for g in counts))
            for g, n in counts.items():
                print(f"  {g}g ({g * gpu.sms_per_gpc} SMs): up to {n} concurrent")
        elif regime is Regime.GC:
            sizes = gc_valid_sizes(gpu)
            print("GC sizes (SMs): " + ", ".join(str(s) for s in sizes))
            for s in sizes:
                print(f"  {s} SMs: up to {enumerate_gc_layouts(gpu, s)} concurrent")
        else:
            print(f"{regime.value}: whole device, no partitions")
    if args.plan:
        if len(regimes) != 1:
            raise ConfigError("--plan needs a single --regime")
        plan = make_plan(gpu, regimes[0], args.plan)
        problems = validate_plan(plan, gpu)
        label = " + ".join(str(s) for s in args.plan)
        if problems:
            print(f"plan {label}: rejected")
            for p in problems:
                print(f"  {p}")
            return 2
        print(f"plan {label}: accepted")
    return 0


def cmd_calibrate(args) -> int:
    gpu = get_device(args.device)
    profiles = profiles_for(gpu)
    print(f"{'model':16s} {'compute_work':>13s} {'mem_work':>10s} {'sat':>4s}  worst anchor error")
    for name, p in profiles.items():
        errs = [
            abs(1.0 / (predict_latency(p, *_alloc(a, gpu)) * a.ims) - 1.0)
            for a in anchor_table() if a.model == name and a.platform == gpu.platform
        ]
        err = f"{max(errs):.2%}" if errs else "derived"
        print(f"{name:16s} {p.compute_work:13.6g} {p.mem_work:10.4g} {p.sm_saturation:4d}  {err}")
    print(f"(round-trip tolerance {ROUND_TRIP_TOL:.0%})")
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        dump_profiles(profiles.values(), path / f"profiles_{gpu.name}.yaml")
    return 0


def _alloc(anchor, gpu):
    sms, bw = anchor_allocation(anchor.config, gpu)
    return sms, None, bw


def cmd_search(args) -> int:
    sc = _scenario(args)
    gpu = get_device(sc.device)
    out = _out_dir(sc)
    rows, capped = [], False
    for regime in sc.regimes:
        for model in sc.models:
            spec = ExperimentSpec(sc.device, regime, model, **sc.experiment_fields())
            if sc.executor_latency_ms is not None:
                ex = ConstantExecutor(sc.executor_latency_ms / 1e3)
            else:
                plan, pid = search_plan(spec, gpu)
                ex = executor_for(gpu, profiles_for(gpu)[model], plan, pid,
                                  seed=sc.seed, freq_pin_hz=spec.freq_pin_hz)
            f, trace = search_max_frequency(ex, sc.search)
            trace.write_csv(out / f"trace_{gpu.name}_{regime.value}_{model}.csv")
            line = summary_line(model, gpu.platform, regime.value, f)
            if trace.cap_reached:
                capped = True
                line += "\tCapReached"
            print(line)
            rows.append((model, gpu.platform, regime.value, f, trace.cap_reached))
    stem = f"search_{gpu.name}"
    with open(out / f"{stem}.csv", "w") as fh:
        fh.write("model,platform,regime,final_f,cap_reached\n")
        for r in rows:
            fh.write(",".join(str(x) for x in r) + "\n")
    write_metadata(out / f"{stem}.meta.json", "search", _meta_spec(sc),
                   extra={"results": f"{stem}.csv", "expect": _expect_records(sc)})
    if capped:
        print("note: ascent stopped at the cap; the reported rate is a lower bound")
    return 0


def cmd_bench(args) -> int:
    sc = _scenario(args)
    gpu = get_device(sc.device)
    out = _out_dir(sc)
    for regime in sc.regimes:
        for model in sc.models:
            spec = ExperimentSpec(sc.device, regime, model, **sc.experiment_fields())
            fixed = resolve_fixed_ims(spec)
            spec = dataclasses.replace(spec, fixed_ims=fixed)
            rows = run_sweep(spec)
            stem = f"sweep_{gpu.name}_{regime.value}_{model}_n{spec.n_processes}"
            if spec.agx_equivalence:
                stem += "_agxeq"
            write_results(rows, out / f"{stem}.csv")
            top = top_point_result(spec)
            top.write_telemetry(out / f"{stem}.telemetry.csv")
            write_metadata(out / f"{stem}.meta.json", "sweep", spec.to_record(), fixed,
                           extra={"results": f"{stem}.csv", "telemetry": f"{stem}.telemetry.csv",
                                  "expect": _expect_records(sc)})
            worst = max(r.fixed_timeout_pct for r in rows)
            print(f"{model}\t{gpu.platform}\t{regime.value}\tfixed_ims={fixed}\t"
                  f"points={len(rows)}\tmax_fixed_timeout_pct={worst:.2f}\t"
                  f"throttle_events_top={rows[-1].throttle_events}")
    return 0


def cmd_impact(args) -> int:
    sc = _scenario(args)
    gpu = get_device(sc.device)
    out = _out_dir(sc)
    for regime in sc.regimes:
        for model in sc.models:
            rows = partition_impact_sweep(model, gpu, regime, sc.sizes, seed=sc.seed)
            stem = f"impact_{gpu.name}_{regime.value}_{model}"
            write_results(rows, out / f"{stem}.csv")
            write_metadata(out / f"{stem}.meta.json", "impact", _meta_spec(sc),
                           extra={"results": f"{stem}.csv", "expect": _expect_records(sc)})
            for r in rows:
                print(f"{model}\t{regime.value}\tsize={r.size}\tsms={r.sms}\t"
                      f"throughput={r.throughput:.2f}\tmem_mib={r.mem_mib:.0f}\tpower_w={r.avg_power_w:.1f}")
    return 0


def cmd_report(args) -> int:
    directory = args.directory or args.out
    if not directory:
        raise ConfigError("give a results directory")
    extra = load_scenario(args.scenario).expect if args.scenario else ()
    summary = summarize(directory, extra)
    print(summary.render())
    if not summary.ok:
        raise ExpectationFailed("expectations not met")
    return 0


# -- parser ------------------------------------------------------------------

def _sizes(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--device", help="device name from the registry (a100, orin-nano, orin-agx)")
    common.add_argument("--regime", help="standalone, mps, mig or gc")
    common.add_argument("--model", action="append", help="network name; repeat for several")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--scenario", help="YAML scenario file")

    parser = argparse.ArgumentParser(prog="gpuiso", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partitions", parents=[common], help="list legal partition sizes")
    p.add_argument("--plan", type=_sizes, help="validate a plan, e.g. 3,3 (GPCs for mig, SMs for gc)")
    p.set_defaults(func=cmd_partitions)

    p = sub.add_parser("calibrate", parents=[common], help="fit and show latency profiles")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("search", parents=[common], help="maximum stable IMS per model and regime")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", parents=[common], help="contention sweep against a fixed process")
    p.add_argument("--n-processes", dest="n_processes", type=int, choices=(2, 4))
    p.add_argument("--inferences", dest="inferences_per_point", type=int)
    p.add_argument("--fixed-ims", dest="fixed_ims", type=int)
    p.add_argument("--agx-equivalence", action="store_true",
                   help="pin 1.02 GHz and use 4-SM partitions")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("impact", parents=[common], help="solo throughput per partition size")
    p.add_argument("--sizes", type=_sizes, help="comma-separated sizes (GPCs for mig, SMs for gc)")
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("report", parents=[common], help="summarize a results directory")
    p.add_argument("directory", nargs="?")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("partitions", "calibrate") and not args.device:
            if not args.scenario:
                raise ConfigError("--device is required")
            args.device = load_scenario(args.scenario).device
        return args.func(args)
    except GpuIsoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
