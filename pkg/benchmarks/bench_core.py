"""Time the compiled simulation core against the pure-Python fallback.

    python3 benchmarks/bench_core.py [--repeat 5] [--inferences 2000]

Each case is a top-of-sweep point; both backends must produce identical
results, which is checked before timing is reported.
"""

import argparse
import statistics
import time

from gpuiso.bench import ExperimentSpec, point_config, resolve_fixed_ims
from gpuiso.sim import available_backends, run_simulation

CASES = [
    ("a100", "standalone", "ConvNeXt-Large", 2),
    ("a100", "mps", "ResNet18", 2),
    ("a100", "mig", "ViT-B-16", 2),
    ("orin-nano", "gc", "ConvNeXt-Large", 2),
    ("orin-agx", "gc", "MobileNetV2", 4),
]


def case_config(device, regime, model, n, inferences):
    spec = ExperimentSpec(device, regime, model, n_processes=n, inferences_per_point=inferences)
    fixed = resolve_fixed_ims(spec)
    return point_config(spec, fixed, fixed, 0)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--inferences", type=int, default=2000)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled core not built; only the python backend is available")
    print(f"{'case':42s} " + " ".join(f"{b + ' (ms)':>15s}" for b in backends) + "  speedup")
    for case in CASES:
        cfg = case_config(*case, args.inferences)
        results = {b: run_simulation(cfg, backend=b) for b in backends}
        first = results[backends[0]].canonical_json()
        if any(r.canonical_json() != first for r in results.values()):
            raise SystemExit(f"backends disagree on {case}")
        best = {b: best_of(lambda b=b: run_simulation(cfg, backend=b), args.repeat)[0] for b in backends}
        label = f"{case[0]}/{case[1]}/{case[2]} n={case[3]}"
        cols = " ".join(f"{best[b] * 1e3:15.2f}" for b in backends)
        speed = f"{best['python'] / best['compiled']:7.1f}x" if "compiled" in best else ""
        print(f"{label:42s} {cols}  {speed}")


if __name__ == "__main__":
    main()
