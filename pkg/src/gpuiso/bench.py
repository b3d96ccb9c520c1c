"""Contention experiments: a fixed process at its maximum IMS against
co-runners whose rate is swept, plus solo partition-size sweeps.

Every sweep point is its own simulation seeded with ``seed ^ index``, so
points can run in any order or in parallel and still give the same rows.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .devices import GpuSpec, get_device
from .errors import ConfigError, InvalidSize
from .partition import (
    PartitionPlan,
    Regime,
    gc_plan,
    gc_valid_sizes,
    make_plan,
    mig_instance_counts,
    mig_plan,
    mps_plan,
    standalone_plan,
)
from .search import SearchConfig, search_max_frequency
from .sim import ProcessSpec, Role, SimConfig, SimResult, executor_for, run_simulation
from .workload import MODELS, ModelProfile, predict_latency, profiles_for

AGX_PIN_HZ = 1.02e9
AGX_PARTITION_SMS = 4

# Static per-model device memory (MiB), before the per-SM allowance.
DEFAULT_FOOTPRINT_MIB = {
    "ConvNeXt-Base": 920.0,
    "ConvNeXt-Large": 1480.0,
    "MobileNetV2": 310.0,
    "ResNet18": 360.0,
    "ViT-B-16": 840.0,
    "ViT-L-32": 1720.0,
}
MIB_PER_SM = 8.0
MIG_OVERHEAD = 0.02


@dataclass(frozen=True)
class ExperimentSpec:
    device: str
    regime: Regime
    model: str
    n_processes: int = 2
    fixed_ims: int | str = "auto"
    adjusted_sweep: tuple[int, ...] | None = None
    inferences_per_point: int = 1000
    seed: int = 0
    agx_equivalence: bool = False
    agx_sweep_factor: float = 1.25
    mig_residual_eps: float = 0.005
    mps_interference_eps: float = 0.01
    stop_at_horizon: bool = False
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        if self.adjusted_sweep is not None:
            object.__setattr__(self, "adjusted_sweep", tuple(int(x) for x in self.adjusted_sweep))
        if self.n_processes not in (2, 4):
            raise ConfigError("n_processes must be 2 or 4")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.fixed_ims != "auto" and not (isinstance(self.fixed_ims, int) and self.fixed_ims >= 1):
            raise ConfigError("fixed_ims must be 'auto' or an integer >= 1")
        sweep = self.adjusted_sweep
        if sweep is not None:
            if not sweep or sweep[0] < 1 or any(b <= a for a, b in zip(sweep, sweep[1:])):
                raise ConfigError("adjusted_sweep must be strictly ascending integers >= 1")
        if self.inferences_per_point < 1:
            raise ConfigError("inferences_per_point must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.agx_sweep_factor < 1:
            raise ConfigError("agx_sweep_factor must be >= 1")

    @property
    def gpu(self) -> GpuSpec:
        return get_device(self.device)

    @property
    def freq_pin_hz(self) -> float | None:
        return AGX_PIN_HZ if self.agx_equivalence else None

    def to_record(self) -> dict:
        d = dataclasses.asdict(self)
        d["regime"] = self.regime.value
        d["adjusted_sweep"] = list(self.adjusted_sweep) if self.adjusted_sweep else None
        return d


@dataclass(frozen=True)
class ResultRow:
    adjusted_ims: int
    fixed_timeout_pct: float
    adjusted_timeout_pct: float
    avg_power_w: float
    throttle_events: int
    mean_freq_hz: float
    fixed_timeouts: int = 0
    fixed_issued: int = 0
    adjusted_timeouts: int = 0
    adjusted_issued: int = 0


RESULT_COLUMNS = tuple(f.name for f in dataclasses.fields(ResultRow))


@dataclass(frozen=True)
class ImpactRow:
    size: int
    sms: int
    throughput: float
    mem_mib: float
    avg_power_w: float


# -- layout ----------------------------------------------------------------

def experiment_plan(spec: ExperimentSpec, gpu: GpuSpec | None = None) -> PartitionPlan:
    """Plan giving each of the spec's processes an equal partition."""
    gpu = gpu or spec.gpu
    n = spec.n_processes
    if spec.regime is Regime.StandAlone:
        return standalone_plan(gpu)
    if spec.regime is Regime.MPS:
        return mps_plan(gpu)
    if spec.regime is Regime.MIG:
        fits = [g for g, count in mig_instance_counts(gpu).items() if count >= n]
        if not fits:
            raise ConfigError(f"{gpu.name} cannot host {n} MIG instances")
        return mig_plan(gpu, [max(fits)] * n)
    valid = gc_valid_sizes(gpu)
    if spec.agx_equivalence:
        size = AGX_PARTITION_SMS
        if size not in valid or gpu.total_sms // size < n:
            raise ConfigError(f"{gpu.name} cannot host {n} GC partitions of {size} SMs")
    else:
        fits = [s for s in valid if gpu.total_sms // s >= n]
        if not fits:
            raise ConfigError(
                f"{gpu.name} cannot host {n} non-overlapping GC partitions "
                f"(at most {gpu.total_sms // valid[0]} of {valid[0]} SMs)"
            )
        size = max(fits)
    return gc_plan(gpu, [size] * n)


def search_plan(spec: ExperimentSpec, gpu: GpuSpec) -> tuple[PartitionPlan, str | None]:
    """Solo allocation the fixed rate is searched on."""
    if spec.agx_equivalence:
        return gc_plan(gpu, [AGX_PARTITION_SMS]), "gc0"
    if spec.regime.partitioned:
        plan = experiment_plan(spec, gpu)
        return plan, plan.partitions[0].id
    return make_plan(gpu, spec.regime), None


def resolve_fixed_ims(spec: ExperimentSpec) -> int:
    if spec.fixed_ims != "auto":
        return int(spec.fixed_ims)
    gpu = spec.gpu
    plan, pid = search_plan(spec, gpu)
    profile = profiles_for(gpu)[spec.model]
    ex = executor_for(gpu, profile, plan, pid, seed=spec.seed, freq_pin_hz=spec.freq_pin_hz)
    f, _ = search_max_frequency(ex, spec.search)
    return f


def default_sweep(spec: ExperimentSpec, fixed_ims: int) -> tuple[int, ...]:
    top = fixed_ims
    if spec.agx_equivalence:
        top = math.ceil(spec.agx_sweep_factor * fixed_ims - 1e-9)
    return tuple(range(1, top + 1))


# -- sweeps ----------------------------------------------------------------

def point_config(spec: ExperimentSpec, fixed_ims: int, adjusted_ims: int, index: int,
                 gpu: GpuSpec | None = None, record_events: bool = False) -> SimConfig:
    gpu = gpu or spec.gpu
    plan = experiment_plan(spec, gpu)
    parts = [p.id for p in plan.partitions] if spec.regime.partitioned else [None] * spec.n_processes
    procs = [
        ProcessSpec(f"fixed{i}", spec.model, fixed_ims, parts[i], Role.Fixed)
        for i in range(spec.n_processes - 1)
    ]
    procs.append(ProcessSpec("adjusted", spec.model, adjusted_ims, parts[-1], Role.Adjusted))
    return SimConfig(
        gpu=gpu,
        plan=plan,
        processes=tuple(procs),
        horizon_s=spec.inferences_per_point / fixed_ims,
        seed=spec.seed ^ index,
        mig_residual_eps=spec.mig_residual_eps,
        mps_interference_eps=spec.mps_interference_eps,
        freq_pin_hz=spec.freq_pin_hz,
        stop_at_horizon=spec.stop_at_horizon,
        record_events=record_events,
    )


def row_from_result(adjusted_ims: int, result: SimResult) -> ResultRow:
    fixed = result.by_role(Role.Fixed)
    adj = result.by_role(Role.Adjusted)
    return ResultRow(
        adjusted_ims=adjusted_ims,
        fixed_timeout_pct=sum(s.timeout_pct for s in fixed) / len(fixed),
        adjusted_timeout_pct=sum(s.timeout_pct for s in adj) / len(adj),
        avg_power_w=result.mean_power_w,
        throttle_events=result.throttle_events,
        mean_freq_hz=result.mean_freq_hz,
        fixed_timeouts=sum(s.timeouts for s in fixed),
        fixed_issued=sum(s.issued for s in fixed),
        adjusted_timeouts=sum(s.timeouts for s in adj),
        adjusted_issued=sum(s.issued for s in adj),
    )


def _run_point(args) -> ResultRow:
    spec, fixed_ims, adjusted_ims, index = args
    return row_from_result(adjusted_ims, run_simulation(point_config(spec, fixed_ims, adjusted_ims, index)))


def sweep_points(spec: ExperimentSpec, fixed_ims: int | None = None) -> list[tuple]:
    fixed_ims = resolve_fixed_ims(spec) if fixed_ims is None else fixed_ims
    sweep = spec.adjusted_sweep or default_sweep(spec, fixed_ims)
    return [(spec, fixed_ims, a, i) for i, a in enumerate(sweep)]


def _sweep(spec: ExperimentSpec, workers: int) -> list[ResultRow]:
    experiment_plan(spec)  # fail fast on infeasible layouts
    points = sweep_points(spec)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_point, points))
    return [_run_point(p) for p in points]


def run_two_process_sweep(spec: ExperimentSpec, workers: int = 1) -> list[ResultRow]:
    if spec.n_processes != 2:
        raise ConfigError("run_two_process_sweep needs n_processes == 2")
    return _sweep(spec, workers)


def run_four_process_sweep(spec: ExperimentSpec, workers: int = 1) -> list[ResultRow]:
    if spec.n_processes != 4:
        raise ConfigError("run_four_process_sweep needs n_processes == 4")
    return _sweep(spec, workers)


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> list[ResultRow]:
    return _sweep(spec, workers)


def top_point_result(spec: ExperimentSpec, record_events: bool = False) -> SimResult:
    """Full simulation result (with telemetry) of the last sweep point."""
    spec_, fixed_ims, adjusted_ims, index = sweep_points(spec)[-1]
    return run_simulation(point_config(spec_, fixed_ims, adjusted_ims, index, record_events=record_events))


# -- partition impact --------------------------------------------------------

def partition_impact_sweep(model: str, device: str | GpuSpec, regime, sizes: Sequence[int] = (),
                           n_inferences: int = 500, seed: int = 0,
                           footprint_mib: Mapping[str, float] | None = None,
                           mig_overhead: float = MIG_OVERHEAD) -> list[ImpactRow]:
    """Solo process kept saturated on each partition size.

    ``sizes`` are GPCs for MIG and SMs for GC; StandAlone and MPS use the
    whole device and ignore them.
    """
    gpu = device if isinstance(device, GpuSpec) else get_device(device)
    regime = Regime.parse(regime)
    footprint = DEFAULT_FOOTPRINT_MIB if footprint_mib is None else footprint_mib
    if model not in footprint:
        raise ConfigError(f"no memory footprint for {model!r}")
    profile: ModelProfile = profiles_for(gpu)[model]

    if regime.partitioned:
        if not sizes:
            raise ConfigError(f"{regime.value} impact sweep needs sizes")
        legal = list(mig_instance_counts(gpu)) if regime is Regime.MIG else gc_valid_sizes(gpu)
        for s in sizes:
            if s not in legal:
                raise InvalidSize(f"{s} is not a valid {regime.value} size on {gpu.name} (valid: {legal})")
        plans = [(s, make_plan(gpu, regime, [s])) for s in sizes]
    else:
        plans = [(gpu.total_sms, make_plan(gpu, regime))]

    rows = []
    for size, plan in plans:
        part = plan.partitions[0]
        latency = predict_latency(profile, part.sms, None, part.mem_share)
        # Issue faster than the device can serve so it never idles.
        ims = math.ceil(2.0 / latency)
        cfg = SimConfig(
            gpu=gpu, plan=plan,
            processes=(ProcessSpec("solo", model, ims, part.id if regime.partitioned else None),),
            n_inferences=n_inferences, seed=seed,
        )
        res = run_simulation(cfg)
        throughput = res.processes[0].completed / res.end_time_s
        if regime is Regime.MIG:
            throughput /= 1.0 + mig_overhead
        rows.append(ImpactRow(size, part.sms, throughput,
                              footprint[model] + MIB_PER_SM * part.sms, res.mean_power_w))
    return rows


# -- files -------------------------------------------------------------------

def write_results(rows: Sequence, path: str | Path) -> None:
    rows = list(rows)
    cls = type(rows[0]) if rows else ResultRow
    cols = [f.name for f in dataclasses.fields(cls)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_metadata(path: str | Path, kind: str, spec: Mapping, fixed_ims: int | None = None,
                   extra: Mapping | None = None) -> None:
    from . import __version__
    doc = {
        "kind": kind,
        "spec": dict(spec),
        "seed": spec.get("seed"),
        "fixed_ims": fixed_ims,
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def read_results(path: str | Path) -> list[ResultRow]:
    """Parse a sweep results file; raises ValueError/KeyError on malformed input."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:6]) != list(RESULT_COLUMNS[:6]):
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            kw = {}
            for f in dataclasses.fields(ResultRow):
                if f.name in row and row[f.name] not in (None, ""):
                    kw[f.name] = (int if f.type in ("int", int) else float)(row[f.name])
            out.append(ResultRow(**kw))
    return out
