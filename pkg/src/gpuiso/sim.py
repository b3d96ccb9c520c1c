"""Discrete-event simulation of concurrent inference processes on one GPU.

Every process issues inferences open-loop at ``1 / target_ims``; an
inference whose completion passes ``issue + 1 / target_ims`` is a timeout
but still runs to completion. How processes share the device depends on
the plan's regime:

* StandAlone: one inference on the GPU at a time, FIFO by issue time
  (ties by process order); a change of process costs the incoming model's
  ``switch_cost_s``.
* MPS: all processes run concurrently on an equal split of SMs and memory
  bandwidth; a busy co-runner inflates latency by
  ``1 + mps_interference_eps``.
* MIG: each process owns its partition's SMs and memory share; a busy
  co-runner inflates latency by ``1 + mig_residual_eps``.
* GC: each process owns its partition's SMs; bandwidth is split among the
  busy processes; clock and power budget are shared.

Power, clock and a temperature proxy are sampled every
``telemetry_period_s``; sustained power at the cap throttles the clock.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from array import array
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _simcore
from .devices import DvfsParams, GpuSpec, ThermalParams
from .errors import ConfigError
from .partition import PartitionPlan, Regime, validate_plan
from .workload import ModelProfile, predict_latency, profiles_for

try:
    from . import _simcore_c
except ImportError:  # extension not built
    _simcore_c = None

# Completion within this many seconds of the deadline counts as met.
MET_TOLERANCE_S = 1e-9

_REGIME_CODE = {
    Regime.StandAlone: _simcore.STANDALONE,
    Regime.MPS: _simcore.MPS,
    Regime.MIG: _simcore.MIG,
    Regime.GC: _simcore.GC,
}


def available_backends() -> list[str]:
    return ["compiled", "python"] if _simcore_c is not None else ["python"]


def default_backend() -> str:
    forced = os.environ.get("GPUISO_BACKEND")
    if forced:
        return forced
    return "compiled" if _simcore_c is not None else "python"


def _core(backend: str | None):
    backend = backend or default_backend()
    if backend == "python":
        return _simcore.simulate
    if backend == "compiled":
        if _simcore_c is None:
            raise ConfigError("compiled simulation core is not built")
        return _simcore_c.simulate
    raise ConfigError(f"unknown backend {backend!r}")


class Role(str, enum.Enum):
    Fixed = "fixed"
    Adjusted = "adjusted"


@dataclass(frozen=True)
class ProcessSpec:
    id: str
    model: str
    target_ims: int
    partition_id: str | None = None
    role: Role = Role.Fixed


@dataclass(frozen=True)
class SimConfig:
    gpu: GpuSpec
    plan: PartitionPlan
    processes: tuple[ProcessSpec, ...]
    n_inferences: int | None = None
    horizon_s: float | None = None
    seed: int = 0
    mig_residual_eps: float = 0.005
    mps_interference_eps: float = 0.01
    dvfs: DvfsParams | None = None
    thermal: ThermalParams | None = None
    telemetry_period_s: float = 0.01
    jitter: float | None = None
    freq_pin_hz: float | None = None
    profiles: Mapping[str, ModelProfile] | None = None
    record_events: bool = False
    stop_at_horizon: bool = False

    def __post_init__(self):
        object.__setattr__(self, "processes", tuple(self.processes))


@dataclass(frozen=True)
class ProcessStats:
    id: str
    role: Role
    model: str
    target_ims: int
    issued: int
    completed: int
    timeouts: int
    in_flight: int

    @property
    def timeout_pct(self) -> float:
        return 100.0 * self.timeouts / self.issued if self.issued else 0.0


@dataclass(frozen=True)
class EventRecord:
    t_issue: float
    t_start: float
    t_end: float
    process: str
    deadline: float
    timeout: bool


@dataclass(frozen=True)
class Telemetry:
    t_s: tuple[float, ...] = ()
    power_w: tuple[float, ...] = ()
    freq_hz: tuple[float, ...] = ()
    temp_c: tuple[float, ...] = ()

    def __len__(self):
        return len(self.t_s)


@dataclass(frozen=True)
class SimResult:
    processes: tuple[ProcessStats, ...]
    telemetry: Telemetry
    throttle_times: tuple[float, ...]
    end_time_s: float
    idle_power_w: float
    events: tuple[EventRecord, ...] = field(default=(), repr=False)

    def stats(self, pid: str) -> ProcessStats:
        for s in self.processes:
            if s.id == pid:
                return s
        raise KeyError(pid)

    def by_role(self, role: Role) -> list[ProcessStats]:
        return [s for s in self.processes if s.role is role]

    @property
    def throttle_events(self) -> int:
        return len(self.throttle_times)

    @property
    def mean_power_w(self) -> float:
        p = self.telemetry.power_w
        return sum(p) / len(p) if p else self.idle_power_w

    @property
    def mean_freq_hz(self) -> float:
        f = self.telemetry.freq_hz
        return sum(f) / len(f) if f else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        for s in d["processes"]:
            s["role"] = s["role"].value
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)

    def events_for(self, pid: str) -> list[EventRecord]:
        return [e for e in self.events if e.process == pid]

    def write_event_log(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps({
                    "t_issue": e.t_issue, "t_start": e.t_start, "t_end": e.t_end,
                    "process": e.process, "deadline": e.deadline, "timeout_flag": e.timeout,
                }) + "\n")

    def write_telemetry(self, path: str | Path) -> None:
        tel = self.telemetry
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "power_w", "freq_hz", "temp_c"])
            for row in zip(tel.t_s, tel.power_w, tel.freq_hz, tel.temp_c):
                w.writerow([repr(v) for v in row])


def read_telemetry(path: str | Path) -> Telemetry:
    cols = {"t_s": [], "power_w": [], "freq_hz": [], "temp_c": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for key in cols:
                cols[key].append(float(row[key]))
    return Telemetry(*(tuple(cols[k]) for k in ("t_s", "power_w", "freq_hz", "temp_c")))


# -- power, clock and temperature steps -----------------------------------
# The simulation core inlines these formulas; they are exposed for
# inspection and for replaying a recorded trace.

def power_step(gpu: GpuSpec, busy_sms: float, freq_hz: float,
               dvfs: DvfsParams | None = None) -> float:
    dvfs = dvfs or gpu.dvfs
    per_sm = gpu.per_sm_power_w if dvfs.per_sm_power_w is None else dvfs.per_sm_power_w
    return gpu.idle_power_w + per_sm * busy_sms * (freq_hz / gpu.f_max_hz) ** dvfs.power_exponent


@dataclass
class DvfsState:
    freq_hz: float
    throttled: bool = False
    above: int = 0
    below: int = 0


def dvfs_window_samples(window_s: float, period_s: float) -> int:
    return max(1, math.ceil(window_s / period_s - 1e-9))


def dvfs_step(state: DvfsState, power_w: float, gpu: GpuSpec, period_s: float,
              dvfs: DvfsParams | None = None, base_freq_hz: float | None = None) -> bool:
    """Advance the throttle state machine by one sample; True on a throttle event."""
    dvfs = dvfs or gpu.dvfs
    base = gpu.f_max_hz if base_freq_hz is None else base_freq_hz
    if power_w >= dvfs.cap_w * (1.0 - 1e-9):
        state.above += 1
        state.below = 0
    else:
        state.below += 1
        state.above = 0
    if not state.throttled and state.above >= dvfs_window_samples(dvfs.sustain_window_s, period_s):
        state.throttled = True
        state.freq_hz = max(gpu.f_min_hz, min(base, gpu.f_max_hz * dvfs.throttle_factor))
        return True
    if state.throttled and state.below >= dvfs_window_samples(dvfs.recover_window_s, period_s):
        state.throttled = False
        state.freq_hz = base
    return False


def temp_proxy_step(temp_c: float, power_w: float, dt_s: float,
                    thermal: ThermalParams | None = None) -> float:
    th = thermal or ThermalParams()
    return temp_c + dt_s / th.tau_s * (th.t_amb_c + th.k_c_per_w * power_w - temp_c)


# -- running ---------------------------------------------------------------

def jitter_factors(seed: int, index: int, n: int, jitter: float) -> np.ndarray:
    """Per-inference latency multipliers for one process.

    Each factor is ``u / (1 + jitter)`` with ``u`` uniform on
    ``[1, 1 + jitter]``: the modelled latency is the upper edge of the
    jitter band.
    """
    if jitter == 0 or n == 0:
        return np.ones(n)
    rng = np.random.default_rng([seed, index])
    return (1.0 + jitter * rng.random(n)) / (1.0 + jitter)


def issue_count(ims: float, horizon_s: float) -> int:
    """Number of k >= 0 with k / ims < horizon_s."""
    x = horizon_s * ims
    r = round(x)
    if abs(x - r) < 1e-6:
        return int(r)
    return math.ceil(x)


def _check(config: SimConfig) -> tuple[dict, list]:
    gpu, plan = config.gpu, config.plan
    problems = validate_plan(plan, gpu)
    if problems:
        raise ConfigError("invalid plan: " + "; ".join(problems))
    if not config.processes:
        raise ConfigError("no processes")
    if (config.n_inferences is None) == (config.horizon_s is None):
        raise ConfigError("give exactly one of n_inferences or horizon_s")
    if config.n_inferences is not None and config.n_inferences < 1:
        raise ConfigError("n_inferences must be >= 1")
    if config.horizon_s is not None and not config.horizon_s > 0:
        raise ConfigError("horizon_s must be > 0")
    if config.stop_at_horizon and config.horizon_s is None:
        raise ConfigError("stop_at_horizon needs horizon_s")
    if not 0 <= config.mig_residual_eps < 1:
        raise ConfigError("mig_residual_eps must be in [0, 1)")
    if config.mps_interference_eps < 0:
        raise ConfigError("mps_interference_eps must be >= 0")
    if not config.telemetry_period_s > 0:
        raise ConfigError("telemetry_period_s must be > 0")
    if config.seed < 0:
        raise ConfigError("seed must be >= 0")
    if config.freq_pin_hz is not None and not gpu.f_min_hz <= config.freq_pin_hz <= gpu.f_max_hz:
        raise ConfigError(f"pinned frequency {config.freq_pin_hz:g} Hz outside the device range")
    profiles = config.profiles if config.profiles is not None else profiles_for(gpu)
    ids, bound = set(), set()
    parts = []
    for proc in config.processes:
        if proc.id in ids:
            raise ConfigError(f"duplicate process id {proc.id!r}")
        ids.add(proc.id)
        if proc.model not in profiles:
            raise ConfigError(f"no calibrated profile for model {proc.model!r} on {gpu.name}")
        if proc.target_ims < 1:
            raise ConfigError(f"{proc.id}: target_ims must be >= 1")
        if plan.regime.partitioned:
            if proc.partition_id is None:
                raise ConfigError(f"{proc.id}: {plan.regime.value} needs a partition_id")
            if proc.partition_id in bound:
                raise ConfigError(f"partition {proc.partition_id!r} bound to two processes")
            bound.add(proc.partition_id)
            parts.append(plan.partition(proc.partition_id))
        else:
            if proc.partition_id is not None:
                raise ConfigError(f"{proc.id}: {plan.regime.value} takes no partition_id")
            parts.append(plan.partitions[0])
    return profiles, parts


def run_simulation(config: SimConfig, backend: str | None = None) -> SimResult:
    profiles, parts = _check(config)
    gpu = config.gpu
    dvfs = config.dvfs or gpu.dvfs
    thermal = config.thermal or gpu.thermal
    jitter = gpu.latency_jitter if config.jitter is None else config.jitter
    procs = config.processes
    n = len(procs)

    counts = []
    for proc in procs:
        if config.n_inferences is not None:
            counts.append(config.n_inferences)
        else:
            counts.append(issue_count(proc.target_ims, config.horizon_s))
    offsets, flat = [], []
    pos = 0
    for i, c in enumerate(counts):
        offsets.append(pos)
        flat.append(jitter_factors(config.seed, i, c, jitter))
        pos += c
    jit = array("d", np.concatenate(flat).tolist() if flat else [])

    prof = [profiles[p.model] for p in procs]
    tel = config.telemetry_period_s
    per_sm = gpu.per_sm_power_w if dvfs.per_sm_power_w is None else dvfs.per_sm_power_w
    out = _core(backend)(
        _REGIME_CODE[config.plan.regime], float(gpu.total_sms),
        array("d", [float(p.target_ims) for p in procs]), array("q", counts),
        jit, array("q", offsets),
        array("d", [float(pt.sms) for pt in parts]), array("d", [float(pt.mem_share) for pt in parts]),
        array("d", [p.compute_work for p in prof]), array("d", [p.mem_work for p in prof]),
        array("d", [float(p.sm_saturation) for p in prof]), array("d", [p.switch_cost_s for p in prof]),
        float(config.mig_residual_eps), float(config.mps_interference_eps),
        gpu.f_max_hz, gpu.f_min_hz, float(config.freq_pin_hz or gpu.f_max_hz),
        gpu.idle_power_w, per_sm, dvfs.power_exponent, dvfs.cap_w, dvfs.throttle_factor,
        dvfs_window_samples(dvfs.sustain_window_s, tel), dvfs_window_samples(dvfs.recover_window_s, tel),
        tel, thermal.t_amb_c, thermal.k_c_per_w, thermal.tau_s,
        config.horizon_s if config.stop_at_horizon else math.inf, MET_TOLERANCE_S,
        config.record_events,
    )
    issued, completed, timeouts, in_flight, tt, tp, tf, tc, throttles, events, t_end = out
    stats = tuple(
        ProcessStats(p.id, Role(p.role), p.model, p.target_ims,
                     int(issued[i]), int(completed[i]), int(timeouts[i]), int(in_flight[i]))
        for i, p in enumerate(procs)
    )
    records = tuple(
        EventRecord(ti, ts, te, procs[pi].id, dl, bool(late)) for ti, ts, te, pi, dl, late in events
    )
    return SimResult(
        processes=stats,
        telemetry=Telemetry(tuple(tt), tuple(tp), tuple(tf), tuple(tc)),
        throttle_times=tuple(throttles),
        end_time_s=float(t_end),
        idle_power_w=gpu.idle_power_w,
        events=records,
    )


# -- the simulator as a search executor --------------------------------------

class SimulatedExecutor:
    """Draws solo inference latencies for one model on one allocation.

    Successive calls are independent measurements; ``reset`` rewinds the
    random stream, so a search over a fresh or reset executor is
    reproducible.
    """

    def __init__(self, profile: ModelProfile, sms: float, bw_share: float = 1.0,
                 freq_hz: float | None = None, jitter: float = 0.0, seed: int = 0,
                 overhead: float = 1.0, description: str = ""):
        self.latency_s = predict_latency(profile, sms, freq_hz, bw_share) * overhead
        self.jitter = jitter
        self.seed = seed
        self.description = description or f"{profile.name}@{profile.platform} {sms:g} SMs"
        self.reset()

    def reset(self) -> None:
        self._rng = np.random.default_rng([self.seed, 0xE7EC])

    def _factors(self, n: int) -> np.ndarray:
        if self.jitter == 0:
            return np.ones(n)
        return (1.0 + self.jitter * self._rng.random(n)) / (1.0 + self.jitter)

    def run_one_inference(self) -> float:
        return float(self.latency_s * self._factors(1)[0])

    def run_batch(self, n: int) -> np.ndarray:
        return self.latency_s * self._factors(n)

    def __repr__(self):
        return f"SimulatedExecutor({self.description})"


def executor_for(gpu: GpuSpec, profile: ModelProfile, plan: PartitionPlan,
                 partition_id: str | None = None, seed: int = 0,
                 freq_pin_hz: float | None = None, jitter: float | None = None) -> SimulatedExecutor:
    """Executor for a solo process on ``plan`` (its partition when partitioned)."""
    if plan.regime.partitioned:
        part = plan.partition(partition_id or plan.partitions[0].id)
    else:
        part = plan.partitions[0]
    return SimulatedExecutor(
        profile, part.sms, part.mem_share, freq_pin_hz,
        gpu.latency_jitter if jitter is None else jitter, seed,
        description=f"{profile.name} on {gpu.name} {plan.regime.value} {part.sms} SMs",
    )
