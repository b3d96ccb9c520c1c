"""Maximum inference frequency search.

Runs an executor at a candidate rate and adjusts the rate one IMS unit at a
time: an initial estimate from the slowest inferences of a back-to-back
batch, an ascent while batches stay clean, and a descent with repeated
validation once a batch misses a deadline.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import BatchError, ConfigError, DomainError, SearchFailed

# Relative slack on the deadline comparison so that a completion landing
# exactly on the deadline is not lost to rounding of the period.
_DEADLINE_RTOL = 1e-12


@runtime_checkable
class ExecutorContract(Protocol):
    description: str

    def run_one_inference(self) -> float: ...

    def reset(self) -> None: ...


class ConstantExecutor:
    """Deterministic executor whose every inference takes ``latency_s``."""

    def __init__(self, latency_s: float):
        if not latency_s > 0:
            raise DomainError("latency must be positive")
        self.latency_s = latency_s
        self.description = f"constant {latency_s * 1e3:g} ms"

    def run_one_inference(self) -> float:
        return self.latency_s

    def run_batch(self, n: int) -> np.ndarray:
        return np.full(n, self.latency_s)

    def reset(self) -> None:
        pass


class SequenceExecutor:
    """Replays a fixed list of latencies, cycling when exhausted."""

    def __init__(self, latencies: Sequence[float]):
        if not latencies or min(latencies) <= 0:
            raise DomainError("latencies must be a non-empty list of positive values")
        self.latencies = list(latencies)
        self.description = f"sequence of {len(self.latencies)} latencies"
        self.reset()

    def run_one_inference(self) -> float:
        v = self.latencies[self._i % len(self.latencies)]
        self._i += 1
        return v

    def reset(self) -> None:
        self._i = 0


class Phase(str, enum.Enum):
    Estimate = "estimate"
    Ascend = "ascend"
    Descend = "descend"
    Validate = "validate"


@dataclass(frozen=True)
class SearchConfig:
    batch_size_n: int = 1000
    validation_batches_k: int = 3
    worst_count: int = 5
    step: int = 1
    f_floor: int = 1
    cap_multiplier: int = 10

    def __post_init__(self):
        if self.worst_count < 1 or self.batch_size_n < self.worst_count:
            raise ConfigError("need batch_size_n >= worst_count >= 1")
        if self.validation_batches_k < 1:
            raise ConfigError("validation_batches_k must be >= 1")
        if self.step < 1:
            raise ConfigError("step must be >= 1")
        if self.f_floor < 1:
            raise ConfigError("f_floor must be >= 1")
        if self.cap_multiplier < 1:
            raise ConfigError("cap_multiplier must be >= 1")


@dataclass(frozen=True)
class Probe:
    phase: Phase
    f: int
    violations: int


@dataclass
class SearchTrace:
    probes: list[Probe] = field(default_factory=list)
    final_f: int | None = None
    cap_reached: bool = False

    def add(self, phase: Phase, f: int, violations: int) -> None:
        self.probes.append(Probe(phase, f, violations))

    def validated(self, k: int) -> set[int]:
        """Frequencies that have a run of ``k`` consecutive clean validate probes."""
        out, run_f, run = set(), None, 0
        for p in self.probes:
            if p.phase is Phase.Validate and p.violations == 0:
                run = run + 1 if p.f == run_f else 1
                run_f = p.f
                if run >= k:
                    out.add(p.f)
            else:
                run_f, run = None, 0
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "f", "violations"])
            for p in self.probes:
                w.writerow([p.phase.value, p.f, p.violations])


def select_worst_times(times: Sequence[float], k: int) -> list[float]:
    if k < 1:
        raise DomainError("k must be >= 1")
    if k > len(times):
        raise DomainError(f"asked for the worst {k} of {len(times)} times")
    return heapq.nlargest(k, times)


def initial_estimate(times: Sequence[float], cfg: SearchConfig = SearchConfig()) -> int:
    if len(times) == 0:
        raise DomainError("no times to estimate from")
    worst = select_worst_times(times, min(cfg.worst_count, len(times)))
    mean = math.fsum(worst) / len(worst)
    if not mean > 0:
        raise DomainError("inference times must be positive")
    # The small guard keeps 1 / 0.01 from flooring to 99.
    return max(cfg.f_floor, math.floor(1.0 / mean * (1 + 1e-12)))


def _collect(executor, n: int) -> np.ndarray:
    try:
        batch = getattr(executor, "run_batch", None)
        if batch is not None:
            times = np.asarray(batch(n), dtype=float)
        else:
            times = np.fromiter((executor.run_one_inference() for _ in range(n)), float, n)
    except Exception as exc:  # any executor failure ends the batch
        raise BatchError(f"executor {getattr(executor, 'description', executor)!r} failed: {exc}") from exc
    if times.shape != (n,) or not np.all(times > 0):
        raise BatchError("executor returned non-positive or missing times")
    return times


def count_violations(times: np.ndarray, f: float) -> int:
    """Deadline misses when ``times`` run back-to-back on one server at rate ``f``.

    Inference ``i`` is issued at ``i / f``, starts once its predecessor
    finishes and must complete by ``(i + 1) / f``. Working in response time
    ``r_i = max(0, r_{i-1} - period) + t_i`` keeps the recursion exact for
    long batches.
    """
    period = 1.0 / f
    limit = period * (1 + _DEADLINE_RTOL)
    r = 0.0
    misses = 0
    for t in times.tolist():
        r = max(0.0, r - period) + t
        if r > limit:
            misses += 1
    return misses


def run_timed_batch(executor, n: int, f: int) -> int:
    if f < 1 or n < 1:
        raise DomainError("run_timed_batch needs f >= 1 and n >= 1")
    return count_violations(_collect(executor, n), f)


def search_max_frequency(executor, cfg: SearchConfig = SearchConfig()) -> tuple[int, SearchTrace]:
    executor.reset()
    trace = SearchTrace()
    n, k, step = cfg.batch_size_n, cfg.validation_batches_k, cfg.step

    f = initial_estimate(_collect(executor, n), cfg)
    trace.add(Phase.Estimate, f, 0)
    cap = cfg.cap_multiplier * f

    def fail():
        raise SearchFailed(f"no stable rate at or above {cfg.f_floor} IMS for {executor.description}")

    # Ascend while clean; the first violation leaves f one step too high.
    v = run_timed_batch(executor, n, f)
    trace.add(Phase.Ascend, f, v)
    while v == 0:
        if f + step > cap:
            trace.cap_reached = True
            break
        f += step
        v = run_timed_batch(executor, n, f)
        trace.add(Phase.Ascend, f, v)
    if v > 0:
        f -= step
        if f < cfg.f_floor:
            fail()

    # Validate; on any failure step down, probe, and validate again.
    while True:
        clean = True
        for _ in range(k):
            v = run_timed_batch(executor, n, f)
            trace.add(Phase.Validate, f, v)
            if v:
                clean = False
                break
        if clean:
            break
        while True:
            f -= step
            if f < cfg.f_floor:
                fail()
            v = run_timed_batch(executor, n, f)
            trace.add(Phase.Descend, f, v)
            if v == 0:
                break
    trace.final_f = f
    return f, trace


def summary_line(model: str, platform: str, regime: str, f: int) -> str:
    return f"{model}\t{platform}\t{regime}\t{f}"
