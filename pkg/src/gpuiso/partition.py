"""MIG / Green Context partitioning rules and plan validation.

MIG hands out whole GPCs (each GPC = tpc_per_gpc x sm_per_tpc SMs) and
splits memory proportionally. Green Contexts hand out individual SMs subject
to a per-architecture minimum and step, and leave memory shared.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

from .devices import ArchClass, GpuSpec
from .errors import ConfigError, InvalidSize, UnsupportedRegime


class Regime(str, enum.Enum):
    StandAlone = "standalone"
    MPS = "mps"
    MIG = "mig"
    GC = "gc"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        text = str(value).strip().lower().replace("-", "").replace("_", "")
        for member in cls:
            if text in (member.value, member.name.lower()):
                return member
        raise ConfigError(f"unknown regime {value!r}")

    @property
    def partitioned(self) -> bool:
        return self in (Regime.MIG, Regime.GC)


@dataclass(frozen=True)
class GcAllocationRule:
    arch_class: ArchClass
    min_sms: int
    step_sms: int


_GC_RULES = {
    ArchClass.A6x: GcAllocationRule(ArchClass.A6x, 2, 2),
    ArchClass.A7x: GcAllocationRule(ArchClass.A7x, 2, 2),
    ArchClass.A8x: GcAllocationRule(ArchClass.A8x, 4, 2),
    ArchClass.A90plus: GcAllocationRule(ArchClass.A90plus, 8, 8),
}


@dataclass(frozen=True)
class Partition:
    id: str
    gpcs: int
    sms: int
    mem_share: float


@dataclass(frozen=True)
class PartitionPlan:
    regime: Regime
    partitions: tuple[Partition, ...]

    def partition(self, pid: str) -> Partition:
        for p in self.partitions:
            if p.id == pid:
                return p
        raise ConfigError(f"plan has no partition {pid!r}")


def gc_step_rule(arch_class: ArchClass) -> GcAllocationRule:
    return _GC_RULES[ArchClass(arch_class)]


def gc_valid_sizes(gpu: GpuSpec) -> list[int]:
    if not gpu.supports_gc:
        raise UnsupportedRegime(f"{gpu.name} does not support Green Contexts")
    rule = gc_step_rule(gpu.arch_class)
    return list(range(rule.min_sms, gpu.total_sms + 1, rule.step_sms))


def enumerate_gc_layouts(gpu: GpuSpec, size: int) -> int:
    """Maximum number of concurrent, non-overlapping GC partitions of ``size`` SMs."""
    if size not in gc_valid_sizes(gpu):
        raise InvalidSize(f"{size} SMs is not a valid GC partition on {gpu.name}")
    return gpu.total_sms // size


def mig_instance_counts(gpu: GpuSpec) -> dict[int, int]:
    """Legal MIG instance size (GPCs) -> how many fit on the device at once."""
    if not gpu.supports_mig:
        raise UnsupportedRegime(f"{gpu.name} does not support MIG")
    return {g: gpu.gpc_count // g for g in gpu.mig_sizes if g <= gpu.gpc_count}


def partition_sm_count(p: Partition, gpu: GpuSpec) -> int:
    if p.gpcs > 0:
        return p.gpcs * gpu.sms_per_gpc
    return p.sms


# -- plan construction ---------------------------------------------------

def standalone_plan(gpu: GpuSpec) -> PartitionPlan:
    return PartitionPlan(Regime.StandAlone, (Partition("gpu", 0, gpu.total_sms, 1.0),))


def mps_plan(gpu: GpuSpec) -> PartitionPlan:
    return PartitionPlan(Regime.MPS, (Partition("gpu", 0, gpu.total_sms, 1.0),))


def mig_plan(gpu: GpuSpec, gpcs: Sequence[int]) -> PartitionPlan:
    parts = tuple(
        Partition(f"mig{i}", int(g), int(g) * gpu.sms_per_gpc, int(g) / gpu.gpc_count)
        for i, g in enumerate(gpcs)
    )
    return PartitionPlan(Regime.MIG, parts)


def gc_plan(gpu: GpuSpec, sms: Sequence[int]) -> PartitionPlan:
    return PartitionPlan(
        Regime.GC, tuple(Partition(f"gc{i}", 0, int(s), 1.0) for i, s in enumerate(sms))
    )


def make_plan(gpu: GpuSpec, regime, sizes: Sequence[int] = ()) -> PartitionPlan:
    regime = Regime.parse(regime)
    if regime is Regime.StandAlone:
        return standalone_plan(gpu)
    if regime is Regime.MPS:
        return mps_plan(gpu)
    if not sizes:
        raise ConfigError(f"{regime.value} plan needs partition sizes")
    return mig_plan(gpu, sizes) if regime is Regime.MIG else gc_plan(gpu, sizes)


# -- validation ----------------------------------------------------------

def validate_mig_plan(plan: PartitionPlan, gpu: GpuSpec) -> list[str]:
    """Return violation descriptions; an empty list means the plan is legal."""
    if plan.regime is not Regime.MIG:
        return [f"plan regime is {plan.regime.value}, not mig"]
    if not gpu.supports_mig:
        return [f"{gpu.name} does not support MIG"]
    problems = []
    if not plan.partitions:
        problems.append("plan has no partitions")
    for p in plan.partitions:
        if p.gpcs not in gpu.mig_sizes:
            problems.append(f"{p.id}: illegal instance size {p.gpcs} GPCs (legal: {list(gpu.mig_sizes)})")
            continue
        if p.sms != p.gpcs * gpu.sms_per_gpc:
            problems.append(f"{p.id}: {p.sms} SMs does not match {p.gpcs} GPCs")
        if abs(p.mem_share - p.gpcs / gpu.gpc_count) > 1e-9:
            problems.append(f"{p.id}: mem_share {p.mem_share:g} is not {p.gpcs}/{gpu.gpc_count}")
    used = sum(p.gpcs for p in plan.partitions)
    if used > gpu.gpc_count:
        problems.append(f"oversubscribed: {used} GPCs requested, {gpu.gpc_count} available")
    problems.extend(_duplicate_ids(plan))
    return problems


def validate_gc_plan(plan: PartitionPlan, gpu: GpuSpec) -> list[str]:
    if plan.regime is not Regime.GC:
        return [f"plan regime is {plan.regime.value}, not gc"]
    if not gpu.supports_gc:
        return [f"{gpu.name} does not support Green Contexts"]
    valid = gc_valid_sizes(gpu)
    problems = []
    if not plan.partitions:
        problems.append("plan has no partitions")
    for p in plan.partitions:
        if p.gpcs != 0:
            problems.append(f"{p.id}: GC partitions are sized in SMs, not GPCs")
        if p.sms not in valid:
            problems.append(f"{p.id}: {p.sms} SMs violates the GC rule (valid: {valid})")
        if p.mem_share != 1.0:
            problems.append(f"{p.id}: GC partitions share memory (mem_share must be 1.0)")
    used = sum(p.sms for p in plan.partitions)
    if used > gpu.total_sms:
        problems.append(f"oversubscribed: {used} SMs requested, {gpu.total_sms} available")
    problems.extend(_duplicate_ids(plan))
    return problems


def validate_plan(plan: PartitionPlan, gpu: GpuSpec) -> list[str]:
    if plan.regime is Regime.MIG:
        return validate_mig_plan(plan, gpu)
    if plan.regime is Regime.GC:
        return validate_gc_plan(plan, gpu)
    if len(plan.partitions) != 1:
        return [f"{plan.regime.value} plans have exactly one partition"]
    p = plan.partitions[0]
    if p.sms != gpu.total_sms or p.mem_share != 1.0:
        return [f"{plan.regime.value} partition must span the whole device"]
    return []


def _duplicate_ids(plan: PartitionPlan) -> list[str]:
    seen, dups = set(), []
    for p in plan.partitions:
        if p.id in seen:
            dups.append(f"duplicate partition id {p.id!r}")
        seen.add(p.id)
    return dups


# -- enumeration ---------------------------------------------------------

def enumerate_mig_plans(gpu: GpuSpec) -> Iterator[PartitionPlan]:
    """Every multiset of legal instance sizes that fits the device, largest first."""
    sizes = sorted((g for g in mig_instance_counts(gpu)), reverse=True)
    for n in range(1, gpu.gpc_count + 1):
        for combo in itertools.combinations_with_replacement(sizes, n):
            if sum(combo) <= gpu.gpc_count:
                yield mig_plan(gpu, combo)


def gc_layout_plan(gpu: GpuSpec, size: int, count: int | None = None) -> PartitionPlan:
    """``count`` (default: as many as fit) disjoint GC partitions of ``size`` SMs."""
    fit = enumerate_gc_layouts(gpu, size)
    count = fit if count is None else count
    if count < 1 or count > fit:
        raise ConfigError(
            f"{gpu.name} fits at most {fit} GC partitions of {size} SMs, {count} requested"
        )
    return gc_plan(gpu, [size] * count)


def enumerate_gc_plans(gpu: GpuSpec) -> Iterator[PartitionPlan]:
    for size in gc_valid_sizes(gpu):
        for count in range(1, enumerate_gc_layouts(gpu, size) + 1):
            yield gc_layout_plan(gpu, size, count)
