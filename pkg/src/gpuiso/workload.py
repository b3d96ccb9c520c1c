"""Calibrated latency model for each network on each platform.

A network is described by a two-term roofline::

    latency = max(compute_work / (min(sms, sm_saturation) * freq_rel),
                  mem_work / bw_share)

``freq_rel`` is the clock relative to the device maximum. Only the compute
term feels the clock; the memory term only feels the bandwidth share.

Profiles are fitted to the measured maximum-IMS tables. The returned
latency is the *worst-case* latency of one batch-1 inference, i.e. the
quantity whose reciprocal is the maximum stable IMS.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .devices import GpuSpec, builtin_devices, get_device
from .errors import CalibrationError, ConfigError, DomainError

MODELS = ("ConvNeXt-Base", "ConvNeXt-Large", "MobileNetV2", "ResNet18", "ViT-B-16", "ViT-L-32")
LARGE_MODELS = frozenset({"ConvNeXt-Large", "ViT-L-32"})

# Calibration fits 1/IMS within this relative error.
ROUND_TRIP_TOL = 0.02


class AnchorConfig(str, enum.Enum):
    FullGpu = "full"
    Mps = "mps"
    Mig3g = "mig3g"
    Gc4sm = "gc4sm"


@dataclass(frozen=True)
class ImsAnchor:
    model: str
    platform: str
    config: AnchorConfig
    ims: int


# Maximum IMS per model: (stand-alone, MPS, partition) where the partition
# is a 3-GPC MIG instance on the A100 and a 4-SM Green Context on the Nano.
_A100 = {
    "ConvNeXt-Base": (61, 61, 54),
    "ConvNeXt-Large": (52, 52, 52),
    "MobileNetV2": (147, 147, 123),
    "ResNet18": (129, 129, 118),
    "ViT-B-16": (95, 95, 76),
    "ViT-L-32": (55, 55, 55),
}
_NANO = {
    "ConvNeXt-Base": (58, 58, 35),
    "ConvNeXt-Large": (33, 33, 18),
    "MobileNetV2": (134, 134, 79),
    "ResNet18": (127, 127, 70),
    "ViT-B-16": (58, 58, 36),
    "ViT-L-32": (42, 42, 24),
}


def anchor_table() -> list[ImsAnchor]:
    rows = []
    for platform, table, part in (("A100", _A100, AnchorConfig.Mig3g), ("Nano", _NANO, AnchorConfig.Gc4sm)):
        for model in MODELS:
            full, mps, p = table[model]
            rows.append(ImsAnchor(model, platform, AnchorConfig.FullGpu, full))
            rows.append(ImsAnchor(model, platform, AnchorConfig.Mps, mps))
            rows.append(ImsAnchor(model, platform, part, p))
    return rows


def anchors_for(model: str, platform: str) -> list[ImsAnchor]:
    return [a for a in anchor_table() if a.model == model and a.platform == platform]


def latency_from_ims(ims: float) -> float:
    if not ims > 0:
        raise DomainError(f"IMS must be positive, got {ims}")
    return 1.0 / ims


def anchor_allocation(config: AnchorConfig, gpu: GpuSpec) -> tuple[int, float]:
    """(SMs, bandwidth share) a process measured under ``config`` ran with."""
    config = AnchorConfig(config)
    if config in (AnchorConfig.FullGpu, AnchorConfig.Mps):
        return gpu.total_sms, 1.0
    if config is AnchorConfig.Mig3g:
        return 3 * gpu.sms_per_gpc, 3 / gpu.gpc_count
    return 4, 1.0


@dataclass(frozen=True)
class ModelProfile:
    name: str
    platform: str
    compute_work: float
    mem_work: float
    sm_saturation: int
    switch_cost_s: float
    f_max_hz: float
    f_min_hz: float

    def __post_init__(self):
        if not self.compute_work > 0:
            raise ConfigError(f"{self.name}: compute_work must be > 0")
        if self.mem_work < 0:
            raise ConfigError(f"{self.name}: mem_work must be >= 0")
        if self.sm_saturation < 1:
            raise ConfigError(f"{self.name}: sm_saturation must be >= 1")
        if self.switch_cost_s < 0:
            raise ConfigError(f"{self.name}: switch_cost_s must be >= 0")


def default_switch_cost(model: str) -> float:
    return 0.5e-3 if model in LARGE_MODELS else 0.1e-3


def predict_latency(profile: ModelProfile, sms: float, freq_hz: float | None = None,
                    bw_share: float = 1.0) -> float:
    if not sms >= 1:
        raise DomainError(f"sms must be >= 1, got {sms}")
    if not 0.0 < bw_share <= 1.0:
        raise DomainError(f"bw_share must be in (0, 1], got {bw_share}")
    freq = profile.f_max_hz if freq_hz is None else freq_hz
    if not profile.f_min_hz * (1 - 1e-12) <= freq <= profile.f_max_hz * (1 + 1e-12):
        raise DomainError(f"frequency {freq:g} Hz outside [{profile.f_min_hz:g}, {profile.f_max_hz:g}]")
    return _roofline(profile.compute_work, profile.mem_work, profile.sm_saturation,
                     sms, freq / profile.f_max_hz, bw_share)


def _roofline(compute, mem, sat, sms, freq_rel, bw):
    return max(compute / (min(sms, sat) * freq_rel), mem / bw)


def design_rate(ims: int) -> float:
    """Rate whose reciprocal is the calibration target for an integer IMS.

    A measured maximum IMS only says 1/L_max lies in [ims, ims + 1); the
    target sits mid-interval, pulled in for small IMS to stay within the
    round-trip tolerance.
    """
    return ims + min(0.5, 0.75 * ROUND_TRIP_TOL * ims)


def calibrate_profile(anchors: Sequence[ImsAnchor], gpu: GpuSpec,
                      switch_cost_s: float | None = None) -> ModelProfile:
    """Fit compute/memory work and SM saturation to a model's anchors.

    Among parameter sets that fit equally well the most parallel one wins
    (largest ``sm_saturation``), then the one with the highest memory floor.
    """
    anchors = list(anchors)
    if not anchors:
        raise CalibrationError("no anchors supplied")
    names = {a.model for a in anchors}
    if len(names) != 1:
        raise CalibrationError(f"anchors mix models: {sorted(names)}")
    model = names.pop()
    points = {}
    for a in anchors:
        sms, bw = anchor_allocation(a.config, gpu)
        points.setdefault((sms, bw), []).append(a.ims)
    if len({sms for sms, _ in points}) < 2:
        raise CalibrationError(f"{model}: need anchors at >= 2 distinct SM allocations")

    alloc = sorted(points)
    target = [1.0 / design_rate(sum(v) / len(v)) for _, v in sorted(points.items())]

    best = None
    for sat in range(1, gpu.total_sms + 1):
        c_cands = {t * min(s, sat) for (s, _), t in zip(alloc, target)}
        m_cands = {0.0} | {t * bw for (_, bw), t in zip(alloc, target)}
        for c in c_cands:
            for m in m_cands:
                err = max(abs(t / _roofline(c, m, sat, s, 1.0, bw) - 1.0)
                          for (s, bw), t in zip(alloc, target))
                key = (round(err, 12), -sat, -m, c)
                if best is None or key < best[0]:
                    best = (key, c, m, sat)
    _, c, m, sat = best

    profile = ModelProfile(
        name=model,
        platform=gpu.platform,
        compute_work=c,
        mem_work=m,
        sm_saturation=sat,
        switch_cost_s=default_switch_cost(model) if switch_cost_s is None else switch_cost_s,
        f_max_hz=gpu.f_max_hz,
        f_min_hz=gpu.f_min_hz,
    )
    worst = 0.0
    for a in anchors:
        sms, bw = anchor_allocation(a.config, gpu)
        worst = max(worst, abs(1.0 / (predict_latency(profile, sms, None, bw) * a.ims) - 1.0))
    if worst > ROUND_TRIP_TOL:
        raise CalibrationError(
            f"{model}: best roofline fit misses an anchor by {worst:.2%}", residual=worst
        )
    return profile


def derive_profile(profile: ModelProfile, src: GpuSpec, dst: GpuSpec) -> ModelProfile:
    """Carry a profile to a sibling device of the same architecture.

    Compute work is rescaled so the same absolute clock gives the same
    compute time, memory work by the bandwidth ratio. A saturation that
    was clamped at the source device size grows with the device.
    """
    sat = profile.sm_saturation
    if sat >= src.total_sms:
        sat = dst.total_sms
    return dataclasses.replace(
        profile,
        platform=dst.platform,
        compute_work=profile.compute_work * src.f_max_hz / dst.f_max_hz,
        mem_work=profile.mem_work * src.mem_bandwidth_rel / dst.mem_bandwidth_rel,
        sm_saturation=min(sat, dst.total_sms),
        f_max_hz=dst.f_max_hz,
        f_min_hz=dst.f_min_hz,
    )


def calibrate_device(gpu: GpuSpec, registry: Mapping[str, GpuSpec] | None = None) -> dict[str, ModelProfile]:
    """Profiles for every network on ``gpu``, calibrated or derived."""
    if gpu.derive_profiles_from:
        reg = builtin_devices() if registry is None else registry
        src = get_device(gpu.derive_profiles_from, reg)
        return {m: derive_profile(p, src, gpu) for m, p in calibrate_device(src, reg).items()}
    table = anchor_table()
    out = {}
    for model in MODELS:
        anchors = [a for a in table if a.model == model and a.platform == gpu.platform]
        if anchors:
            out[model] = calibrate_profile(anchors, gpu)
    if not out:
        raise ConfigError(f"no anchors or derivation source for device {gpu.name}")
    return out


@functools.lru_cache(maxsize=None)
def _builtin_profiles(device: str) -> Mapping[str, ModelProfile]:
    return calibrate_device(get_device(device))


def profiles_for(gpu: GpuSpec) -> dict[str, ModelProfile]:
    builtin = builtin_devices().get(gpu.name)
    if builtin == gpu:
        return dict(_builtin_profiles(gpu.name))
    return calibrate_device(gpu)


# -- profile files -------------------------------------------------------

def profile_to_record(p: ModelProfile) -> dict:
    return dataclasses.asdict(p)


def profile_from_record(record: Mapping, where: str = "profile") -> ModelProfile:
    known = {f.name for f in dataclasses.fields(ModelProfile)}
    unknown = sorted(set(record) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return ModelProfile(**record)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def dump_profiles(profiles: Iterable[ModelProfile], path: str | Path) -> None:
    doc = {p.name: profile_to_record(p) for p in profiles}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True))


def load_profiles(path: str | Path) -> dict[str, ModelProfile]:
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read profiles {path}: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: expected a mapping of model -> profile")
    return {name: profile_from_record(rec, f"{path}:{name}") for name, rec in doc.items()}
