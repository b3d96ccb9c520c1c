"""Device descriptions and the device registry."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError


class ArchClass(str, enum.Enum):
    A6x = "6.x"
    A7x = "7.x"
    A8x = "8.x"
    A90plus = "9.0+"


@dataclass(frozen=True)
class DvfsParams:
    """Power-cap throttling knobs.

    Frequency drops to ``f_max * throttle_factor`` once power has stayed at
    or above ``cap_w`` for ``sustain_window_s``, and comes back after power
    has stayed below the cap for ``recover_window_s``.
    """

    cap_w: float = math.inf
    sustain_window_s: float = 0.1
    throttle_factor: float = 0.5
    recover_window_s: float = 0.5
    power_exponent: float = 2.0
    # None: calibrated so all SMs busy at f_max draws exactly power_cap_w
    per_sm_power_w: float | None = None

    def __post_init__(self):
        if not 0.0 < self.throttle_factor < 1.0:
            raise ConfigError(f"throttle_factor must be in (0, 1), got {self.throttle_factor}")
        if self.sustain_window_s <= 0 or self.recover_window_s <= 0:
            raise ConfigError("DVFS windows must be positive")


@dataclass(frozen=True)
class ThermalParams:
    t_amb_c: float = 25.0
    k_c_per_w: float = 2.0
    tau_s: float = 5.0


@dataclass(frozen=True)
class GpuSpec:
    name: str
    arch_class: ArchClass
    gpc_count: int
    tpc_per_gpc: int
    sm_per_tpc: int
    total_sms: int
    f_max_hz: float
    f_min_hz: float
    power_cap_w: float
    idle_power_w: float
    mem_bandwidth_rel: float = 1.0
    supports_mig: bool = False
    supports_gc: bool = False
    platform: str = ""
    mig_sizes: tuple[int, ...] = (1, 2, 3, 4, 7)
    latency_jitter: float = 0.0
    derive_profiles_from: str | None = None
    dvfs: DvfsParams = field(default_factory=DvfsParams)
    thermal: ThermalParams = field(default_factory=ThermalParams)

    def __post_init__(self):
        if not isinstance(self.arch_class, ArchClass):
            object.__setattr__(self, "arch_class", _arch(self.arch_class))
        if not self.platform:
            object.__setattr__(self, "platform", self.name)
        object.__setattr__(self, "mig_sizes", tuple(int(s) for s in self.mig_sizes))
        if self.total_sms < 1:
            raise ConfigError(f"{self.name}: total_sms must be >= 1")
        if min(self.gpc_count, self.tpc_per_gpc, self.sm_per_tpc) < 0:
            raise ConfigError(f"{self.name}: negative topology counts")
        if self.gpc_count > 0 and self.total_sms != self.gpc_count * self.sms_per_gpc:
            raise ConfigError(
                f"{self.name}: total_sms {self.total_sms} != "
                f"{self.gpc_count} x {self.tpc_per_gpc} x {self.sm_per_tpc}"
            )
        if not self.f_min_hz < self.f_max_hz:
            raise ConfigError(f"{self.name}: f_min_hz must be below f_max_hz")
        if not self.idle_power_w < self.power_cap_w:
            raise ConfigError(f"{self.name}: idle_power_w must be below power_cap_w")
        if self.latency_jitter < 0:
            raise ConfigError(f"{self.name}: latency_jitter must be >= 0")

    @property
    def sms_per_gpc(self) -> int:
        return self.tpc_per_gpc * self.sm_per_tpc

    @property
    def per_sm_power_w(self) -> float:
        if self.dvfs.per_sm_power_w is not None:
            return self.dvfs.per_sm_power_w
        return (self.power_cap_w - self.idle_power_w) / self.total_sms

    def with_overrides(self, **changes) -> "GpuSpec":
        return dataclasses.replace(self, **changes)


def _arch(value) -> ArchClass:
    try:
        return ArchClass(str(value))
    except ValueError:
        try:
            return ArchClass[str(value)]
        except KeyError:
            raise ConfigError(f"unknown arch_class {value!r}") from None


_NESTED = {"dvfs": DvfsParams, "thermal": ThermalParams}


def _build(cls, record: Mapping[str, Any], where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(record) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in record.items():
        if key in _NESTED and cls is GpuSpec:
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where}.{key}: expected a mapping")
            if key == "dvfs" and "cap_w" not in value and "power_cap_w" in record:
                # the throttle threshold defaults to the board power cap
                value = {**value, "cap_w": record["power_cap_w"]}
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif key == "cap_w" and value is None:
            value = math.inf
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def gpu_from_record(record: Mapping[str, Any], where: str = "device") -> GpuSpec:
    return _build(GpuSpec, record, where)


def gpu_to_record(gpu: GpuSpec) -> dict:
    rec = dataclasses.asdict(gpu)
    rec["arch_class"] = gpu.arch_class.value
    rec["mig_sizes"] = list(gpu.mig_sizes)
    if rec["derive_profiles_from"] is None:
        del rec["derive_profiles_from"]
    return rec


def load_registry(path: str | Path | None = None) -> dict[str, GpuSpec]:
    """Load a device registry document; the built-in one when ``path`` is None."""
    if path is None:
        text = resources.files("gpuiso.data").joinpath("devices.yaml").read_text()
        where = "devices.yaml"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read registry {path}: {exc}") from None
        where = str(path)
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: top level must be a mapping of device records")
    devices = {}
    for key, record in doc.items():
        if not isinstance(record, Mapping):
            raise ConfigError(f"{where}:{key}: record must be a mapping")
        record = dict(record)
        record.setdefault("name", key)
        devices[str(key)] = gpu_from_record(record, f"{where}:{key}")
    return devices


_BUILTIN: dict[str, GpuSpec] | None = None


def builtin_devices() -> dict[str, GpuSpec]:
    global _BUILTIN
    if _BUILTIN is None:
        _BUILTIN = load_registry()
    return dict(_BUILTIN)


def get_device(name: str, registry: Mapping[str, GpuSpec] | None = None) -> GpuSpec:
    reg = builtin_devices() if registry is None else registry
    try:
        return reg[name]
    except KeyError:
        raise ConfigError(f"unknown device {name!r}; known: {', '.join(sorted(reg))}") from None
