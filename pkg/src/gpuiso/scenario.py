"""Scenario files: one YAML mapping describing what the CLI should run.

Example::

    device: a100
    regime: [standalone, mps, mig]
    models: all
    seed: 7
    out: results/a100
    n_processes: 2
    search: {batch_size_n: 1000, validation_batches_k: 3}
    expect:
      - {column: fixed_timeout_pct, op: "<=", value: 0.5}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .devices import get_device
from .errors import ConfigError
from .partition import Regime
from .search import SearchConfig
from .workload import MODELS

_OPS = ("<", "<=", ">", ">=", "==")


@dataclass(frozen=True)
class Expectation:
    column: str
    op: str
    value: float
    tol: float = 0.0
    where: Mapping[str, Any] = field(default_factory=dict)

    def check(self, actual: float) -> bool:
        v = self.value
        if self.op == "<":
            return actual < v
        if self.op == "<=":
            return actual <= v
        if self.op == ">":
            return actual > v
        if self.op == ">=":
            return actual >= v
        return abs(actual - v) <= self.tol

    def describe(self) -> str:
        tol = f" ±{self.tol:g}" if self.op == "==" and self.tol else ""
        return f"{self.column} {self.op} {self.value:g}{tol}"


@dataclass(frozen=True)
class Scenario:
    device: str
    regimes: tuple[Regime, ...] = (Regime.StandAlone,)
    models: tuple[str, ...] = MODELS
    seed: int = 0
    out: str = "results"
    n_processes: int = 2
    fixed_ims: int | str = "auto"
    adjusted_sweep: tuple[int, ...] | None = None
    inferences_per_point: int = 1000
    agx_equivalence: bool = False
    agx_sweep_factor: float = 1.25
    mig_residual_eps: float = 0.005
    mps_interference_eps: float = 0.01
    stop_at_horizon: bool = False
    sizes: tuple[int, ...] = ()
    search: SearchConfig = field(default_factory=SearchConfig)
    executor_latency_ms: float | None = None
    expect: tuple[Expectation, ...] = ()

    def experiment_fields(self) -> dict:
        return {
            "n_processes": self.n_processes,
            "fixed_ims": self.fixed_ims,
            "adjusted_sweep": self.adjusted_sweep,
            "inferences_per_point": self.inferences_per_point,
            "seed": self.seed,
            "agx_equivalence": self.agx_equivalence,
            "agx_sweep_factor": self.agx_sweep_factor,
            "mig_residual_eps": self.mig_residual_eps,
            "mps_interference_eps": self.mps_interference_eps,
            "stop_at_horizon": self.stop_at_horizon,
            "search": self.search,
        }


_SCALARS = {
    "seed": int, "out": str, "n_processes": int, "inferences_per_point": int,
    "agx_equivalence": bool, "agx_sweep_factor": float, "mig_residual_eps": float,
    "mps_interference_eps": float, "stop_at_horizon": bool,
}
_KEYS = {"device", "regime", "models", "fixed_ims", "adjusted_sweep", "sizes", "search",
         "executor", "expect", *_SCALARS}


def parse_expectation(record: Any, where: str) -> Expectation:
    if not isinstance(record, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(record) - {"column", "op", "value", "tol", "where"})
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    for key in ("column", "op", "value"):
        if key not in record:
            raise ConfigError(f"{where}: missing {key!r}")
    if record["op"] not in _OPS:
        raise ConfigError(f"{where}.op: must be one of {list(_OPS)}")
    try:
        return Expectation(str(record["column"]), record["op"], float(record["value"]),
                           float(record.get("tol", 0.0)), dict(record.get("where") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def scenario_from_mapping(doc: Mapping, where: str = "scenario") -> Scenario:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: expected a mapping at top level")
    unknown = sorted(set(doc) - _KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    if "device" not in doc:
        raise ConfigError(f"{where}: missing 'device'")
    kw: dict[str, Any] = {"device": str(doc["device"])}
    get_device(kw["device"])

    regimes = doc.get("regime", "standalone")
    regimes = [regimes] if isinstance(regimes, str) else list(regimes)
    kw["regimes"] = tuple(Regime.parse(r) for r in regimes)

    models = doc.get("models", "all")
    if models == "all":
        models = list(MODELS)
    elif isinstance(models, str):
        models = [models]
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"{where}.models: unknown model {m!r} (known: {list(MODELS)})")
    kw["models"] = tuple(models)

    for key, typ in _SCALARS.items():
        if key in doc:
            value = doc[key]
            if typ is bool and not isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected true/false")
            try:
                kw[key] = typ(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{where}.{key}: cannot read {value!r} as {typ.__name__}") from None

    if "fixed_ims" in doc:
        v = doc["fixed_ims"]
        if v != "auto" and not (isinstance(v, int) and v >= 1):
            raise ConfigError(f"{where}.fixed_ims: 'auto' or an integer >= 1")
        kw["fixed_ims"] = v
    for key in ("adjusted_sweep", "sizes"):
        if doc.get(key) is not None:
            v = doc[key]
            if isinstance(v, Mapping):
                unknown = sorted(set(v) - {"start", "stop", "step"})
                if unknown or "stop" not in v:
                    raise ConfigError(f"{where}.{key}: range needs stop (and optional start, step)")
                v = range(int(v.get("start", 1)), int(v["stop"]) + 1, int(v.get("step", 1)))
            try:
                kw[key] = tuple(int(x) for x in v)
            except (TypeError, ValueError):
                raise ConfigError(f"{where}.{key}: expected a list of integers") from None

    if "search" in doc:
        s = doc["search"] or {}
        if not isinstance(s, Mapping):
            raise ConfigError(f"{where}.search: expected a mapping")
        known = {f.name for f in dataclasses.fields(SearchConfig)}
        unknown = sorted(set(s) - known)
        if unknown:
            raise ConfigError(f"{where}.search: unknown keys {unknown}")
        kw["search"] = SearchConfig(**{k: int(v) for k, v in s.items()})

    if "executor" in doc:
        e = doc["executor"] or {}
        if not isinstance(e, Mapping) or set(e) != {"latency_ms"}:
            raise ConfigError(f"{where}.executor: only {{latency_ms: <float>}} is supported")
        kw["executor_latency_ms"] = float(e["latency_ms"])

    if "expect" in doc:
        items = doc["expect"] or []
        if not isinstance(items, list):
            raise ConfigError(f"{where}.expect: expected a list")
        kw["expect"] = tuple(parse_expectation(r, f"{where}.expect[{i}]") for i, r in enumerate(items))
    return Scenario(**kw)


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return scenario_from_mapping(doc, str(path))
