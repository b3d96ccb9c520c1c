"""Summaries of a results directory and expectation checks."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .bench import RESULT_COLUMNS, ImpactRow
from .errors import ConfigError, ResultsError
from .scenario import Expectation, parse_expectation

SEARCH_COLUMNS = ("model", "platform", "regime", "final_f", "cap_reached")
IMPACT_COLUMNS = tuple(f.name for f in dataclasses.fields(ImpactRow))
_COLUMNS = {"sweep": RESULT_COLUMNS, "search": SEARCH_COLUMNS, "impact": IMPACT_COLUMNS}


@dataclass
class Block:
    name: str
    kind: str
    headline: dict[str, Any]
    failures: list[str] = field(default_factory=list)
    checked: int = 0


@dataclass
class Summary:
    blocks: list[Block]

    @property
    def ok(self) -> bool:
        return all(not b.failures for b in self.blocks)

    def render(self) -> str:
        lines = []
        for b in self.blocks:
            lines.append(f"[{b.kind}] {b.name}")
            for k, v in b.headline.items():
                lines.append(f"  {k}: {_show(v)}")
            if b.checked:
                verdict = "FAIL" if b.failures else "PASS"
                lines.append(f"  expectations: {verdict} ({b.checked} checked)")
                lines.extend(f"    {f}" for f in b.failures)
        return "\n".join(lines)


def _show(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, dict):
        return ", ".join(f"{k}={_show(x)}" for k, x in v.items())
    return str(v)


def _number(text: str):
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_rows(path: Path, kind: str) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            expected = _COLUMNS[kind]
            if header is None or tuple(header[: len(expected)]) != expected:
                raise ResultsError(f"{path}: header {header} does not match {kind} results")
            rows = []
            for i, raw in enumerate(reader, start=2):
                if None in raw or any(v is None for v in raw.values()):
                    raise ResultsError(f"{path}:{i}: wrong number of fields")
                rows.append({k: _number(v) for k, v in raw.items()})
    except OSError as exc:
        raise ResultsError(f"cannot read {path}: {exc}") from None
    except csv.Error as exc:
        raise ResultsError(f"{path}: {exc}") from None
    if kind == "sweep":
        for i, r in enumerate(rows, start=2):
            for col in ("fixed_timeout_pct", "adjusted_timeout_pct"):
                if not isinstance(r[col], (int, float)) or not 0 <= r[col] <= 100:
                    raise ResultsError(f"{path}:{i}: {col} out of range")
    return rows


def _headline(kind: str, meta: dict, rows: list[dict]) -> dict:
    if kind == "sweep":
        if not rows:
            return {"fixed_ims": meta.get("fixed_ims"), "points": 0}
        top = rows[-1]
        return {
            "fixed_ims": meta.get("fixed_ims"),
            "points": len(rows),
            "max_fixed_timeout_pct": max(r["fixed_timeout_pct"] for r in rows),
            "top_point": {
                "adjusted_ims": top["adjusted_ims"],
                "fixed_timeout_pct": top["fixed_timeout_pct"],
                "avg_power_w": top["avg_power_w"],
            },
            "max_throttle_events": max(r["throttle_events"] for r in rows),
        }
    if kind == "search":
        out = {f"{r['model']} {r['regime']}": r["final_f"] for r in rows}
        capped = [f"{r['model']} {r['regime']}" for r in rows if r["cap_reached"] is True]
        head = {"final_ims": out}
        if capped:
            head["cap_reached"] = ", ".join(capped)
        return head
    return {"throughput": {str(r["size"]): r["throughput"] for r in rows},
            "mem_mib": {str(r["size"]): r["mem_mib"] for r in rows}}


def check_expectations(rows: Sequence[dict], expectations: Sequence[Expectation],
                       path: str = "") -> tuple[int, list[str]]:
    checked, failures = 0, []
    for exp in expectations:
        matched = [(i, r) for i, r in enumerate(rows, start=2)
                   if all(r.get(k) == v for k, v in exp.where.items())]
        if not matched:
            failures.append(f"{exp.describe()}: no row matches {dict(exp.where)}")
            continue
        for i, r in matched:
            if exp.column not in r:
                raise ResultsError(f"{path}: no column {exp.column!r}")
            checked += 1
            v = r[exp.column]
            if not isinstance(v, (int, float)) or not exp.check(float(v)):
                failures.append(f"{exp.describe()} violated at {path}:{i} {exp.column}={v}")
    return checked, failures


def summarize(directory: str | Path, extra: Sequence[Expectation] = ()) -> Summary:
    d = Path(directory)
    if not d.is_dir():
        raise ResultsError(f"{d} is not a directory")
    metas = sorted(d.glob("*.meta.json"))
    if not metas:
        raise ResultsError(f"{d}: no *.meta.json files")
    blocks = []
    for mpath in metas:
        try:
            meta = json.loads(mpath.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ResultsError(f"{mpath}: {exc}") from None
        if not isinstance(meta, dict):
            raise ResultsError(f"{mpath}: expected a JSON object")
        kind = meta.get("kind")
        if kind not in _COLUMNS:
            raise ResultsError(f"{mpath}: unknown kind {kind!r}")
        results = meta.get("results")
        if not isinstance(results, str):
            raise ResultsError(f"{mpath}: missing results file name")
        rows = read_rows(d / results, kind)
        try:
            exps = [parse_expectation(e, f"{mpath}.expect[{i}]")
                    for i, e in enumerate(meta.get("expect") or [])]
        except ConfigError as exc:
            raise ResultsError(str(exc)) from None
        block = Block(mpath.name[: -len(".meta.json")], kind, _headline(kind, meta, rows))
        block.checked, block.failures = check_expectations(
            rows, [*exps, *(e for e in extra if e.column in _COLUMNS[kind])], results)
        blocks.append(block)
    return Summary(blocks)
