"""Persistence of run artifacts and human-readable result emission.

Run records are stored as JSON-lines (header, one line per month, footer),
next to a plain-text transcript, a plot-ready trajectory CSV,
a usage summary, and a manifest with content digests. Plots are deliberately
left to external tooling; the CSV carries everything they need.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .agents import Utterance
from .dynamics import AllocationResult
from .engine import MonthRecord, RunRecord
from .errors import CommonsimError
from .metrics import MetricsSummary
from .scenario import ScenarioConfig, scenario_from_dict


def round1(x: float) -> float:
    """One-decimal rounding, half away from zero, matching table presentation."""
    return float(Decimal(repr(x)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def fmt_mean_std(mean: float, std: float) -> str:
    return f"{round1(mean):.1f} ± {round1(std):.1f}"


# --- record serialization -----------------------------------------------------

def scenario_to_dict(scenario: ScenarioConfig) -> dict:
    d = asdict(scenario)
    d["name"] = scenario.name.value
    d["direction"] = scenario.dynamics.direction.value
    dyn = d.pop("dynamics")
    d.update(
        capacity=dyn["capacity"],
        growth_factor=dyn["growth_factor"],
        collapse_threshold=dyn["collapse_threshold"],
        horizon=dyn["horizon"],
    )
    d["agent_names"] = list(scenario.agent_names)
    return d


def month_to_dict(rec: MonthRecord) -> dict:
    return {
        "month": rec.month,
        "amount_start": rec.amount_start,
        "fair_share": rec.fair_share,
        "requests": list(rec.requests),
        "allocation": {
            "per_agent": list(rec.allocation.per_agent),
            "total_extracted": rec.allocation.total_extracted,
            "visit_order": list(rec.allocation.visit_order),
        },
        "amount_after_harvest": rec.amount_after_harvest,
        "amount_after_regrowth": rec.amount_after_regrowth,
        "announcement": rec.announcement,
        "discussion": [
            {"agent_index": u.agent_index, "text": u.text, "passed": u.passed}
            for u in rec.discussion
        ],
        "collapsed_during": rec.collapsed_during,
        "flagged_agents": list(rec.flagged_agents),
    }


def month_from_dict(d: dict) -> MonthRecord:
    return MonthRecord(
        month=d["month"],
        amount_start=d["amount_start"],
        fair_share=d["fair_share"],
        requests=tuple(d["requests"]),
        allocation=AllocationResult(
            per_agent=tuple(d["allocation"]["per_agent"]),
            total_extracted=d["allocation"]["total_extracted"],
            visit_order=tuple(d["allocation"]["visit_order"]),
        ),
        amount_after_harvest=d["amount_after_harvest"],
        amount_after_regrowth=d["amount_after_regrowth"],
        announcement=d["announcement"],
        discussion=tuple(
            Utterance(agent_index=u["agent_index"], text=u["text"], passed=u["passed"])
            for u in d["discussion"]
        ),
        collapsed_during=d["collapsed_during"],
        flagged_agents=tuple(d.get("flagged_agents", [])),
    )


def record_to_jsonl(record: RunRecord) -> str:
    def dump(obj):
        return json.dumps(obj, sort_keys=True, ensure_ascii=False)

    lines = [
        dump({
            "type": "header",
            "scenario": scenario_to_dict(record.scenario),
            "roster": list(record.roster),
            "seed": record.seed,
        })
    ]
    lines += [dump({"type": "month", **month_to_dict(m)}) for m in record.months]
    lines.append(dump({
        "type": "footer",
        "survival_months": record.survival_months,
        "per_agent_totals": list(record.per_agent_totals),
        "usage": record.usage,
    }))
    return "\n".join(lines) + "\n"


def record_from_jsonl(text: str, origin: str = "<string>") -> RunRecord:
    header = footer = None
    months = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CommonsimError(f"{origin}: corrupt record at line {lineno}: {exc}") from exc
        kind = obj.get("type")
        if kind == "header":
            header = obj
        elif kind == "month":
            months.append(month_from_dict(obj))
        elif kind == "footer":
            footer = obj
        else:
            raise CommonsimError(f"{origin}: unknown line type at line {lineno}: {kind!r}")
    if header is None or footer is None:
        raise CommonsimError(f"{origin}: record missing header or footer")
    return RunRecord(
        scenario=scenario_from_dict(header["scenario"], origin=origin),
        roster=tuple(header["roster"]),
        seed=header["seed"],
        months=tuple(months),
        survival_months=footer["survival_months"],
        per_agent_totals=tuple(footer["per_agent_totals"]),
        usage=footer["usage"],
    )


def load_run(path: str | Path) -> RunRecord:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CommonsimError(f"cannot read run record {path}: {exc}") from exc
    return record_from_jsonl(text, origin=str(path))


# --- persistence --------------------------------------------------------------

def trajectory_csv(record: RunRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    names = record.scenario.agent_names
    writer.writerow(["month", "amount_after_harvest", "amount_after_regrowth"]
                    + [f"extracted_{n}" for n in names])
    for rec in record.months:
        writer.writerow(
            [rec.month, rec.amount_after_harvest, rec.amount_after_regrowth]
            + list(rec.allocation.per_agent)
        )
    return buf.getvalue()


def transcript_text(record: RunRecord) -> str:
    names = record.scenario.agent_names
    title = record.scenario.announcer_title
    blocks = []
    for rec in record.months:
        lines = [f"=== Month {rec.month} ==="]
        lines.append(f"{title}: {rec.announcement}")
        for utt in rec.discussion:
            if not utt.passed:
                lines.append(f"{names[utt.agent_index]}: {utt.text}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def persist_run(record: RunRecord, directory: str | Path) -> dict:
    """Write all run artifacts under `directory` and return the manifest.
    Files land via temp-and-rename so a failure never leaves partial output."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommonsimError(f"cannot create output directory {directory}: {exc}") from exc

    files = {
        "record.jsonl": record_to_jsonl(record).encode("utf-8"),
        "transcript.txt": transcript_text(record).encode("utf-8"),
        "trajectory.csv": trajectory_csv(record).encode("utf-8"),
        "usage.json": (json.dumps(record.usage, sort_keys=True) + "\n").encode("utf-8"),
    }
    manifest = {"files": {name: _sha256(data) for name, data in files.items()}}
    files["manifest.json"] = (
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    ).encode("utf-8")

    written = []
    try:
        for name, data in files.items():
            tmp = directory / (name + ".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, directory / name)
            written.append(directory / name)
    except OSError as exc:
        for path in written:
            path.unlink(missing_ok=True)
        for name in files:
            (directory / (name + ".tmp")).unlink(missing_ok=True)
        raise CommonsimError(f"failed writing run artifacts under {directory}: {exc}") from exc
    return {"directory": str(directory), **manifest}


def verify_manifest(directory: str | Path) -> list[str]:
    """Names of files whose content no longer matches the manifest digest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    stale = []
    for name, digest in manifest["files"].items():
        path = directory / name
        if not path.exists() or _sha256(path.read_bytes()) != digest:
            stale.append(name)
    return stale


def replay_transcript(record_path: str | Path) -> str:
    """Render a stored record as dialogue text. If a manifest sits next to the
    record, digests are rechecked and mismatches produce a leading warning."""
    record_path = Path(record_path)
    warnings = []
    manifest = record_path.parent / "manifest.json"
    if manifest.exists():
        for name in verify_manifest(record_path.parent):
            warnings.append(f"WARNING: {name} does not match its manifest digest")
    record = load_run(record_path)
    body = transcript_text(record)
    if warnings:
        return "\n".join(warnings) + "\n\n" + body
    return body


# --- result tables ------------------------------------------------------------

TABLE_COLUMNS = (
    "label", "survival_rate", "survival_time", "gain_or_loss",
    "efficiency", "equality", "over_usage",
)


@dataclass(frozen=True)
class ResultsTable:
    rows: tuple[tuple[str, ...], ...]
    caption: str = ""


def emit_table(summaries: list[tuple[str, MetricsSummary]], caption: str = "") -> ResultsTable:
    """One row per labeled summary, ordered by label, mean +/- std to one
    decimal place throughout."""
    if not summaries:
        raise CommonsimError("emit_table needs at least one summary")
    rows = []
    for label, s in sorted(summaries, key=lambda pair: pair[0]):
        rows.append((
            label,
            f"{s.survival_rate:.2f}",
            fmt_mean_std(s.survival_time.mean, s.survival_time.std),
            fmt_mean_std(s.total_gain_or_loss.mean, s.total_gain_or_loss.std),
            fmt_mean_std(s.efficiency.mean, s.efficiency.std),
            fmt_mean_std(s.equality.mean, s.equality.std),
            fmt_mean_std(s.over_usage.mean, s.over_usage.std),
        ))
    return ResultsTable(rows=tuple(rows), caption=caption)


_HEADERS = ("Label", "Survival Rate", "Survival Time", "Gain/Loss",
            "Efficiency", "Equality", "Over-usage")


def render_table_text(table: ResultsTable) -> str:
    rows = [_HEADERS] + [tuple(r) for r in table.rows]
    widths = [max(len(row[i]) for row in rows) for i in range(len(_HEADERS))]
    lines = []
    if table.caption:
        lines.append(table.caption)
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_table_csv(table: ResultsTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(TABLE_COLUMNS)
    for row in table.rows:
        writer.writerow(row)
    return buf.getvalue()
