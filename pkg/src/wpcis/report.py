"""Aggregate per-target scan results into fleet-level statistics.

Percentages are integers computed with exact rational arithmetic and
round-half-up semantics, so e.g. 59 vulnerable out of 176 targets reports as
34% and a 35/24 split among the vulnerable reports as 59%/41%.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .detector import Verdict, VerdictKind
from .fingerprint import NoVersionFound, parse_version

LABEL_VALUES = ("vulnerable", "not_vulnerable")


class EmptyInput(ValueError):
    pass


class MissingLabels(ValueError):
    def __init__(self, targets: list[str]):
        self.targets = list(targets)
        super().__init__("records without a manual label: " + ", ".join(self.targets))


class SectorLabel(str, Enum):
    EDUCATION = "education"
    FINANCIAL = "financial"
    MEDICAL = "medical"
    ONLINE_PORTAL = "online_portal"
    BLOG = "blog"
    UNKNOWN = "unknown"


def percent_round_half_up(numerator: int, denominator: int) -> int:
    """Integer percent with exact .5-rounds-up semantics (33.52 -> 34)."""
    if denominator <= 0:
        raise ZeroDivisionError("percentage of an empty population")
    value = Fraction(100 * numerator, denominator)
    floored = value.numerator // value.denominator
    return floored + (1 if value - floored >= Fraction(1, 2) else 0)


@dataclass(frozen=True)
class ScanRecord:
    url: str
    verdict: Verdict
    sector: SectorLabel = SectorLabel.UNKNOWN
    manual_label: str | None = None  # "vulnerable" | "not_vulnerable"
    duration_ms: int = 0

    def __post_init__(self):
        if self.manual_label is not None and self.manual_label not in LABEL_VALUES:
            raise ValueError(f"manual_label must be one of {LABEL_VALUES}, "
                             f"got {self.manual_label!r}")
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be >= 0")

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "verdict": self.verdict.kind.value,
            "version": str(self.verdict.version) if self.verdict.version else None,
            "vulnerable_url": self.verdict.vulnerable_url,
            "sector": self.sector.value,
            "manual_label": self.manual_label,
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScanRecord":
        version = None
        if data.get("version"):
            try:
                version = parse_version(data["version"])
            except NoVersionFound:
                version = None
        verdict = Verdict(
            kind=VerdictKind(data["verdict"]),
            version=version,
            vulnerable_url=data.get("vulnerable_url"),
            reason="",
        )
        return cls(
            url=data["url"],
            verdict=verdict,
            sector=SectorLabel(data.get("sector", "unknown")),
            manual_label=data.get("manual_label"),
            duration_ms=int(data.get("duration_ms", 0)),
        )


@dataclass(frozen=True)
class AggregateReport:
    total: int
    vulnerable: int
    not_vulnerable: int
    indeterminate: int
    vulnerable_pct: int
    version_split: dict[str, dict[str, int]]
    sector_split: dict[str, dict[str, int]]
    accuracy_pct: int | None
    agreements: int | None
    records: tuple[ScanRecord, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "vulnerable": self.vulnerable,
            "not_vulnerable": self.not_vulnerable,
            "indeterminate": self.indeterminate,
            "vulnerable_pct": self.vulnerable_pct,
            "version_split": self.version_split,
            "sector_split": self.sector_split,
            "accuracy_pct": self.accuracy_pct,
            "records": [r.to_dict() for r in self.records],
        }


def _agreements(records) -> int:
    total = 0
    for rec in records:
        if rec.verdict.kind is VerdictKind.VULNERABLE:
            total += rec.manual_label == "vulnerable"
        elif rec.verdict.kind is VerdictKind.NOT_VULNERABLE:
            total += rec.manual_label == "not_vulnerable"
        # Indeterminate never agrees with either label
    return total


def accuracy(records) -> int:
    """Integer percent of verdicts agreeing with manual labels.

    Agreement means Vulnerable/"vulnerable" or NotVulnerable/"not_vulnerable";
    Indeterminate counts as disagreement. Every record must carry a label.
    """
    records = tuple(records)
    unlabeled = [r.url for r in records if r.manual_label is None]
    if unlabeled:
        raise MissingLabels(unlabeled)
    if not records:
        raise EmptyInput("no scan records")
    return percent_round_half_up(_agreements(records), len(records))


def aggregate(records) -> AggregateReport:
    records = tuple(records)
    if not records:
        raise EmptyInput("no scan records to aggregate")
    kinds = [r.verdict.kind for r in records]
    n_vuln = kinds.count(VerdictKind.VULNERABLE)
    n_not = kinds.count(VerdictKind.NOT_VULNERABLE)
    n_ind = kinds.count(VerdictKind.INDETERMINATE)

    vulnerable_records = [r for r in records if r.verdict.kind is VerdictKind.VULNERABLE]
    version_counts: dict[str, int] = {}
    for rec in vulnerable_records:
        key = str(rec.verdict.version) if rec.verdict.version else "unknown"
        version_counts[key] = version_counts.get(key, 0) + 1

    # every sector seen in the fleet shows up, so a sector with zero
    # vulnerable members still reports an explicit 0
    sector_counts: dict[str, int] = {}
    for rec in records:
        sector_counts.setdefault(rec.sector.value, 0)
    for rec in vulnerable_records:
        sector_counts[rec.sector.value] += 1

    def split(counts: dict[str, int]) -> dict[str, dict[str, int]]:
        if not n_vuln:
            return {}
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return {key: {"count": n, "pct": percent_round_half_up(n, n_vuln)}
                for key, n in ordered}

    accuracy_pct = agreements = None
    if all(r.manual_label is not None for r in records):
        agreements = _agreements(records)
        accuracy_pct = percent_round_half_up(agreements, len(records))

    return AggregateReport(
        total=len(records),
        vulnerable=n_vuln,
        not_vulnerable=n_not,
        indeterminate=n_ind,
        vulnerable_pct=percent_round_half_up(n_vuln, len(records)),
        version_split=split(version_counts),
        sector_split=split(sector_counts),
        accuracy_pct=accuracy_pct,
        agreements=agreements,
        records=records,
    )


def report_from_json(text: str) -> AggregateReport:
    """Rebuild an aggregate from a previously emitted JSON report's records."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"report JSON invalid: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("records"), list):
        raise ValueError("report JSON must be an object with a 'records' array")
    return aggregate(ScanRecord.from_dict(item) for item in data["records"])


def emit(report: AggregateReport, fmt: str = "text") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        return _emit_csv(report).encode("utf-8")
    if fmt == "text":
        return _emit_text(report).encode("utf-8")
    raise ValueError(f"unknown report format: {fmt!r}")


def _emit_text(report: AggregateReport) -> str:
    lines = [
        f"Targets scanned: {report.total}",
        f"Vulnerable: {report.vulnerable}/{report.total} ({report.vulnerable_pct}%)",
        f"Not vulnerable: {report.not_vulnerable}",
        f"Indeterminate: {report.indeterminate}",
    ]
    if report.version_split:
        lines.append("Version split among vulnerable:")
        for key, cell in report.version_split.items():
            lines.append(f"  {key}: {cell['count']} ({cell['pct']}%)")
    if report.sector_split:
        lines.append("Sector split among vulnerable:")
        for key, cell in report.sector_split.items():
            lines.append(f"  {key}: {cell['count']} ({cell['pct']}%)")
    if report.accuracy_pct is not None:
        lines.append(f"Accuracy vs manual: {report.accuracy_pct}%")
    return "\n".join(lines) + "\n"


def _emit_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dimension", "key", "count", "percent"])
    writer.writerow(["total", "all", report.total, ""])
    writer.writerow(["verdict", "vulnerable", report.vulnerable, report.vulnerable_pct])
    writer.writerow(["verdict", "not_vulnerable", report.not_vulnerable, ""])
    writer.writerow(["verdict", "indeterminate", report.indeterminate, ""])
    for key, cell in report.version_split.items():
        writer.writerow(["version", key, cell["count"], cell["pct"]])
    for key, cell in report.sector_split.items():
        writer.writerow(["sector", key, cell["count"], cell["pct"]])
    if report.accuracy_pct is not None:
        writer.writerow(["accuracy", "manual", report.agreements, report.accuracy_pct])
    return buf.getvalue()
