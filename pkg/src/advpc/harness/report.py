"""Evaluation report: one row per (proxy, attack, defense, target) cell."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

CSV_HEADER = "proxy,attack,defense,target,asr,cd_e2,hd_e2,ms_per_cloud"
FAILED = "failed"


@dataclass(frozen=True)
class ReportRow:
    proxy: str
    attack: str
    defense: str
    target: str
    asr: float
    cd: float
    hd: float
    ms_per_cloud: float

    def __post_init__(self):
        if self.defense == FAILED:
            return
        if not 0.0 <= self.asr <= 100.0:
            raise ValueError(f"ASR {self.asr} outside [0, 100]")
        if self.cd < 0 or self.hd < 0:
            raise ValueError("CD and HD must be non-negative")

    @property
    def failed(self) -> bool:
        return self.defense == FAILED

    def csv_cells(self) -> list[str]:
        return [
            self.proxy,
            self.attack,
            self.defense,
            self.target,
            _fmt(self.asr),
            _fmt(self.cd * 100),
            _fmt(self.hd * 100),
            _fmt(self.ms_per_cloud, 1),
        ]


def _fmt(v: float, digits: int = 2) -> str:
    return "nan" if math.isnan(v) else f"{v:.{digits}f}"


def failed_row(proxy: str, attack: str, reason: str) -> ReportRow:
    """Marker row flushed when an attack aborts; the target cell carries the reason."""
    nan = float("nan")
    return ReportRow(proxy, attack, FAILED, reason, nan, nan, nan, nan)


@dataclass
class EvaluationReport:
    rows: list[ReportRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def find(self, attack: str, defense: str, target: str) -> ReportRow:
        for r in self.rows:
            if (r.attack, r.defense, r.target) == (attack, defense, target):
                return r
        raise KeyError((attack, defense, target))

    def without_timing(self) -> list[tuple]:
        """Rows minus the wall-time column, the part that must be reproducible."""
        return [(r.proxy, r.attack, r.defense, r.target, r.asr, r.cd, r.hd) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        for r in self.rows:
            writer.writerow(r.csv_cells())
        return buf.getvalue()

    def to_json(self) -> str:
        # raw, unscaled metric values; NaN only appears in failed marker rows
        return json.dumps({"meta": self.meta, "rows": [asdict(r) for r in self.rows]}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        data = json.loads(text)
        return cls([ReportRow(**r) for r in data["rows"]], data["meta"])


def emit_report(report: EvaluationReport, path, fmt: str | None = None) -> Path:
    """Write ``report`` as csv or json; the format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "json":
        text = report.to_json()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_json(Path(path).read_text())
