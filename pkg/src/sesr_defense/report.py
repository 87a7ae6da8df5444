"""Robustness tables: CSV (lossless) and markdown (table style)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError

ATTACK_TITLES = {"fgsm": "FGSM", "pgd": "PGD", "apgd": "APGD", "di2fgsm": "DI2FGSM"}
METHOD_TITLES = {
    "none": "No Defense",
    "nearest": "Nearest Neighbor",
    "bicubic": "Bicubic",
    "fsrcnn": "FSRCNN",
    "sesr_m2": "SESR-M2",
    "sesr_m3": "SESR-M3",
    "sesr_m5": "SESR-M5",
    "sesr_xl": "SESR-XL",
}
NO_JPEG_SUFFIX = " (no JPEG)"
FIXED_COLUMNS = ("Classification Network", "SR method", "Parameters", "MACs")


@dataclass
class Row:
    classifier: str
    method: str  # display title, NO_JPEG_SUFFIX marks the JPEG-off ablation
    params: int | None
    macs: int | None
    accuracy: dict = field(default_factory=dict)  # attack kind -> percent

    @property
    def jpeg(self) -> bool:
        return not self.method.endswith(NO_JPEG_SUFFIX)


@dataclass
class RobustnessReport:
    attacks: list
    rows: list = field(default_factory=list)

    def __post_init__(self):
        for row in self.rows:
            self._check(row)

    def _check(self, row: Row) -> None:
        for kind, acc in row.accuracy.items():
            if kind not in self.attacks:
                raise ValueError(f"row {row.method!r} has unknown attack {kind!r}")
            if not 0.0 <= acc <= 100.0:
                raise ValueError(f"accuracy {acc} outside [0, 100]")

    def add(self, row: Row) -> None:
        self._check(row)
        self.rows.append(row)

    def lookup(self, method: str, attack: str, classifier: str | None = None) -> float:
        for row in self.rows:
            if row.method == method and (classifier is None or row.classifier == classifier):
                return row.accuracy[attack]
        raise KeyError(method)

    def __eq__(self, other):
        if not isinstance(other, RobustnessReport):
            return NotImplemented
        return list(self.attacks) == list(other.attacks) and self.rows == other.rows


def method_title(upscaler: str, jpeg: bool = True) -> str:
    title = METHOD_TITLES.get(upscaler, upscaler)
    return title if jpeg or upscaler == "none" else title + NO_JPEG_SUFFIX


def format_macs(macs: int | None) -> str:
    """Billions, truncated to 3 significant digits (5,825,369,160 -> ``5.82B``)."""
    if macs is None:
        return "-"
    if macs == 0:
        return "0B"
    b = macs / 1e9
    e = math.floor(math.log10(b)) - 2
    t = math.floor(b / 10**e + 1e-9) * 10**e
    decimals = max(0, -e)
    return f"{t:.{decimals}f}B"


def format_params(params: int | None) -> str:
    if params is None:
        return "-"
    return f"{params / 1000:.3f}K"


def _header(report: RobustnessReport) -> list:
    return list(FIXED_COLUMNS) + [ATTACK_TITLES.get(a, a) for a in report.attacks]


def to_csv(report: RobustnessReport) -> str:
    """Exact values: integers for params/MACs, ``repr`` floats for accuracies."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(report))
    for r in report.rows:
        w.writerow(
            [r.classifier, r.method, "" if r.params is None else r.params, "" if r.macs is None else r.macs]
            + [repr(r.accuracy[a]) if a in r.accuracy else "" for a in report.attacks]
        )
    return buf.getvalue()


def from_csv(text: str) -> RobustnessReport:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty report") from None
    if tuple(header[:4]) != FIXED_COLUMNS:
        raise FormatError(f"unexpected report columns {header[:4]}")
    inverse = {v: k for k, v in ATTACK_TITLES.items()}
    attacks = [inverse.get(t, t) for t in header[4:]]
    report = RobustnessReport(attacks)
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise FormatError(f"line {lineno}: {len(rec)} fields, expected {len(header)}")
        try:
            acc = {a: float(v) for a, v in zip(attacks, rec[4:]) if v != ""}
            report.add(Row(rec[0], rec[1], int(rec[2]) if rec[2] else None, int(rec[3]) if rec[3] else None, acc))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    return report


def to_markdown(report: RobustnessReport) -> str:
    """Table layout with each attack column's maximum (per classifier) in bold."""
    best: dict = {}
    for r in report.rows:
        if r.method == METHOD_TITLES["none"]:
            continue
        for a, v in r.accuracy.items():
            key = (r.classifier, a)
            best[key] = max(best.get(key, -1.0), round(v, 2))
    header = _header(report)
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    for r in report.rows:
        cells = [r.classifier, r.method, format_params(r.params), format_macs(r.macs)]
        for a in report.attacks:
            if a not in r.accuracy:
                cells.append("-")
                continue
            v = round(r.accuracy[a], 2)
            text = f"{v:.2f}"
            if r.method != METHOD_TITLES["none"] and v == best.get((r.classifier, a)):
                text = f"**{text}**"
            cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: RobustnessReport, fmt: str = "csv", path=None) -> str:
    if fmt == "csv":
        text = to_csv(report)
    elif fmt in ("markdown", "md"):
        text = to_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_report(path) -> RobustnessReport:
    return from_csv(Path(path).read_text())
