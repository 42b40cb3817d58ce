"""Result tables with ``mean (std)`` cells in text, CSV or Markdown."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Literal, Mapping

import numpy as np

from metseg.evaluation.report import AggregateReport


@dataclass(frozen=True)
class Column:
    group: str
    region: str
    metric: str
    scale: float = 1.0
    higher_is_better: bool = True

    @property
    def title(self) -> str:
        return f"{self.group} {self.region}"


def _block(group, metric, regions, scale, higher=True):
    return [Column(group, r, metric, scale, higher) for r in regions]


# modality ablation layout
ABLATION_COLUMNS = (
    _block("Legacy DSC", "legacy_dsc", ("WT", "TC", "ET", "AVG", "NETC", "SNFH"), 100.0)
    + _block("Lesion-wise DSC", "lesionwise_dsc", ("WT", "TC", "ET", "AVG"), 100.0)
)

# model comparison layout
COMPARISON_COLUMNS = (
    _block("Legacy DSC", "legacy_dsc", ("WT", "TC", "ET", "AVG"), 100.0)
    + _block("Legacy HD95", "legacy_hd95", ("WT", "TC", "ET", "AVG"), 1.0, False)
    + _block("Lesion-wise DSC", "lesionwise_dsc", ("WT", "TC", "ET", "AVG"), 100.0)
    + _block("Lesion-wise HD95", "lesionwise_hd95", ("WT", "TC", "ET", "AVG"), 1.0, False)
)

LAYOUTS = {"ablation": ABLATION_COLUMNS, "comparison": COMPARISON_COLUMNS}


def _mean(report: AggregateReport | None, col: Column) -> float:
    if report is None:
        return float("nan")
    return report.mean.get(col.region, {}).get(col.metric, float("nan"))


def rank_marks(reports: Mapping[str, AggregateReport | None], col: Column) -> dict[str, int]:
    """Rows holding the best (1) and second-best (2) distinct value of ``col``."""
    values = {k: _mean(r, col) for k, r in reports.items()}
    finite = sorted({round(v, 12) for v in values.values() if np.isfinite(v)}, reverse=col.higher_is_better)
    marks = {}
    for rank, target in enumerate(finite[:2], start=1):
        for k, v in values.items():
            if np.isfinite(v) and round(v, 12) == target:
                marks[k] = rank
    return marks


def best_row(reports: Mapping[str, AggregateReport | None], region: str = "AVG", metric: str = "lesionwise_dsc") -> str | None:
    """Row with the highest mean ``metric`` for ``region``, ``None`` if nothing finite."""
    col = Column("", region, metric)
    best = [k for k, r in rank_marks(reports, col).items() if r == 1]
    return best[0] if best else None


def table_rows(reports: Mapping[str, AggregateReport | None], layout: str = "ablation"):
    """``(header, rows)`` where each row is ``[name, (cell, mark), ...]``."""
    columns = LAYOUTS[layout]
    marks = [rank_marks(reports, c) for c in columns]
    rows = []
    for name, rep in reports.items():
        cells = []
        for col, m in zip(columns, marks):
            cell = rep.cell(col.region, col.metric, col.scale) if rep is not None else "—"
            cells.append((cell, m.get(name, 0)))
        rows.append([name, *cells])
    return ["Modalities", *(c.title for c in columns)], rows


def render_tables(
    reports: Mapping[str, AggregateReport | None],
    fmt: Literal["text", "csv", "markdown"] = "text",
    layout: str = "ablation",
) -> str:
    """Render one row per report. A ``None`` report renders as ``—`` cells.

    Markdown marks the best value per column in bold and the second best in
    italics; plain text appends ``*`` and ``+``. CSV stays unmarked.
    """
    if not reports:
        raise ValueError("render_tables needs at least one report")
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; choose from {sorted(LAYOUTS)}")
    header, rows = table_rows(reports, layout)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for name, *cells in rows:
            writer.writerow([name, *(c for c, _ in cells)])
        return buf.getvalue()
    if fmt == "markdown":
        style = {0: "{}", 1: "**{}**", 2: "_{}_"}
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for name, *cells in rows:
            lines.append("| " + " | ".join([name, *(style[m].format(c) if c != "—" else c for c, m in cells)]) + " |")
        return "\n".join(lines) + "\n"
    if fmt == "text":
        suffix = {0: "", 1: " *", 2: " +"}
        body = [[name, *(c + suffix[m] for c, m in cells)] for name, *cells in rows]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        fmt_row = lambda r: "  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip()
        lines = [fmt_row(header), "  ".join("-" * w for w in widths), *map(fmt_row, body)]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")
