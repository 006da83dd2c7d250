"""Comparison tables over several metrics reports.

Overlap metrics are shown as percentages and distances in mm, both with two
decimals. In each column the best value is wrapped in ``**`` and the second
best in ``_``; HD95 and ASSD are better when lower. Ranking uses the displayed
values and breaks ties by method name.
"""

import csv
import io
from collections.abc import Sequence
from typing import NamedTuple, Optional

from synergyseg.models import AggregateMetrics, MetricsReport


class Column(NamedTuple):
    header: str
    field: str
    lower_is_better: bool
    percent: bool


COLUMNS = (
    Column("mIoU", "iou", False, True),
    Column("Dice", "dice", False, True),
    Column("HD95", "hd95_mm", True, False),
    Column("Precision", "precision", False, True),
    Column("Recall", "recall", False, True),
    Column("ASSD", "assd_mm", True, False),
)
MISSING = "n/a"

NamedReport = tuple[str, MetricsReport]


class ColumnRanking(NamedTuple):
    best: Optional[str]
    second: Optional[str]


def display_value(aggregate: AggregateMetrics, column: Column) -> Optional[float]:
    value = getattr(aggregate, column.field)
    if value is None:
        return None
    return round(value * 100.0 if column.percent else value, 2)


def rank_columns(reports: Sequence[NamedReport]) -> dict[str, ColumnRanking]:
    """Best and second-best method per column header."""
    rankings = {}
    for column in COLUMNS:
        scored = []
        for name, report in reports:
            value = display_value(report.aggregate, column)
            if value is not None:
                scored.append((value if column.lower_is_better else -value, name))
        scored.sort()
        best = scored[0][1] if scored else None
        second = scored[1][1] if len(scored) > 1 else None
        rankings[column.header] = ColumnRanking(best, second)
    return rankings


def _cell(name: str, report: MetricsReport, column: Column, ranking: ColumnRanking) -> str:
    value = display_value(report.aggregate, column)
    if value is None:
        return MISSING
    text = f"{value:.2f}"
    if name == ranking.best:
        return f"**{text}**"
    if name == ranking.second:
        return f"_{text}_"
    return text


def render_table(reports: Sequence[NamedReport], title: str = "") -> str:
    """Plain-text table with one row per method."""
    if not reports:
        raise ValueError("render_table needs at least one report")
    rankings = rank_columns(reports)
    header = ["Method", *(c.header for c in COLUMNS)]
    rows = [
        [name, *(_cell(name, report, c, rankings[c.header]) for c in COLUMNS)]
        for name, report in reports
    ]
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]

    def line(cells: list[str]) -> str:
        return "| " + " | ".join(cell.ljust(width) for cell, width in zip(cells, widths)) + " |"

    out = []
    if title:
        out.append(title)
    out.append(line(header))
    out.append("|" + "|".join("-" * (width + 2) for width in widths) + "|")
    out.extend(line(row) for row in rows)
    return "\n".join(out) + "\n"


def render_csv(reports: Sequence[NamedReport]) -> str:
    """Unmarked values, one row per method."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["method", *(c.field for c in COLUMNS)])
    for name, report in reports:
        values = [display_value(report.aggregate, c) for c in COLUMNS]
        writer.writerow([name, *("" if v is None else f"{v:.2f}" for v in values)])
    return buffer.getvalue()
