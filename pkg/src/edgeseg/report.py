"""Render evaluation results as a CSV table and a fixed-width text table.

Rows are sorted by case id and followed by ``mean`` and ``std`` summary rows.
Summaries use only the applicable values of each column (population standard
deviation); a value that is not applicable is written as ``n/a``.
"""

import csv
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from edgeseg.metrics import MetricsReport

COLUMNS = ("case", "dice", "hd95_mm", "msd_mm", "rvd_percent")
NOT_APPLICABLE = "n/a"


def _format_value(value: float | None) -> str:
    """Six significant decimals, or ``n/a``."""
    if value is None:
        return NOT_APPLICABLE
    return f"{value:.6f}"


def _values(report: MetricsReport) -> tuple[float | None, ...]:
    return report.dice, report.hd95, report.msd, report.rvd


def _summary(reports: Sequence[MetricsReport], reduce) -> list[float | None]:
    """Apply ``reduce`` to each metric column, skipping not-applicable values."""
    columns = zip(*(_values(r) for r in reports)) if reports else [()] * (len(COLUMNS) - 1)
    result = []
    for column in columns:
        present = [v for v in column if v is not None]
        result.append(float(reduce(np.asarray(present))) if present else None)
    return result


def build_report_rows(reports: Sequence[MetricsReport]) -> list[list[str]]:
    """Build the table rows (header first) for a set of case reports.

    :param reports: One report per case, in any order.
    :type reports: Sequence[MetricsReport]
    :returns: Header, one row per case sorted by case id, then ``mean`` and ``std``.
    :rtype: list[list[str]]
    """
    ordered = sorted(reports, key=lambda r: r.case_id)
    rows = [list(COLUMNS)]
    for report in ordered:
        rows.append([report.case_id, *(_format_value(v) for v in _values(report))])
    rows.append(["mean", *(_format_value(v) for v in _summary(ordered, np.mean))])
    rows.append(["std", *(_format_value(v) for v in _summary(ordered, np.std))])
    return rows


def render_text(rows: list[list[str]]) -> str:
    """Fixed-width rendering: first column left-aligned, numbers right-aligned."""
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for n, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(reports: Sequence[MetricsReport], path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` as CSV and the same table as text next to it with suffix ``.txt``.

    :returns: ``(csv_path, text_path)``.
    :raises OSError: If either file cannot be written.
    """
    path = Path(path)
    rows = build_report_rows(reports)
    with path.open("w", encoding="utf-8", newline="") as f:
        csv.writer(f).writerows(rows)
    text_path = path.with_suffix(".txt")
    text_path.write_text(render_text(rows), encoding="utf-8")
    return path, text_path
