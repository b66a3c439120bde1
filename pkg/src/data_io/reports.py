"""
CSV emission of EvalReports.
"""
import csv
import logging
import os

from src.evaluation.report import AVERAGE_ROW, MODE_COLUMNS, EvalReport
from src.utils import exclusive_lock

logger = logging.getLogger(__name__)

HEADER = ["attack", "classifier", *MODE_COLUMNS, "wall_time_s"]
TIMING_HEADER = ["method", "L", "R", "n_images", "wall_time_s", "speedup", "accuracy"]


def format_percent(accuracy: float) -> str:
    """0.98293 -> '98.29'"""
    return f"{100.0 * accuracy:.2f}"


def write_csv_report(report: EvalReport, path: str) -> None:
    """
    Write one row per (attack, classifier), sorted lexicographically, with the
    mode columns as percentages; an Average row closes the table when the
    report asks for it. Cells a suite did not measure stay empty.
    """
    if not report.rows:
        raise ValueError(f"report '{report.name}' has no accuracy rows")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with exclusive_lock(path), open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HEADER)
        for (attack, classifier), cells in report.grouped().items():
            wall_time = sum(row.wall_time_s for row in cells.values())
            writer.writerow([attack, classifier,
                             *[format_percent(cells[m].accuracy) if m in cells else "" for m in MODE_COLUMNS],
                             f"{wall_time:.3f}"])
        if report.with_average:
            averages = report.averages()
            writer.writerow([AVERAGE_ROW, "",
                             *[format_percent(averages[m]) if m in averages else "" for m in MODE_COLUMNS], ""])
    logger.info(f"Wrote report '{report.name}' to {path}")


def write_timing_csv(report: EvalReport, path: str) -> None:
    """Timing rows with the speedup of every method relative to the fastest one."""
    if not report.timings:
        raise ValueError(f"report '{report.name}' has no timing rows")
    fastest = min(row.wall_time_s for row in report.timings) or 1e-12
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with exclusive_lock(path), open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TIMING_HEADER)
        for row in report.timings:
            accuracy = "" if row.accuracy is None else format_percent(row.accuracy)
            writer.writerow([row.method, row.steps, row.restarts, row.n_images, f"{row.wall_time_s:.3f}",
                             f"{row.wall_time_s / fastest:.2f}", accuracy])
    logger.info(f"Wrote timing table '{report.name}' to {path}")
