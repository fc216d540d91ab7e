"""
Report port: aggregate metric CSVs of a run into the results table.
"""

from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

from mask_beamforming.errors import NoRunsFoundError

logger = logging.getLogger(__name__)

REPORT_NAME = "report.csv"
METRICS = ("sdr", "sir", "cd")
MIXED = "mixed"


def collect_metrics(root: str | Path) -> pd.DataFrame:
    """
    Concatenate every ``metrics/*.csv`` below ``root``.

    :param root: A run directory or a directory of runs.
    :type root: str | Path
    :return: All rows, with a ``run`` column.
    :rtype: pd.DataFrame
    :raises NoRunsFoundError: If no metric table exists.
    """
    base = Path(root)
    paths = sorted(
        p
        for p in base.glob("**/metrics/*.csv")
        if p.name != REPORT_NAME
    )
    if not paths:
        raise NoRunsFoundError(f"no runs found under {base}")
    frames = []
    for path in paths:
        frame = pd.read_csv(path)
        frame["run"] = path.parent.parent.name
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def _summary(frame: pd.DataFrame, columns: dict[str, str]) -> dict:
    row = {}
    for metric, column in columns.items():
        row[f"{metric}_median"] = float(frame[column].median())
        row[f"{metric}_mean"] = float(frame[column].mean())
    return row


def summarize(metrics: pd.DataFrame) -> pd.DataFrame:
    """
    Median and mean SDR, SIR and CD per (method, beamformer), preceded by
    the unprocessed mixture row.

    :param metrics: Rows from :func:`collect_metrics`.
    :type metrics: pd.DataFrame
    :return: Table with columns method, beamformer and
        ``<metric>_{median,mean}``.
    :rtype: pd.DataFrame
    """
    mixed = metrics.drop_duplicates(["run", "scene", "source"])
    rows = [
        {
            "method": MIXED,
            "beamformer": "-",
            **_summary(mixed, {m: f"mixed_{m}" for m in METRICS}),
        }
    ]
    for (method, beamformer), group in metrics.groupby(
        ["method", "beamformer"], sort=True
    ):
        rows.append(
            {
                "method": method,
                "beamformer": beamformer,
                **_summary(group, {m: m for m in METRICS}),
            }
        )
    return pd.DataFrame(rows)


def render(table: pd.DataFrame) -> str:
    """Plain-text rendering with two decimals."""
    return table.to_string(index=False, float_format=lambda v: f"{v:.2f}")


def build_report(run_root: str | Path) -> tuple[pd.DataFrame, str]:
    """
    Summarize a run, write ``metrics/report.csv`` and return the text.

    :param run_root: Run directory (``runs/<name>``).
    :type run_root: str | Path
    :return: Summary table and its text rendering.
    :rtype: tuple[pd.DataFrame, str]
    :raises NoRunsFoundError: If the run holds no metrics.
    """
    root = Path(run_root)
    table = summarize(collect_metrics(root))
    out = root / "metrics" / REPORT_NAME
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False, float_format="%.4f")
    logger.info("wrote %s", out)
    return table, render(table)
