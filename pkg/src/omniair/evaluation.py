"""Masked forecast metrics and the last-value baseline.

MAE and RMSE average over observed entries only. MAPE additionally drops
near-zero targets (|y| <= 5e-5) so background noise cannot blow up the
percentage, and every metric is normalized by its own effective sample
count. An empty mask yields None rather than NaN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import CHANNELS

MAPE_FLOOR = 5e-5


@dataclass
class ChannelMetrics:
    mae: float | None
    rmse: float | None
    mape_pct: float | None
    count: int
    mape_count: int


@dataclass
class MetricReport:
    per_channel: dict[str, ChannelMetrics]
    aggregate: ChannelMetrics


def _metrics_over(y: np.ndarray, yhat: np.ndarray, valid: np.ndarray) -> ChannelMetrics:
    count = int(valid.sum())
    mape_mask = valid & (np.abs(y) > MAPE_FLOOR)
    mape_count = int(mape_mask.sum())
    if count == 0:
        return ChannelMetrics(None, None, None, 0, mape_count)
    err = np.where(valid, y - yhat, 0.0)
    mae = float(np.abs(err).sum() / count)
    rmse = float(np.sqrt((err**2).sum() / count))
    if mape_count == 0:
        mape = None
    else:
        ape = np.where(mape_mask, np.abs(y - yhat) / np.maximum(np.abs(y), MAPE_FLOOR), 0.0)
        mape = float(ape.sum() / mape_count * 100.0)
    return ChannelMetrics(mae, rmse, mape, count, mape_count)


def masked_metrics(
    y: np.ndarray,
    yhat: np.ndarray,
    valid: np.ndarray,
    channel_names: tuple[str, ...] = CHANNELS,
) -> MetricReport:
    """Per-channel and aggregate MAE / RMSE / masked MAPE.

    Shapes must match, with channels on the last axis.
    """
    if y.shape != yhat.shape or y.shape != valid.shape:
        raise ValueError("y, yhat and valid must share a shape")
    if y.shape[-1] != len(channel_names):
        raise ValueError(f"last axis must hold {len(channel_names)} channels")
    per_channel = {
        name: _metrics_over(y[..., k], yhat[..., k], valid[..., k])
        for k, name in enumerate(channel_names)
    }
    return MetricReport(per_channel, _metrics_over(y, yhat, valid))


def lv_baseline(
    inputs: np.ndarray,
    input_valid: np.ndarray,
    tau: int,
    fallback: np.ndarray,
) -> np.ndarray:
    """Repeat the last valid raw observation across the horizon.

    ``inputs`` is (B, T, N, C) in raw units. Entries with no valid history
    fall back to ``fallback`` (per-channel training means, broadcastable to
    (N, C)).
    """
    b, t, n, c = inputs.shape
    t_idx = np.arange(t)[None, :, None, None]
    last_pos = np.where(input_valid, t_idx, -1).max(axis=1)  # (B, N, C)
    has_obs = last_pos >= 0
    gathered = np.take_along_axis(
        inputs, np.maximum(last_pos, 0)[:, None], axis=1
    )[:, 0]
    base = np.broadcast_to(fallback, (b, n, c))
    last = np.where(has_obs, gathered, base)
    return np.broadcast_to(last[:, None], (b, tau, n, c)).copy()


def report_rows(report: MetricReport) -> list[list]:
    def fmt(v):
        return "undefined" if v is None else repr(v)

    rows = []
    for name, m in list(report.per_channel.items()) + [("all", report.aggregate)]:
        rows.append([name, fmt(m.mae), fmt(m.rmse), fmt(m.mape_pct), m.count, m.mape_count])
    return rows


def write_report_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "mae", "rmse", "mape_pct", "count", "mape_count"])
        writer.writerows(report_rows(report))


def format_report(report: MetricReport) -> str:
    def fmt(v):
        return "   undef" if v is None else f"{v:8.4f}"

    lines = [f"{'channel':8} {'mae':>8} {'rmse':>8} {'mape%':>8} {'count':>8}"]
    for name, m in list(report.per_channel.items()) + [("all", report.aggregate)]:
        lines.append(f"{name:8} {fmt(m.mae)} {fmt(m.rmse)} {fmt(m.mape_pct)} {m.count:8d}")
    return "\n".join(lines)
