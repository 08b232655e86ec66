"""Prediction paths: standard forecasting from a checkpoint, zero-shot
forecasting for stations unseen at training time, and split evaluation."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .config import RunConfig
from .data import CHANNELS, NormStats, SeriesFrame, StationMeta
from .encoder import FourierConfig, NeighborContext, identity_feature_matrix, semantic_feature_matrix
from .evaluation import MetricReport, masked_metrics
from .model import (
    ModelState,
    build_extension,
    forward,
    forward_extension,
)
from .topology import build_hybrid_graph


def rebuild_state(
    cfg: RunConfig,
    stations: list[StationMeta],
    buffers: dict[str, np.ndarray],
) -> ModelState:
    """Reconstruct the frozen model state from checkpoint buffers.

    Contexts and normalization come from the buffers (training-time values);
    the graph is rebuilt deterministically from them.
    """
    n = len(stations)
    if buffers["context_vectors"].shape[0] != n:
        raise ValueError(
            f"checkpoint was trained on {buffers['context_vectors'].shape[0]} stations, "
            f"got {n}"
        )
    stats = NormStats(
        buffers["channel_mean"],
        buffers["channel_std"],
        buffers["geo_mean"],
        buffers["geo_std"],
        per_station=bool(buffers["per_station_norm"][0]),
    )
    contexts = []
    for i in range(n):
        v = buffers["context_vectors"][i]
        contexts.append(
            NeighborContext(
                mu_nbr=float(v[0]),
                sigma_nbr=float(v[1]),
                delta_c_km=float(v[2]),
                delta_self=float(v[3]),
                level_dist=v[4:].copy(),
                centroid=buffers["context_centroids"][i].copy(),
                fallback=bool(buffers["context_fallback"][i]),
            )
        )
    fcfg = FourierConfig(levels=cfg.fourier_levels)
    id_features = identity_feature_matrix(stations, contexts, fcfg, stats)
    sem_vectors = semantic_feature_matrix(stations, contexts, fcfg, stats)
    points = np.stack([s.point for s in stations])
    graph = build_hybrid_graph(
        points, sem_vectors, cfg.k_geo, cfg.k_sem, cfg.kappa_km, workers=cfg.workers
    )
    grades = buffers["grades"].astype(np.int64)
    return ModelState(cfg, stations, stats, contexts, graph, id_features, grades, sem_vectors)


def window_end_index(frame: SeriesFrame, window_end: str | int | None, t_in: int) -> int:
    """Resolve a window end (ISO date, index, or None for the last step)."""
    if window_end is None:
        idx = frame.n_steps - 1
    elif isinstance(window_end, int) or str(window_end).lstrip("-").isdigit():
        idx = int(window_end)
        if idx < 0:
            idx += frame.n_steps
    else:
        ts = np.datetime64(str(window_end), "D")
        hits = np.flatnonzero(frame.timestamps == ts)
        if len(hits) == 0:
            raise ValueError(f"window end {window_end!r} not in frame range")
        idx = int(hits[0])
    if idx < t_in - 1 or idx >= frame.n_steps:
        raise ValueError(
            f"window ending at step {idx} needs {t_in} steps of history "
            f"within the {frame.n_steps}-step frame"
        )
    return idx


def _window_inputs(state: ModelState, frame: SeriesFrame, end_idx: int) -> np.ndarray:
    lo = end_idx - state.cfg.t_in + 1
    values = frame.values[lo : end_idx + 1]
    valid = frame.valid[lo : end_idx + 1]
    normalized = np.where(valid, state.stats.normalize(values), 0.0)
    return normalized[None]


@dataclass
class Forecast:
    timestamps: np.ndarray  # (tau,) datetime64[D]
    station_ids: tuple[str, ...]
    values: np.ndarray  # (tau, N, C) raw units


def predict_window(
    params: dict[str, Tensor],
    state: ModelState,
    frame: SeriesFrame,
    window_end: str | int | None = None,
) -> Forecast:
    """Raw-unit forecast for the window ending at ``window_end``."""
    end_idx = window_end_index(frame, window_end, state.cfg.t_in)
    x = _window_inputs(state, frame, end_idx)
    with no_grad():
        out = forward(params, state, x)
    values = state.stats.denormalize(out.data)[0]
    step = frame.timestamps[1] - frame.timestamps[0] if frame.n_steps > 1 else np.timedelta64(1, "D")
    future = frame.timestamps[end_idx] + step * np.arange(1, state.cfg.tau + 1)
    return Forecast(future, frame.station_ids, values)


def params_digest(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def predict_unseen(
    params: dict[str, Tensor],
    state: ModelState,
    frame: SeriesFrame,
    new_stations: list[StationMeta],
    new_frame: SeriesFrame | None = None,
    window_end: str | int | None = None,
) -> tuple[Forecast, Forecast]:
    """Zero-shot forecasts for stations absent from training.

    New stations attach through directed edges and consume the base run's
    states, so the returned base forecast is the same object the plain
    predictor computes, byte for byte, and no parameter is ever written.
    ``new_frame`` optionally carries observations for the new stations;
    without it their inputs are fully missing.
    """
    before = params_digest(params)
    end_idx = window_end_index(frame, window_end, state.cfg.t_in)
    x = _window_inputs(state, frame, end_idx)
    ext = build_extension(state, new_stations)
    lo = end_idx - state.cfg.t_in + 1
    n_new = len(new_stations)
    new_stats = state.stats.station_free()
    if new_frame is None:
        x_new = np.zeros((1, state.cfg.t_in, n_new, len(CHANNELS)))
    else:
        values = new_frame.values[lo : end_idx + 1]
        valid = new_frame.valid[lo : end_idx + 1]
        x_new = np.where(valid, new_stats.normalize(values), 0.0)[None]
    with no_grad():
        base_out, extras = forward(params, state, x, collect=True)
        new_out = forward_extension(params, state, ext, x_new, extras)
    if params_digest(params) != before:
        raise RuntimeError("zero-shot prediction mutated model parameters")
    step = frame.timestamps[1] - frame.timestamps[0] if frame.n_steps > 1 else np.timedelta64(1, "D")
    future = frame.timestamps[end_idx] + step * np.arange(1, state.cfg.tau + 1)
    base = Forecast(future, frame.station_ids, state.stats.denormalize(base_out.data)[0])
    new_ids = tuple(s.id for s in new_stations)
    new = Forecast(future, new_ids, new_stats.denormalize(new_out.data)[0])
    return base, new


def evaluate_split(
    params: dict[str, Tensor], state: ModelState, frame: SeriesFrame
) -> MetricReport:
    """Masked metrics over every forecast window of a frame."""
    from .training import predict_batches

    preds, targets, masks = predict_batches(params, state, frame)
    return masked_metrics(targets, preds, masks)


def write_forecast_csv(forecast: Forecast, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "station_id", "channel", "value"])
        tau, n, c = forecast.values.shape
        for t in range(tau):
            ts = str(forecast.timestamps[t])
            for j in range(n):
                for k in range(c):
                    writer.writerow(
                        [ts, forecast.station_ids[j], CHANNELS[k], repr(float(forecast.values[t, j, k]))]
                    )


def export_embeddings(params: dict[str, Tensor], state: ModelState, path) -> None:
    """CSV of identity embeddings, one row per station."""
    from .encoder import encode_identity

    with no_grad():
        e_id = encode_identity(state.id_features, state.grades, params).data
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id"] + [f"e_{i}" for i in range(e_id.shape[1])])
        for station, row in zip(state.stations, e_id):
            writer.writerow([station.id] + [repr(float(v)) for v in row])
