"""Dataset ingestion, validity masking, chronological splits, normalization,
and sliding-window batching.

Stations arrive as one CSV row per station; observations arrive as a long
CSV (one row per station-day) where a blank cell means "not observed".
The in-memory frame is dense over the full daily range with an explicit
validity mask, so downstream code never has to guess what a zero means.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

log = logging.getLogger("omniair")

CHANNELS = ("pm25", "pm10", "o3", "no2", "so2", "co")
GEO_FEATURES = (
    "elevation",
    "climate_avg_wind",
    "climate_avg_wind_dir",
    "terrain_tpi",
    "terrain_roughness",
    "distance_to_coast_km",
)
STATION_COLUMNS = ("station_id", "lat", "lon") + GEO_FEATURES + ("grade",)
N_GRADES = 6


@dataclass(frozen=True)
class StationMeta:
    """Immutable per-station record: location, static attributes, grade."""

    id: str
    lat: float
    lon: float
    geo_feats: np.ndarray  # (6,) in GEO_FEATURES order
    grade: int

    @property
    def point(self) -> np.ndarray:
        return np.array([self.lat, self.lon])


@dataclass
class SeriesFrame:
    """(time, station, channel) observations with a validity mask."""

    timestamps: np.ndarray  # (T,) datetime64[D], strictly increasing, even step
    values: np.ndarray  # (T, N, C) float64; finite wherever valid
    valid: np.ndarray  # (T, N, C) bool
    station_ids: tuple[str, ...]

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise ValueError("values and valid must have the same shape")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamps length must match values")
        if len(self.timestamps) > 1:
            steps = np.diff(self.timestamps)
            if np.any(steps <= np.timedelta64(0, "D")) or len(set(steps.tolist())) > 1:
                raise ValueError("timestamps must be strictly increasing and evenly spaced")
        if not np.isfinite(self.values[self.valid]).all():
            raise ValueError("values must be finite wherever valid")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_stations(self) -> int:
        return self.values.shape[1]

    def slice_time(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(
            self.timestamps[start:stop],
            self.values[start:stop].copy(),
            self.valid[start:stop].copy(),
            self.station_ids,
        )


def _parse_float(text: str, what: str, row_no: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"row {row_no}: cannot parse {what} from {text!r}") from None
    if not np.isfinite(v):
        raise ValueError(f"row {row_no}: {what} must be finite")
    return v


def load_stations(path) -> list[StationMeta]:
    """Parse and validate the station CSV; duplicate ids and bad rows fail."""
    stations: list[StationMeta] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in STATION_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing station columns {missing}")
        for row_no, row in enumerate(reader, start=2):
            sid = row["station_id"].strip()
            if not sid:
                raise ValueError(f"row {row_no}: empty station_id")
            if sid in seen:
                raise ValueError(f"row {row_no}: duplicate station_id {sid!r}")
            seen.add(sid)
            lat = _parse_float(row["lat"], "lat", row_no)
            lon = _parse_float(row["lon"], "lon", row_no)
            if abs(lat) > 90:
                raise ValueError(f"row {row_no}: lat {lat} outside [-90, 90]")
            if abs(lon) > 180:
                raise ValueError(f"row {row_no}: lon {lon} outside [-180, 180]")
            feats = np.array([_parse_float(row[c], c, row_no) for c in GEO_FEATURES])
            grade_text = row["grade"].strip()
            grade = -1 if grade_text in ("", "-1") else int(grade_text)
            if grade != -1 and not 0 <= grade < N_GRADES:
                raise ValueError(f"row {row_no}: grade {grade} outside [0, {N_GRADES - 1}]")
            stations.append(StationMeta(sid, lat, lon, feats, grade))
    return stations


def write_stations(stations: list[StationMeta], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATION_COLUMNS)
        for s in stations:
            writer.writerow(
                [s.id, repr(float(s.lat)), repr(float(s.lon))]
                + [repr(float(v)) for v in s.geo_feats]
                + [s.grade]
            )


def _date_of(text: str, row_no: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ValueError(f"row {row_no}: bad ISO date {text!r}") from None


def load_series(path, stations: list[StationMeta]) -> SeriesFrame:
    """Read the long observation CSV into a dense frame over the full range."""
    id_to_col = {s.id: j for j, s in enumerate(stations)}
    rows: list[tuple[date, int, list[float | None]]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        expected = ("timestamp", "station_id") + CHANNELS
        missing = [c for c in expected if c not in header]
        if missing:
            raise ValueError(f"{path}: missing series columns {missing}")
        for row_no, row in enumerate(reader, start=2):
            sid = row["station_id"].strip()
            if sid not in id_to_col:
                raise ValueError(f"row {row_no}: unknown station_id {sid!r}")
            ts = _date_of(row["timestamp"], row_no)
            vals: list[float | None] = []
            for c in CHANNELS:
                cell = row[c].strip()
                vals.append(None if cell == "" else _parse_float(cell, c, row_no))
            rows.append((ts, id_to_col[sid], vals))
    if not rows:
        raise ValueError(f"{path}: no observation rows")
    days = [r[0] for r in rows]
    start, end = min(days), max(days)
    n_steps = (end - start).days + 1
    n = len(stations)
    c = len(CHANNELS)
    values = np.full((n_steps, n, c), np.nan)
    valid = np.zeros((n_steps, n, c), dtype=bool)
    filled = np.zeros((n_steps, n), dtype=bool)
    for ts, col, vals in rows:
        t = (ts - start).days
        if filled[t, col]:
            raise ValueError(f"duplicate observation for {stations[col].id!r} on {ts}")
        filled[t, col] = True
        for k, v in enumerate(vals):
            if v is not None:
                values[t, col, k] = v
                valid[t, col, k] = True
    values[~valid] = 0.0
    timestamps = np.array(
        [np.datetime64(start + timedelta(days=i)) for i in range(n_steps)],
        dtype="datetime64[D]",
    )
    return SeriesFrame(timestamps, values, valid, tuple(s.id for s in stations))


def write_series(frame: SeriesFrame, path) -> None:
    """Long CSV; rows with no valid channel are omitted, missing cells blank."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("timestamp", "station_id") + CHANNELS)
        for t in range(frame.n_steps):
            ts = str(frame.timestamps[t])
            for j, sid in enumerate(frame.station_ids):
                if not frame.valid[t, j].any():
                    continue
                cells = [
                    repr(float(frame.values[t, j, k])) if frame.valid[t, j, k] else ""
                    for k in range(len(CHANNELS))
                ]
                writer.writerow([ts, sid] + cells)


def chrono_split(
    frame: SeriesFrame,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    min_len: int | None = None,
) -> tuple[SeriesFrame, SeriesFrame, SeriesFrame]:
    """Contiguous train/val/test partitions; remainder goes to test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    total = frame.n_steps
    n_train = int(total * ratios[0])
    n_val = int(total * ratios[1])
    n_test = total - n_train - n_val
    if min_len is not None and min(n_train, n_val, n_test) < min_len:
        raise ValueError(
            f"split lengths ({n_train}, {n_val}, {n_test}) below minimum window {min_len}"
        )
    return (
        frame.slice_time(0, n_train),
        frame.slice_time(n_train, n_train + n_val),
        frame.slice_time(n_train + n_val, total),
    )


@dataclass
class NormStats:
    """Normalization statistics computed from the training split only."""

    channel_mean: np.ndarray  # (C,) global mode, (N, C) per-station mode
    channel_std: np.ndarray
    geo_mean: np.ndarray  # (6,)
    geo_std: np.ndarray
    per_station: bool = False

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.channel_mean) / self.channel_std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.channel_std + self.channel_mean

    def normalize_geo(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.geo_mean) / self.geo_std

    def station_free(self) -> "NormStats":
        """Per-channel stats usable for stations outside the training set.

        In global mode this is the same object; in per-station mode the
        station axis is averaged out.
        """
        if not self.per_station:
            return self
        return NormStats(
            self.channel_mean.mean(axis=0),
            self.channel_std.mean(axis=0),
            self.geo_mean,
            self.geo_std,
            per_station=False,
        )


def compute_norm_stats(
    train: SeriesFrame, stations: list[StationMeta], per_station: bool = False
) -> NormStats:
    axes = 0 if per_station else (0, 1)
    count = train.valid.sum(axis=axes)
    total = np.where(train.valid, train.values, 0.0).sum(axis=axes)
    mean = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    sq = np.where(train.valid, (train.values - mean) ** 2, 0.0).sum(axis=axes)
    std = np.sqrt(np.where(count > 0, sq / np.maximum(count, 1), 0.0))
    std = np.maximum(std, 1e-6)
    feats = np.stack([s.geo_feats for s in stations])
    geo_mean = feats.mean(axis=0)
    geo_std = np.maximum(feats.std(axis=0), 1e-6)
    return NormStats(mean, std, geo_mean, geo_std, per_station)


@dataclass
class WindowBatch:
    """One batch of sliding windows.

    Inputs are z-scored and zero-imputed at invalid entries; targets stay in
    raw units with their mask so losses and metrics decide what to count.
    """

    inputs: np.ndarray  # (B, T, N, C)
    input_valid: np.ndarray  # (B, T, N, C) bool
    targets: np.ndarray  # (B, tau, N, C) raw units
    target_valid: np.ndarray  # (B, tau, N, C) bool
    starts: np.ndarray  # (B,) window start indices into the frame


def window_count(n_steps: int, t_in: int, tau: int) -> int:
    return max(n_steps - t_in - tau + 1, 0)


def make_windows(
    frame: SeriesFrame,
    t_in: int,
    tau: int,
    stats: NormStats,
    batch_size: int,
    shuffle: bool = False,
    rng: np.random.Generator | None = None,
):
    """Yield WindowBatch objects covering every window of the frame."""
    n_windows = window_count(frame.n_steps, t_in, tau)
    if n_windows == 0:
        raise ValueError(f"frame too short for windows: {frame.n_steps} < {t_in + tau}")
    starts = np.arange(n_windows)
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an rng")
        starts = rng.permutation(starts)
    normalized = stats.normalize(frame.values)
    normalized = np.where(frame.valid, normalized, 0.0)
    for lo in range(0, n_windows, batch_size):
        batch = starts[lo : lo + batch_size]
        inputs = np.stack([normalized[s : s + t_in] for s in batch])
        input_valid = np.stack([frame.valid[s : s + t_in] for s in batch])
        targets = np.stack([frame.values[s + t_in : s + t_in + tau] for s in batch])
        target_valid = np.stack([frame.valid[s + t_in : s + t_in + tau] for s in batch])
        yield WindowBatch(inputs, input_valid, targets, target_valid, batch)
