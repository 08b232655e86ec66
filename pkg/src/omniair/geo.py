"""Geographic primitives: great-circle distance, exact k-NN, kernel weights,
and terrain descriptors computed from elevation windows."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

EARTH_RADIUS_KM = 6371.0

# brute-force all-pairs search below this station count, latitude-band
# pre-filter above it
_BRUTE_FORCE_LIMIT = 2000


def _check_latlon(p: np.ndarray, name: str) -> None:
    if not np.isfinite(p).all():
        raise ValueError(f"{name}: coordinates must be finite")
    lat, lon = p[..., 0], p[..., 1]
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise ValueError(f"{name}: latitude in [-90, 90], longitude in [-180, 180]")


def haversine(a, b) -> np.ndarray | float:
    """Great-circle distance in km between (lat, lon) points, broadcasting.

    Accepts arrays of shape (..., 2) in degrees. Longitudes -180 and +180
    refer to the same meridian and give distance 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_latlon(a, "a")
    _check_latlon(b, "b")
    lat1, lon1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lat2, lon2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    sdlat = np.sin((lat2 - lat1) / 2.0)
    sdlon = np.sin((lon2 - lon1) / 2.0)
    h = sdlat * sdlat + np.cos(lat1) * np.cos(lat2) * sdlon * sdlon
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return d if d.ndim else float(d)


def gaussian_static_weight(d, kappa: float):
    """Distance-decay kernel exp(-d^2 / (2 kappa^2)); d in km, kappa > 0."""
    if not np.isfinite(kappa) or kappa <= 0:
        raise ValueError("kappa must be positive and finite")
    d = np.asarray(d, dtype=np.float64)
    if not np.isfinite(d).all() or np.any(d < 0):
        raise ValueError("distances must be finite and non-negative")
    w = np.exp(-(d * d) / (2.0 * kappa * kappa))
    return w if w.ndim else float(w)


def tpi(center: float, neighbors) -> float:
    """Topographic position index: center elevation minus neighborhood mean."""
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.size == 0:
        raise ValueError("tpi: neighbor window must be non-empty")
    if not (np.isfinite(center) and np.isfinite(neighbors).all()):
        raise ValueError("tpi: elevations must be finite")
    return float(center - neighbors.mean())


def roughness(center: float, neighbors) -> float:
    """Population standard deviation of the window including its center."""
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.size == 0:
        raise ValueError("roughness: neighbor window must be non-empty")
    window = np.concatenate([[center], neighbors])
    if not np.isfinite(window).all():
        raise ValueError("roughness: elevations must be finite")
    return float(window.std())


def _knn_brute_rows(points: np.ndarray, rows: np.ndarray, k: int):
    n = len(points)
    idx = np.empty((len(rows), k), dtype=np.int64)
    dist = np.empty((len(rows), k))
    for out_i, i in enumerate(rows):
        d = haversine(points[i], points)
        d[i] = np.inf
        # ties broken by ascending station index (stable secondary key)
        order = np.lexsort((np.arange(n), d))[:k]
        idx[out_i] = order
        dist[out_i] = d[order]
    return idx, dist


def _knn_banded_row(points, lat_order, lat_sorted, i, k):
    """Exact k-NN for one query using an expanding latitude band.

    Any point whose latitude differs by dphi is at least R*dphi away, so the
    band may stop growing once the k-th best distance is below that bound for
    every unexplored point.
    """
    n = len(points)
    pos = np.searchsorted(lat_sorted, points[i, 0])
    lo, hi = pos, pos
    cand: list[int] = []
    best_idx = best_dist = None
    while True:
        grow = max(4 * k, 64)
        new_lo = max(0, lo - grow)
        new_hi = min(n, hi + grow)
        fresh = np.concatenate([lat_order[new_lo:lo], lat_order[hi:new_hi]])
        lo, hi = new_lo, new_hi
        cand.extend(int(j) for j in fresh if j != i)
        if len(cand) >= k:
            carr = np.asarray(cand)
            d = haversine(points[i], points[carr])
            order = np.lexsort((carr, d))[:k]
            best_idx, best_dist = carr[order], d[order]
            frontier = np.inf
            if lo > 0:
                frontier = min(frontier, abs(points[i, 0] - lat_sorted[lo - 1]))
            if hi < n:
                frontier = min(frontier, abs(lat_sorted[hi] - points[i, 0]))
            outside_min_km = EARTH_RADIUS_KM * np.radians(frontier)
            if best_dist[-1] <= outside_min_km:
                return best_idx, best_dist
        if lo == 0 and hi == n:
            carr = np.asarray(cand)
            d = haversine(points[i], points[carr])
            order = np.lexsort((carr, d))[:k]
            return carr[order], d[order]


def knn_geo(points, k: int, workers: int = 1):
    """k nearest stations per station by great-circle distance, self excluded.

    Returns (idx, dist) with rows sorted by ascending distance; equal
    distances break toward the lower station index. Exact for any N.
    """
    points = np.asarray(points, dtype=np.float64)
    _check_latlon(points, "points")
    n = len(points)
    if not (0 < k < n):
        raise ValueError(f"knn_geo: need 0 < k < N, got k={k}, N={n}")

    if n <= _BRUTE_FORCE_LIMIT:
        rows = np.arange(n)
        if workers > 1:
            chunks = np.array_split(rows, workers)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(lambda r: _knn_brute_rows(points, r, k), chunks))
            idx = np.concatenate([p[0] for p in parts])
            dist = np.concatenate([p[1] for p in parts])
            return idx, dist
        return _knn_brute_rows(points, rows, k)

    lat_order = np.argsort(points[:, 0], kind="stable")
    lat_sorted = points[lat_order, 0]

    def solve(rows):
        idx = np.empty((len(rows), k), dtype=np.int64)
        dist = np.empty((len(rows), k))
        for out_i, i in enumerate(rows):
            idx[out_i], dist[out_i] = _knn_banded_row(points, lat_order, lat_sorted, i, k)
        return idx, dist

    rows = np.arange(n)
    if workers > 1:
        chunks = np.array_split(rows, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(solve, chunks))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    return solve(rows)
