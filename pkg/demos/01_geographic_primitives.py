#!/usr/bin/env python3
"""Geographic primitives: distances, neighbor search, kernel weights, terrain.

Walks through the building blocks every other component sits on. Run as
`python3 demos/01_geographic_primitives.py`.
"""

import numpy as np

from omniair import gaussian_static_weight, haversine, knn_geo, roughness, tpi

print("== Great-circle distances ==")
paris, london, sydney = (48.8566, 2.3522), (51.5074, -0.1278), (-33.8688, 151.2093)
print(f"Paris -> London : {haversine(paris, london):9.2f} km")
print(f"Paris -> Sydney : {haversine(paris, sydney):9.2f} km")
print(f"symmetry check  : {haversine(london, paris) == haversine(paris, london)}")

print("\n== k nearest stations ==")
rng = np.random.default_rng(0)
points = np.stack([rng.uniform(35, 45, 12), rng.uniform(100, 115, 12)], axis=1)
idx, dist = knn_geo(points, k=3)
for i in range(4):
    pairs = ", ".join(f"#{j} @ {d:6.1f} km" for j, d in zip(idx[i], dist[i]))
    print(f"station {i}: {pairs}")

print("\n== Kernel edge weights (100 km scale) ==")
for d in (0, 50, 100, 200, 300):
    print(f"  d = {d:3d} km -> w = {gaussian_static_weight(float(d), 100.0):.6f}")

print("\n== Terrain descriptors from an elevation window ==")
center, window = 1250.0, [1100.0, 1180.0, 1210.0, 1090.0]
print(f"window center {center} m, neighbors {window}")
print(f"position index (ridge > 0 > valley): {tpi(center, window):+.1f} m")
print(f"roughness (population std incl. center): {roughness(center, window):.1f} m")
