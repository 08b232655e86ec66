#!/usr/bin/env python3
"""Data handling and evaluation: masks, splits, windows, masked metrics,
and the last-value baseline.

Missing observations are first-class citizens: loading keeps an explicit
validity mask, inputs are zero-imputed only after normalization, and every
metric normalizes by its own effective sample count.
"""

import numpy as np

from omniair import (
    RDScenario,
    chrono_split,
    compute_norm_stats,
    lv_baseline,
    make_windows,
    masked_metrics,
    simulate_rd,
)
from omniair.evaluation import format_report

stations, frame = simulate_rd(
    RDScenario(n=10, steps=200, seed=5, noise_std=0.3, missing_rate=0.15)
)
print(f"{frame.n_steps} steps x {frame.n_stations} stations, "
      f"{frame.valid.mean():.0%} of cells observed")

train, val, test = chrono_split(frame)
print(f"chronological split: {train.n_steps}/{val.n_steps}/{test.n_steps}")

stats = compute_norm_stats(train, stations)
print(f"training channel means: {np.round(stats.channel_mean, 2)}")

batch = next(make_windows(test, 20, 5, stats, batch_size=8))
print(f"\nwindow batch: inputs {batch.inputs.shape}, targets {batch.targets.shape}")
print(f"imputed input cells remain flagged invalid: "
      f"{(~batch.input_valid).sum()} masked entries")

raw_inputs = np.where(batch.input_valid, stats.denormalize(batch.inputs), 0.0)
lv = lv_baseline(raw_inputs, batch.input_valid, tau=5,
                 fallback=np.broadcast_to(stats.channel_mean, (10, 6)))
print("\nlast-value baseline on the test windows:")
print(format_report(masked_metrics(batch.targets, lv, batch.target_valid)))

print("\nthe near-zero floor keeps percentage errors finite:")
y = np.array([[25.0], [3e-6]])
yhat = np.array([[20.0], [4.0]])
report = masked_metrics(y, yhat, np.ones_like(y, bool), channel_names=("pm25",))
m = report.aggregate
print(f"  MAE uses both entries (count={m.count}): {m.mae:.2f}")
print(f"  MAPE skips the near-zero target (count={m.mape_count}): {m.mape_pct:.1f}%")
