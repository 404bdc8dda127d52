"""Scheduling matrices: one grid of target noise levels per sampling scheme.

Run: python demos/03_grid_schedules.py
"""
import numpy as np

from seqdiff import (Dims, GruModel, RngStream, build_schedule, init_params,
                     make_matrix, sample_sequence)

K, T = 4, 5
for kind in ("full_sequence", "autoregressive", "pyramid"):
    m = make_matrix(kind, K, T)
    print(f"{kind} (rows top to bottom):")
    for row in m.levels[::-1]:
        print("   ", row)

print("trapezoid offset=2 interpolates between pyramid and autoregressive:")
for row in make_matrix("trapezoid", K, T, offset=2).levels[::-1]:
    print("   ", row)

print("subsampled jumps (ddim_steps=2):")
for row in make_matrix("pyramid", K, T, ddim_steps=2).levels[::-1]:
    print("   ", row)

# the sampler's realized per-token levels equal the matrix columns exactly
schedule = build_schedule("cosine", K)
model = GruModel(init_params(RngStream(0).child("init"), Dims(2, 8, 12, 1), K, "x0"))
matrix = make_matrix("pyramid", K, T)
result = sample_sequence(model, schedule, matrix, model.zero_latent(1), RngStream(1))
print("realized level trace equals the grid:",
      np.array_equal(result.level_trace[1:], matrix.levels[::-1]))
