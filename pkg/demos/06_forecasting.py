"""Probabilistic forecasting on synthetic seasonal series, scored with the
feature-summed CRPS against a persistence baseline.

Run: python demos/06_forecasting.py   (about two minutes)
"""
import numpy as np

from seqdiff import (GruModel, RngStream, TrainConfig, build_schedule, crps_sum,
                     make_matrix, make_seasonal_series, persistence_crps_sum,
                     sample_sequence, train_model)

CTX, HOR = 24, 12
data = make_seasonal_series(4, 1000, periods=(8, 20), rng=RngStream(31, 5), noise=0.08)
windows = data.windows("train", CTX + HOR, stride=2)
config = TrainConfig(steps=1200, batch_size=64, lr=1e-3, schedule_kind="cosine",
                     levels=36, parameterization="v", latent_dim=48, hidden_dim=64,
                     seed=23, log_every=400)
params, _, schedule, _ = train_model(windows, config)
model = GruModel(params)

test = data.test
ctx, truth = test[:CTX], test[CTX:CTX + HOR]
ctx_n = data.norm.apply(ctx)
n = 100
z = model.zero_latent(n)
for t in range(CTX):
    _, z_t = model.step(z, np.repeat(ctx_n[t:t + 1], n, axis=0),
                        np.zeros(n, dtype=np.int64))
    z = z_t.data
matrix = make_matrix("autoregressive", 36, HOR, ddim_steps=9)
res = sample_sequence(model, schedule, matrix, z, RngStream(71))
samples = data.norm.invert(res.values)

score, forecast = crps_sum(samples, truth)
baseline = persistence_crps_sum(ctx[-1], truth)
print(f"CRPS_sum: model {score:.4f} vs persistence {baseline:.4f} "
      f"({100 * (baseline - score) / baseline:.0f}% better)")
print("median forecast of the summed series per step:")
print(np.round(forecast.quantiles[:, 9], 2))
print("truth (summed):")
print(np.round(truth.sum(axis=1), 2))
