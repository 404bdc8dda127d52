"""Receding-horizon control on the small maze: train on goal-agnostic random
walks, then plan with goal-distance guidance and tree-averaged gradients.

Run: python demos/05_maze_planning.py   (about four minutes)
"""
import numpy as np

from seqdiff import (GruModel, Normalization, RngStream, TrainConfig,
                     generate_random_walk_dataset, load_maze, mpc_execute, train_model)

maze = load_maze("small")
walks = generate_random_walk_dataset(maze, 200, 120, RngStream(3, 7))
norm = Normalization.fit(walks)
print(f"dataset: {walks.shape[0]} walks x {walks.shape[1]} steps, "
      f"reward density {walks[:, :, 2].mean():.3f}")

config = TrainConfig(steps=1500, batch_size=64, lr=1e-3, schedule_kind="linear",
                     levels=24, parameterization="x0", latent_dim=48, hidden_dim=64,
                     frame_stack=4, seed=17, log_every=500)
params, _, schedule, metrics = train_model(norm.apply(walks), config)
print("loss curve:", [round(m[1], 4) for m in metrics])

model = GruModel(params)
for label, scale, n in (("unguided", 0.0, 1), ("guided", 0.1, 1), ("tree-guided", 0.1, 8)):
    out = mpc_execute(model, schedule, maze, norm, horizon=6,
                      rng=RngStream(900, 1).child(label), episodes=20,
                      matrix_kind="pyramid", guidance_scale=scale, mctg_samples=n,
                      max_steps=120)
    print(f"{label:12s}: {int(out.success.sum())}/20 episodes reach the goal")
