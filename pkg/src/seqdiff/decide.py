"""Sequential decision making on a gridworld maze.

Tokens follow the [action, reward, next-observation] layout. The maze is a
text grid of unit cells with double-integrator point dynamics; datasets are
goal-agnostic random walks between waypoints; planning runs receding-horizon
control with goal-distance guidance over sampled futures.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DivergenceError, GenerationError
from .network import GruModel, frame_stack, frame_unstack
from .rng import RngStream
from .sample import GuidanceSpec, make_matrix, sample_sequence
from .schedule import NoiseSchedule

ACTION_DIM = 2
REWARD_DIM = 1
OBS_DIM = 4
RAW_TOKEN_DIM = ACTION_DIM + REWARD_DIM + OBS_DIM  # [a, r, o] order
GOAL_RADIUS = 0.5
_WALL_MARGIN = 1e-6


@dataclass(frozen=True)
class MazeSpec:
    walls: np.ndarray                    # (H, W) bool
    goal: np.ndarray                     # (2,) xy
    start_cells: np.ndarray              # (n, 2) int rows/cols of start region
    dt: float = 0.1
    damping: float = 0.95
    action_clip: float = 1.0
    goal_radius: float = GOAL_RADIUS

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]


MAZE_LAYOUTS = {
    "small": """\
#######
#.....#
#.###.#
#...#.#
###.#.#
#G..#.#
#######
""",
    "medium": """\
#########
#...#...#
#.#.#.#.#
#.#...#.#
#.#####.#
#.#...#.#
#.#.#.#.#
#...#..G#
#########
""",
    "large": """\
############
#....#.....#
#.##.#.###.#
#.#..#...#.#
#.#.####.#.#
#.#....#.#.#
#.#.##.#.#.#
#...#..#.#.#
###.#.##.#.#
#...#....#G#
############
""",
}


def _free_neighbors(walls, r, c):
    out = []
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < walls.shape[0] and 0 <= cc < walls.shape[1] and not walls[rr, cc]:
            out.append((rr, cc))
    return out


def parse_maze(text: str, dt: float = 0.1, damping: float = 0.95,
               action_clip: float = 1.0) -> MazeSpec:
    """Read a text grid: '#' wall, '.' free, 'G' goal, 'S' start region."""
    rows = [line for line in text.splitlines() if line.strip()]
    width = max(len(r) for r in rows)
    walls = np.ones((len(rows), width), dtype=bool)
    goal = None
    starts = []
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                continue
            elif ch in ".GS":
                walls[r, c] = False
                if ch == "G":
                    if goal is not None:
                        raise ConfigError("maze must have exactly one goal cell")
                    goal = np.array([c + 0.5, r + 0.5])
                elif ch == "S":
                    starts.append((r, c))
            else:
                raise ConfigError(f"unknown maze character {ch!r}")
    if goal is None:
        raise ConfigError("maze has no goal cell")
    free = np.argwhere(~walls)
    # the free region must be one connected component
    seen = {tuple(free[0])}
    queue = deque([tuple(free[0])])
    while queue:
        cell = queue.popleft()
        for nxt in _free_neighbors(walls, *cell):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if len(seen) != len(free):
        raise ConfigError("maze free region is not connected")
    if not starts:
        goal_cell = (int(goal[1]), int(goal[0]))
        starts = [tuple(x) for x in free if tuple(x) != goal_cell]
    return MazeSpec(walls, goal, np.array(starts), dt, damping, action_clip)


def load_maze(name_or_path: str, **kwargs) -> MazeSpec:
    if name_or_path in MAZE_LAYOUTS:
        return parse_maze(MAZE_LAYOUTS[name_or_path], **kwargs)
    with open(name_or_path) as fh:
        return parse_maze(fh.read(), **kwargs)


def _cell_blocked(walls, r_idx, c_idx):
    r = np.clip(r_idx, 0, walls.shape[0] - 1)
    c = np.clip(c_idx, 0, walls.shape[1] - 1)
    return walls[r, c]


def env_step(maze: MazeSpec, state: np.ndarray, action: np.ndarray):
    """Clipped double-integrator step with axis-separated wall collision.

    state (..., 4) = [px, py, vx, vy]; returns (next_state, reward, done).
    A blocked axis stops at the wall face with that velocity component zeroed.
    """
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if not np.isfinite(action).all():
        raise ContractError("env_step requires finite actions")
    a = np.clip(action, -maze.action_clip, maze.action_clip)
    px, py = state[..., 0], state[..., 1]
    v = maze.damping * state[..., 2:] + maze.dt * a
    vx, vy = v[..., 0].copy(), v[..., 1].copy()

    nx = px + maze.dt * vx
    blocked = _cell_blocked(maze.walls, np.floor(py).astype(int), np.floor(nx).astype(int))
    face = np.where(vx > 0, np.floor(nx), np.floor(nx) + 1.0)
    nx = np.where(blocked, face - np.sign(vx) * _WALL_MARGIN, nx)
    vx = np.where(blocked, 0.0, vx)

    ny = py + maze.dt * vy
    blocked = _cell_blocked(maze.walls, np.floor(ny).astype(int), np.floor(nx).astype(int))
    face = np.where(vy > 0, np.floor(ny), np.floor(ny) + 1.0)
    ny = np.where(blocked, face - np.sign(vy) * _WALL_MARGIN, ny)
    vy = np.where(blocked, 0.0, vy)

    nxt = np.stack([nx, ny, vx, vy], axis=-1)
    dist = np.sqrt((nx - maze.goal[0]) ** 2 + (ny - maze.goal[1]) ** 2)
    reward = (dist <= maze.goal_radius).astype(np.float64)
    return nxt, reward, reward > 0


def find_waypoints(maze: MazeSpec) -> list[tuple[int, int]]:
    """Free cells at junctions, turns, and dead ends."""
    out = []
    for r, c in np.argwhere(~maze.walls):
        nbrs = _free_neighbors(maze.walls, r, c)
        if len(nbrs) != 2:
            out.append((int(r), int(c)))
        else:
            (r1, c1), (r2, c2) = nbrs
            if r1 != r2 and c1 != c2:  # corner
                out.append((int(r), int(c)))
    return out


def _bfs_path(walls, start, target):
    prev = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == target:
            path = [cell]
            while prev[cell] is not None:
                cell = prev[cell]
                path.append(cell)
            return path[::-1]
        for nxt in _free_neighbors(walls, *cell):
            if nxt not in prev:
                prev[nxt] = cell
                queue.append(nxt)
    return None


def _center(cell) -> np.ndarray:
    return np.array([cell[1] + 0.5, cell[0] + 0.5])


def generate_random_walk_dataset(maze: MazeSpec, n_trajectories: int, steps: int,
                                 rng: RngStream, kp: float = 5.0, kd: float = 3.0,
                                 action_noise: float = 0.25) -> np.ndarray:
    """Goal-agnostic random walks: a scripted agent steers between randomly
    chosen waypoints along BFS corridor paths with noisy PD control.

    Returns (n_trajectories, steps, 7) arrays of [a, r, o_next] tokens.
    """
    waypoints = find_waypoints(maze)
    if len(waypoints) < 2:
        raise GenerationError("maze has fewer than two waypoints")
    out = np.zeros((n_trajectories, steps, RAW_TOKEN_DIM))
    for i in range(n_trajectories):
        stream = rng.child("walk", i)
        cell = tuple(maze.start_cells[stream.integers(0, len(maze.start_cells))])
        pos = _center(cell) + (stream.uniform((2,)) - 0.5) * 0.5
        state = np.array([pos[0], pos[1], 0.0, 0.0])
        path: list = []
        for t in range(steps):
            while not path:
                wp = waypoints[stream.integers(0, len(waypoints))]
                here = (int(state[1]), int(state[0]))
                if wp == here:
                    continue
                full = _bfs_path(maze.walls, here, wp)
                if full is None:
                    raise GenerationError(f"waypoint {wp} unreachable from {here}")
                path = full[1:]
            target = _center(path[0])
            if np.linalg.norm(state[:2] - target) < 0.35:
                path.pop(0)
                continue_target = _center(path[0]) if path else target
            else:
                continue_target = target
            action = (kp * (continue_target - state[:2]) - kd * state[2:]
                      + action_noise * stream.normal((2,)))
            action = np.clip(action, -maze.action_clip, maze.action_clip)
            state, reward, _ = env_step(maze, state, action)
            out[i, t, :ACTION_DIM] = action
            out[i, t, ACTION_DIM] = reward
            out[i, t, ACTION_DIM + REWARD_DIM:] = state
    return out


# ----------------------------------------------------------------------
# token layout, normalization and guidance energies

@dataclass(frozen=True)
class TokenLayout:
    """Maps [a, r, o] slots (possibly frame-stacked) to flat token indices."""
    frame_stack: int = 1

    @property
    def raw_dim(self) -> int:
        return RAW_TOKEN_DIM

    @property
    def model_dim(self) -> int:
        return RAW_TOKEN_DIM * self.frame_stack

    def position_indices(self) -> np.ndarray:
        base = np.arange(self.frame_stack) * RAW_TOKEN_DIM
        return np.concatenate([base + ACTION_DIM + REWARD_DIM,
                               base + ACTION_DIM + REWARD_DIM + 1])

    def reward_indices(self) -> np.ndarray:
        return np.arange(self.frame_stack) * RAW_TOKEN_DIM + ACTION_DIM


def goal_energy(plan, goal_xy, layout: TokenLayout, levels=None):
    """log c(plan) = -sum over steps of squared distance to the goal, so any
    step of the plan may be the arrival step. Differentiable in the plan."""
    plan = ad.tensor(plan)
    idx = layout.position_indices()
    n = layout.frame_stack
    gx = np.concatenate([np.full(n, goal_xy[0]), np.full(n, goal_xy[1])])
    pos = plan[:, :, idx] if plan.data.ndim == 3 else plan[:, idx]
    return ad.neg(ad.tsum(ad.square(pos - gx)))


def reward_energy(plan, layout: TokenLayout, levels=None):
    """log c(plan) = sum of predicted rewards over the plan (dense-reward
    hook for cumulative-reward guidance; exercised by unit tests only)."""
    plan = ad.tensor(plan)
    idx = layout.reward_indices()
    vals = plan[:, :, idx] if plan.data.ndim == 3 else plan[:, idx]
    return ad.tsum(vals)


def make_goal_guidance(maze: MazeSpec, layout: TokenLayout, norm, scale: float,
                       n: int) -> GuidanceSpec:
    """Guidance toward the maze goal, expressed in normalized token space."""
    pos_idx = layout.position_indices()
    mean_s, std_s = norm.tiled(layout.frame_stack)
    mean, std = mean_s[pos_idx], std_s[pos_idx]
    half = len(pos_idx) // 2
    goal_raw = np.concatenate([np.full(half, maze.goal[0]), np.full(half, maze.goal[1])])
    goal_norm = (goal_raw - mean) / std

    def energy(plan, levels=None):
        pos = plan[:, :, pos_idx]
        return ad.neg(ad.tsum(ad.square(pos - goal_norm)))

    return GuidanceSpec(energy, scale, n)


# ----------------------------------------------------------------------
# receding-horizon execution

@dataclass
class EpisodeBatch:
    states: np.ndarray          # (B, steps+1, 4) raw states
    actions: np.ndarray         # (B, steps, 2) executed = planned actions
    rewards: np.ndarray         # (B, steps)
    success: np.ndarray         # (B,) bool: goal circle reached in time
    success_step: np.ndarray    # (B,) first success step or -1


def mpc_execute(model: GruModel, schedule: NoiseSchedule, maze: MazeSpec,
                norm, horizon: int, rng: RngStream, episodes: int = 1,
                matrix_kind: str = "pyramid", guidance_scale: float = 0.0,
                mctg_samples: int = 1, max_steps: int = 200,
                ddim_steps: int | None = None,
                start_states: np.ndarray | None = None) -> EpisodeBatch:
    """Closed-loop control: plan a lookahead window, execute the first model
    token's actions, fold the observed outcome back into the latent at noise
    level 0, and replan. The window shrinks near the episode horizon.
    """
    if horizon < 1:
        raise ContractError("planning horizon must be >= 1")
    layout = TokenLayout(model.dims.frame_stack)
    if model.dims.model_token != layout.model_dim:
        raise ConfigError(
            f"model token width {model.dims.model_token} does not match the "
            f"[a, r, o] layout width {layout.model_dim}")
    s = layout.frame_stack
    if max_steps % s:
        raise ConfigError("max_steps must be divisible by the frame stack")
    B = episodes
    if start_states is None:
        cells = maze.start_cells[rng.child("start").choice(len(maze.start_cells), B)]
        jitter = (rng.child("jitter").uniform((B, 2)) - 0.5) * 0.5
        pos = np.stack([cells[:, 1] + 0.5, cells[:, 0] + 0.5], axis=1) + jitter
        states = np.concatenate([pos, np.zeros((B, 2))], axis=1)
    else:
        states = np.asarray(start_states, dtype=np.float64).copy()

    guide = None
    if guidance_scale > 0.0:
        guide = make_goal_guidance(maze, layout, norm, guidance_scale, mctg_samples)

    z = model.zero_latent(B)
    n_model_steps = max_steps // s
    all_states = np.zeros((B, max_steps + 1, OBS_DIM))
    all_states[:, 0] = states
    all_actions = np.zeros((B, max_steps, ACTION_DIM))
    all_rewards = np.zeros((B, max_steps))

    for m_step in range(n_model_steps):
        h_eff = min(horizon, n_model_steps - m_step)
        matrix = make_matrix(matrix_kind, schedule.levels, h_eff, ddim_steps=ddim_steps)
        plan = sample_sequence(model, schedule, matrix, z, rng.child("plan", m_step),
                               guidance=guide)
        first = plan.values[:, 0]                              # (B, model_dim)
        raw_plan = first.reshape(B, s, RAW_TOKEN_DIM)
        actions_norm = raw_plan[:, :, :ACTION_DIM]
        # executed actions are exactly the planned ones; the environment owns clipping
        actions = actions_norm * norm.std[:ACTION_DIM] + norm.mean[:ACTION_DIM]

        executed = np.zeros((B, s, RAW_TOKEN_DIM))
        for j in range(s):
            states, reward, _ = env_step(maze, states, actions[:, j])
            if not np.isfinite(states).all():
                raise DivergenceError(f"environment state diverged at step {m_step * s + j}")
            env_t = m_step * s + j
            all_states[:, env_t + 1] = states
            all_actions[:, env_t] = actions[:, j]
            all_rewards[:, env_t] = reward
            executed[:, j, :ACTION_DIM] = actions[:, j]
            executed[:, j, ACTION_DIM] = reward
            executed[:, j, ACTION_DIM + REWARD_DIM:] = states
        mean_s, std_s = norm.tiled(s)
        token = (executed.reshape(B, s * RAW_TOKEN_DIM) - mean_s) / std_s
        _, z_next = model.step(z, token, np.zeros(B, dtype=np.int64))
        z = z_next.data

    hit = all_rewards > 0
    success = hit.any(axis=1)
    success_step = np.where(success, hit.argmax(axis=1), -1)
    return EpisodeBatch(all_states, all_actions, all_rewards, success, success_step)
