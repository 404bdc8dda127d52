"""Grid-schedule sampling: a 2-D matrix of target noise levels drives
row-by-row denoising of a token sequence, with optional energy guidance
whose gradient can be averaged over an ensemble of resampled futures
(Monte Carlo tree guidance).

All entry points are batched: values are (B, T, D), latents (B, latent).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .diffusion import NoisyToken, apply_guidance, convert, ddim_step, ddpm_step
from .errors import ContractError, DivergenceError, MatrixError
from .network import GruModel
from .rng import RngStream
from .schedule import NoiseSchedule

MATRIX_KINDS = ("full_sequence", "autoregressive", "pyramid", "trapezoid")


@dataclass(frozen=True)
class ScheduleMatrix:
    """Target noise levels, one row per denoising pass.

    Row m holds the level of every token after pass m; execution runs
    m = M-1 .. 0 and row 0 is identically zero. An implicit row M pins every
    token at level K before the first pass.
    """
    levels: np.ndarray            # (M, T) int64
    K: int
    ddim: bool = False

    @property
    def M(self) -> int:
        return self.levels.shape[0]

    @property
    def T(self) -> int:
        return self.levels.shape[1]

    def validate(self, initial: np.ndarray | None = None) -> None:
        lv = self.levels
        if lv.ndim != 2 or lv.shape[0] < 1 or lv.shape[1] < 1:
            raise MatrixError("matrix must be a non-empty 2-D grid")
        if np.any(lv < 0) or np.any(lv > self.K):
            raise MatrixError(f"matrix entries must lie in 0..{self.K}")
        if np.any(lv[0] != 0):
            raise MatrixError("final row must be identically zero")
        drops = np.diff(lv, axis=0)  # level[m+1] - level[m] per column
        if np.any(drops < 0):
            raise MatrixError("columns must be nonincreasing from top to bottom")
        top = np.full(self.T, self.K) if initial is None else np.asarray(initial)
        first = top - lv[-1]
        if np.any(first < 0):
            raise MatrixError("top row exceeds the initial levels")
        if not self.ddim and (np.any(drops > 1) or np.any(first > 1)):
            raise MatrixError("level jumps larger than 1 require DDIM mode")

    def to_csv(self) -> str:
        lines = [f"# M={self.M} T={self.T} K={self.K} ddim={int(self.ddim)}"]
        lines += [",".join(str(v) for v in row) for row in self.levels]
        return "\n".join(lines) + "\n"


def _ladder(K: int, ddim_steps: int | None) -> np.ndarray:
    if ddim_steps is None:
        return np.arange(K, -1, -1)
    if ddim_steps < 1:
        raise ContractError("ddim_steps must be >= 1")
    lad = np.unique(np.round(np.linspace(0, K, ddim_steps + 1)).astype(np.int64))[::-1]
    return lad


def make_matrix(kind: str, K: int, T: int, offset: int | None = None,
                ddim_steps: int | None = None) -> ScheduleMatrix:
    """Build one of the named level grids.

    full_sequence denoises all tokens in lockstep; autoregressive finishes
    each token before starting the next; pyramid staggers columns by one row
    so the far future stays noisier; trapezoid(offset) generalizes these,
    with column t starting its descent offset*t passes later.
    """
    if K < 1 or T < 1:
        raise ContractError("make_matrix requires K >= 1 and T >= 1")
    lad = _ladder(K, ddim_steps)
    stages = len(lad) - 1
    if kind == "full_sequence":
        off = 0
    elif kind == "pyramid":
        off = 1
    elif kind == "autoregressive":
        off = stages
    elif kind == "trapezoid":
        if offset is None or offset < 0:
            raise ContractError("trapezoid needs a nonnegative offset")
        off = int(offset)
    else:
        raise ContractError(f"unknown matrix kind {kind!r}; expected one of {MATRIX_KINDS}")
    rows = off * (T - 1) + stages + 1
    r = np.arange(rows)[:, None]
    c = np.arange(T)[None, :]
    stage = np.clip(r - off * c, 0, stages)
    grid = lad[stage][::-1].copy()  # row 0 = final, all zeros
    matrix = ScheduleMatrix(grid, K, ddim=ddim_steps is not None)
    matrix.validate()
    return matrix


@dataclass
class GuidanceSpec:
    """Energy guidance: log-c gradient scaled by `scale`, averaged over `n`
    resampled futures per pass. The energy sees the tokens' current noise
    levels so it can smooth itself if it wants to."""
    energy: object                 # callable: (Tensor (B, T, D), levels (T,)) -> scalar Tensor
    scale: float = 1.0
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("guidance sample count must be >= 1")
        if self.scale < 0:
            raise ContractError("guidance scale must be nonnegative")


@dataclass
class SampleResult:
    values: np.ndarray             # (B, T, D), all tokens clean
    level_trace: np.ndarray        # (M+1, T): initial levels then one row per pass


def mctg_gradient(model: GruModel, schedule: NoiseSchedule, z0: np.ndarray,
                  values: np.ndarray, levels: np.ndarray, energy, n: int,
                  rng: RngStream) -> np.ndarray:
    """Mean energy gradient over n resampled realizations of the noisy tokens.

    Each branch sweeps the sequence once: clean tokens are kept and condition
    the branch latent; a token at level 0 < k < K is resampled by one reverse
    step followed by one forward step back to k; level-K tokens are redrawn
    as fresh noise. The returned gradient is the branch average, evaluated at
    each branch's own realization.
    """
    if n < 1:
        raise ContractError("mctg_gradient requires n >= 1")
    B, T, D = values.shape
    xb = np.repeat(values, n, axis=0)
    z = np.repeat(z0, n, axis=0)
    nB = n * B
    K = schedule.levels
    for t in range(T):
        k = int(levels[t])
        kvec = np.full(nB, k)
        if k == 0:
            _, z_t = model.step(z, xb[:, t], kvec)
            z = z_t.data
            continue
        pred, _ = model.step(z, xb[:, t], kvec)
        if k == K:
            x_new = rng.normal((nB, D))
        else:
            token = NoisyToken(xb[:, t], kvec)
            eps_hat = convert(pred.data, model.parameterization, "epsilon", token, schedule)
            down = ddpm_step(token, eps_hat, rng.normal((nB, D)), schedule)
            beta = schedule.beta[k]
            x_new = np.sqrt(1.0 - beta) * down.value + np.sqrt(beta) * rng.normal((nB, D))
        xb[:, t] = x_new
        _, z_t = model.step(z, x_new, kvec)
        z = z_t.data
    leaf = ad.Tensor(xb)
    total = energy(leaf, np.asarray(levels))
    grad = ad.backward(total).wrt(leaf)
    return grad.reshape(B, n, T, D).mean(axis=1)


def sample_sequence(model: GruModel, schedule: NoiseSchedule, matrix: ScheduleMatrix,
                    z0: np.ndarray, rng: RngStream,
                    guidance: GuidanceSpec | None = None,
                    x_init: np.ndarray | None = None,
                    k_init: np.ndarray | None = None) -> SampleResult:
    """Denoise a (B, T, D) grid of tokens along the matrix rows.

    Tokens start as white noise at level K unless (x_init, k_init) pin some
    columns to given values at lower levels (conditioning). Within each pass
    the latent is recomputed left to right from the tokens at their pre-pass
    levels and carried forward directly; each token then steps from its
    pre-pass level to the row's target. Guidance, when enabled, is computed
    once per pass over the whole partial sequence and folded into the noise
    estimate of every stepping token.
    """
    if matrix.K != schedule.levels:
        raise ContractError(
            f"matrix K={matrix.K} does not match schedule K={schedule.levels}")
    z = np.asarray(z0, dtype=np.float64)
    if z.ndim != 2:
        raise ContractError("z0 must be (batch, latent)")
    B = z.shape[0]
    T = matrix.T
    D = model.dims.model_token
    K = schedule.levels

    current = np.full(T, K, dtype=np.int64) if k_init is None else np.asarray(k_init, dtype=np.int64).copy()
    matrix.validate(initial=current)

    # draws are keyed by (purpose, row-from-top, column): a token's randomness
    # never depends on the grid width, so extending T leaves a shared prefix
    # of an autoregressive grid bit-identical
    x = np.empty((B, T, D))
    for t in range(T):
        x[:, t] = schedule.sigma[K] * rng.child("init", t).normal((B, D))
    if x_init is not None:
        x = np.broadcast_to(np.asarray(x_init, dtype=np.float64), x.shape).copy()
    elif np.any(current < K):
        raise ContractError("k_init below K requires x_init values")

    trace = [current.copy()]
    guide_scale = guidance.scale if guidance is not None else 0.0
    for m in range(matrix.M - 1, -1, -1):
        row = matrix.levels[m]
        r = matrix.M - 1 - m
        g = None
        if guidance is not None and guide_scale > 0.0:
            g = guide_scale * mctg_gradient(model, schedule, z0, x, current,
                                            guidance.energy, guidance.n,
                                            rng.child("guide", r))
        z = np.asarray(z0, dtype=np.float64)
        for t in range(T):
            k_cur = int(current[t])
            k_tgt = int(row[t])
            if k_cur == K and k_tgt < K:
                # the initial draw is a placeholder; a token leaving level K
                # starts from an exact white-noise sample
                x[:, t] = rng.child("fresh", r, t).normal((B, D))
            pred, z_next = model.step(z, x[:, t], np.full(B, k_cur))
            if k_tgt < k_cur:
                token = NoisyToken(x[:, t], np.full(B, k_cur))
                eps_hat = convert(pred.data, model.parameterization, "epsilon", token, schedule)
                if g is not None:
                    eps_hat = apply_guidance(eps_hat, g[:, t], np.full(B, k_cur), schedule)
                if matrix.ddim:
                    x0_hat = convert(eps_hat, "epsilon", "x0", token, schedule)
                    stepped = ddim_step(token, x0_hat, np.full(B, k_tgt), schedule)
                else:
                    stepped = ddpm_step(token, eps_hat, rng.child("w", r, t).normal((B, D)),
                                        schedule)
                x[:, t] = stepped.value
            # k_tgt == k_cur: copy-over (clean tokens pass through; a token
            # held at K stays the same white noise)
            z = z_next.data
            current[t] = k_tgt
        if not np.isfinite(x).all():
            bad = np.argwhere(~np.isfinite(x).all(axis=(0, 2)))
            raise DivergenceError(f"non-finite tokens after pass m={m} at columns {bad.ravel().tolist()}")
        trace.append(current.copy())
    return SampleResult(x, np.stack(trace))


def default_k_small(K: int) -> int:
    """Stabilization level: K/50 rounded up."""
    return max(1, math.ceil(K / 50))


def rollout(model: GruModel, schedule: NoiseSchedule, z0: np.ndarray, t_total: int,
            rng: RngStream, carry_level: int, ddim_steps: int | None = None) -> np.ndarray:
    """Autoregressive generation: fully denoise one token at a time via
    next-token diffusion, then update the carried latent from the clean value
    labeled with `carry_level` (0 reproduces naive autoregression)."""
    z = np.asarray(z0, dtype=np.float64)
    B = z.shape[0]
    D = model.dims.model_token
    matrix = make_matrix("full_sequence", schedule.levels, 1, ddim_steps=ddim_steps)
    out = np.zeros((B, t_total, D))
    for t in range(t_total):
        res = sample_sequence(model, schedule, matrix, z, rng.child("token", t))
        out[:, t] = res.values[:, 0]
        _, z_next = model.step(z, out[:, t], np.full(B, carry_level))
        z = z_next.data
    return out


def stabilized_rollout(model: GruModel, schedule: NoiseSchedule, z0: np.ndarray,
                       t_total: int, k_small: int, rng: RngStream,
                       ddim_steps: int | None = None) -> np.ndarray:
    """Long rollout with the carried latent derived from tokens labeled
    slightly noisy (0 < k_small << K), which keeps generation in-distribution
    far past the training horizon."""
    if not 0 < k_small < schedule.levels:
        raise ContractError("k_small must lie strictly between 0 and K")
    return rollout(model, schedule, z0, t_total, rng, k_small, ddim_steps)


def receding_horizon_generate(model: GruModel, schedule: NoiseSchedule, t_total: int,
                              horizon: int, rng: RngStream,
                              guidance: GuidanceSpec | None = None,
                              matrix_kind: str = "pyramid",
                              ddim_steps: int | None = None,
                              memory: int | None = None,
                              x_first: np.ndarray | None = None,
                              batch: int = 1) -> np.ndarray:
    """Emit tokens one at a time by planning a lookahead window and keeping
    only its first token.

    `memory` controls how much history conditions each replan: None carries
    the latent over all emitted tokens, while memory = w rebuilds it from
    only the last w tokens, which deliberately forgets the far past and lets
    guidance stitch sub-trajectories together. `x_first`, when given, pins
    the first emitted token instead of sampling it.
    """
    if horizon < 1:
        raise ContractError("planning horizon must be >= 1")
    B = batch
    D = model.dims.model_token
    out = np.zeros((B, t_total, D))
    z = model.zero_latent(B)
    zeros = np.zeros(B, dtype=np.int64)
    for t in range(t_total):
        if t == 0 and x_first is not None:
            out[:, 0] = np.asarray(x_first, dtype=np.float64)
        else:
            h_eff = min(horizon, t_total - t)
            matrix = make_matrix(matrix_kind, schedule.levels, h_eff, ddim_steps=ddim_steps)
            plan = sample_sequence(model, schedule, matrix, z, rng.child("plan", t),
                                   guidance=guidance)
            out[:, t] = plan.values[:, 0]
        if memory is None:
            _, z_next = model.step(z, out[:, t], zeros)
            z = z_next.data
        else:
            z = model.zero_latent(B)
            for s in range(max(0, t - memory + 1), t + 1):
                _, z_next = model.step(z, out[:, s], zeros)
                z = z_next.data
    return out
