"""Training loop: independent per-token noise levels, weighted denoising
loss, adaptive-moment updates, per-level bound diagnostics, and checkpoint
persistence.

Every random draw comes from a stream keyed by (seed, purpose, step, ...),
so interrupted runs resume bit-exactly and the loss is invariant to batch
order when each sequence keeps its own stream.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .diffusion import NoisyToken, convert, forward_diffuse
from .errors import CheckpointError, ConfigError, ContractError, DivergenceError
from .network import Dims, GruModel, ModelParams, frame_stack, init_params
from .rng import RngStream
from .schedule import NoiseSchedule, build_schedule, elbo_weights, min_snr_weight, fused_sequence_snr

SNR_MODES = ("plain", "min_snr", "fused")


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 64
    lr: float = 1e-3
    schedule_kind: str = "cosine"
    levels: int = 50
    parameterization: str = "x0"
    snr_weighting: str = "plain"
    snr_cap: float = 5.0
    fused_gamma: float = 0.9
    frame_stack: int = 1
    latent_dim: int = 32
    hidden_dim: int = 64
    seed: int = 0
    log_every: int = 100

    def validate(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ConfigError("steps, batch_size and lr must be positive")
        if self.levels < 2:
            raise ConfigError("need at least 2 noise levels")
        if self.snr_weighting not in SNR_MODES:
            raise ConfigError(f"unknown SNR weighting {self.snr_weighting!r}")
        if self.frame_stack <= 0:
            raise ConfigError("frame_stack must be positive")


# ----------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_update(arrays: dict, grads: dict, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected adaptive-moment update, applied in place."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, a in arrays.items():
        g = grads[name]
        if g.shape != a.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(a)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(a)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        a -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ----------------------------------------------------------------------
# loss pieces

def _targets(x0: np.ndarray, eps: np.ndarray, k: np.ndarray, parameterization: str,
             schedule: NoiseSchedule) -> np.ndarray:
    """Per-token regression targets; k=0 rows always target the clean token,
    since the noise of a clean token is undefined."""
    if parameterization == "x0":
        return x0
    ab = schedule.alpha_bar[k][..., None]
    if parameterization == "epsilon":
        target = eps
    elif parameterization == "v":
        target = np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * x0
    else:
        raise ConfigError(f"unknown parameterization {parameterization!r}")
    return np.where((k == 0)[..., None], x0, target)


def _loss_weights(k: np.ndarray, config: TrainConfig, schedule: NoiseSchedule) -> np.ndarray:
    """(B, T) weights; k=0 rows always get weight 1."""
    if config.snr_weighting == "plain":
        return np.ones(k.shape)
    factors = np.asarray(min_snr_weight(schedule, k, config.snr_cap))
    if config.snr_weighting == "min_snr":
        w = factors
    else:
        w = fused_sequence_snr(factors, config.fused_gamma)
    return np.where(k == 0, 1.0, w)


def _draw_noise(streams, T: int, D: int, levels: int):
    """Per-sequence level and noise draws, each from that sequence's stream."""
    ks, eps = [], []
    for s in streams:
        ks.append(s.integers(0, levels + 1, (T,)))
        eps.append(s.normal((T, D)))
    return np.stack(ks), np.stack(eps)


def sequence_loss(params: ModelParams, tensors: dict, batch: np.ndarray,
                  k: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule,
                  config: TrainConfig):
    """Build the unrolled loss graph for fixed level/noise draws.

    Returns (scalar loss node, per-sequence loss vector node).
    """
    B, T, D = batch.shape
    xk = forward_diffuse(batch, k, eps, schedule).value
    targets = _targets(batch, eps, k, params.parameterization, schedule)
    weights = _loss_weights(k, config, schedule)
    model = GruModel(params, tensors)
    z = ad.tensor(np.zeros((B, params.dims.latent)))
    loss_vec = None
    for t in range(T):
        pred, z = model.step(z, xk[:, t], k[:, t])
        err = ad.tmean(ad.square(pred - targets[:, t]), axis=1)
        term = err * weights[:, t]
        loss_vec = term if loss_vec is None else loss_vec + term
    scalar = ad.tsum(loss_vec) * (1.0 / (B * T))
    return scalar, loss_vec


def training_step(params: ModelParams, opt: AdamState, batch: np.ndarray,
                  streams: list[RngStream], schedule: NoiseSchedule,
                  config: TrainConfig) -> float:
    """One optimizer update on a (B, T, D) batch of clean model tokens.

    For each sequence: draw one level per token uniformly on {0..K}, noise
    the tokens, unroll the unit from a zero latent, and regress the per-token
    prediction onto its target. Returns the order-invariant batch loss.
    """
    if batch.ndim != 3 or batch.shape[0] == 0:
        raise ContractError("training_step expects a non-empty (B, T, D) batch")
    B, T, D = batch.shape
    k, eps = _draw_noise(streams, T, D, schedule.levels)
    tensors = params.tensors()
    scalar, loss_vec = sequence_loss(params, tensors, batch, k, eps, schedule, config)

    # summing sorted per-sequence losses makes the reported value invariant
    # to batch order; the backward seed (1/(B*T) per element) is exact either way
    loss = float(np.sort(loss_vec.data).sum() / (B * T))
    if not np.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss at optimizer step {opt.t + 1}: {loss!r} "
            f"(levels draw range {k.min()}..{k.max()})")

    grads = ad.backward(scalar)
    gdict = {name: grads.wrt(leaf) for name, leaf in tensors.items()}
    adam_update(params.arrays, gdict, opt, config.lr)
    return loss


def elbo_terms(params: ModelParams, values: np.ndarray, k_levels: np.ndarray,
               rng: RngStream, schedule: NoiseSchedule) -> np.ndarray:
    """Per-step weighted bound terms for one sequence at given levels.

    Levels k >= 1 contribute k * c_k * ||x0_hat - x0||^2; level-0 steps
    contribute the reconstruction surrogate ||x0_hat - x0||^2 with weight 1.
    """
    values = np.asarray(values, dtype=np.float64)
    k_levels = np.asarray(k_levels)
    T, D = values.shape
    weights = elbo_weights(schedule)
    model = GruModel(params)
    z = np.zeros((1, params.dims.latent))
    out = np.zeros(T)
    for t in range(T):
        kt = int(k_levels[t])
        eps = rng.normal((1, D))
        xk = forward_diffuse(values[t:t + 1], kt, eps, schedule)
        pred, z_t = model.step(z, xk.value, np.array([kt]))
        z = z_t.data
        if kt >= 1:
            x0_hat = convert(pred.data, params.parameterization, "x0", xk, schedule)
            out[t] = kt * weights[kt] * float(np.sum((x0_hat - values[t]) ** 2))
        else:
            out[t] = float(np.sum((pred.data - values[t]) ** 2))
    return out


# ----------------------------------------------------------------------
# checkpoints

FORMAT_VERSION = 1
_MAGIC = b"SQDF"


@dataclass
class Checkpoint:
    dims: Dims
    levels: int
    schedule_kind: str
    parameterization: str
    step: int
    seed: int
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "dims": asdict(ckpt.dims),
        "levels": ckpt.levels,
        "schedule_kind": ckpt.schedule_kind,
        "parameterization": ckpt.parameterization,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "meta": ckpt.meta,
    }
    meta = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IQ", ckpt.version, len(meta)))
    buf.write(meta)
    names = sorted(ckpt.arrays)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        a = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("corrupt checkpoint: truncated file")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise CheckpointError("corrupt checkpoint: bad magic")
        version, meta_len = struct.unpack("<IQ", _read_exact(fh, 12))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
        try:
            header = json.loads(_read_exact(fh, meta_len))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint: bad metadata ({exc})") from exc
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 8 * size), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64)
        if fh.read(1):
            raise CheckpointError("corrupt checkpoint: trailing bytes")
    return Checkpoint(
        dims=Dims(**header["dims"]),
        levels=header["levels"],
        schedule_kind=header["schedule_kind"],
        parameterization=header["parameterization"],
        step=header["step"],
        seed=header["seed"],
        arrays=arrays,
        meta=header.get("meta", {}),
        version=version,
    )


def make_checkpoint(params: ModelParams, opt: AdamState, config: TrainConfig,
                    step: int, meta: dict | None = None) -> Checkpoint:
    arrays = {f"param.{k}": v for k, v in params.arrays.items()}
    arrays.update({f"adam.m.{k}": v for k, v in opt.m.items()})
    arrays.update({f"adam.v.{k}": v for k, v in opt.v.items()})
    full_meta = {"adam_t": opt.t, "train": asdict(config)}
    if meta:
        full_meta.update(meta)
    return Checkpoint(params.dims, config.levels, config.schedule_kind,
                      params.parameterization, step, config.seed, arrays, full_meta)


def restore_state(ckpt: Checkpoint) -> tuple[ModelParams, AdamState, TrainConfig]:
    params = ModelParams(ckpt.dims, ckpt.levels, ckpt.parameterization, {})
    opt = AdamState(t=ckpt.meta.get("adam_t", 0))
    for name, a in ckpt.arrays.items():
        kind, key = name.split(".", 1)
        if kind == "param":
            params.arrays[key] = a.copy()
        elif kind == "adam":
            which, key = key.split(".", 1)
            getattr(opt, which)[key] = a.copy()
    config = TrainConfig(**ckpt.meta["train"]) if "train" in ckpt.meta else None
    return params, opt, config


# ----------------------------------------------------------------------
# driver

def prepare_sequences(raw: np.ndarray, s: int) -> np.ndarray:
    """Frame-stack every sequence of a (N, T, D) array."""
    if s == 1:
        return np.asarray(raw, dtype=np.float64)
    return np.stack([frame_stack(seq, s) for seq in np.asarray(raw, dtype=np.float64)])


def train_model(dataset: np.ndarray, config: TrainConfig,
                resume: Checkpoint | None = None,
                metrics_hook=None) -> tuple[ModelParams, AdamState, NoiseSchedule, list]:
    """Run the full training loop over a (N, T, D) array of raw sequences.

    Frame stacking is applied here; batches, noise levels and noise are all
    drawn from streams keyed by (seed, step), so a run resumed from a
    checkpoint reproduces the uninterrupted run exactly.
    """
    config.validate()
    data = prepare_sequences(dataset, config.frame_stack)
    n, t_len, d = data.shape
    schedule = build_schedule(config.schedule_kind, config.levels)
    root = RngStream(config.seed)

    if resume is not None:
        params, opt, saved_cfg = restore_state(resume)
        start = resume.step
    else:
        dims = Dims(d // config.frame_stack, config.latent_dim, config.hidden_dim,
                    config.frame_stack)
        params = init_params(root.child("init"), dims, config.levels, config.parameterization)
        opt = AdamState()
        start = 0

    metrics: list[tuple] = []
    for step in range(start, config.steps):
        sel = root.child("batch", step).choice(n, config.batch_size)
        streams = [root.child("noise", step, int(i)) for i in sel]
        loss = training_step(params, opt, data[sel], streams, schedule, config)
        if step % config.log_every == 0 or step == config.steps - 1:
            probe = elbo_terms(params, data[step % n],
                               root.child("elbo", step).integers(0, config.levels + 1, (t_len,)),
                               root.child("elbo-noise", step), schedule)
            metrics.append((step, loss, float(probe.mean())))
            if metrics_hook:
                metrics_hook(step, loss, float(probe.mean()))
    return params, opt, schedule, metrics
