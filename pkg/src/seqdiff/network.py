"""Causal denoising unit: a GRU latent update plus residual-MLP embedding
and prediction heads, conditioned on the token's noise level through a
learned embedding table.

The unit maps (z_prev, x_at_level_k, k) to a prediction in the model's
parameterization and the next latent. The prediction reads z_prev, so the
output at step t never depends on the step-t latent update.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .rng import RngStream


@dataclass(frozen=True)
class Dims:
    token: int
    latent: int
    hidden: int
    frame_stack: int = 1

    @property
    def model_token(self) -> int:
        """Width of one model token after frame stacking."""
        return self.token * self.frame_stack


@dataclass
class ModelParams:
    dims: Dims
    levels: int                      # K; embedding table covers 0..K
    parameterization: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors over the current arrays (one graph's worth)."""
        return {name: Tensor(a) for name, a in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, self.levels, self.parameterization,
                           {k: v.copy() for k, v in self.arrays.items()})


def _uniform(rng: RngStream, shape, fan_in: int) -> np.ndarray:
    # variance 1/fan_in keeps activation scale roughly constant layer to layer
    bound = np.sqrt(3.0 / fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


def _res_block_params(rng, prefix, width, arrays):
    arrays[f"{prefix}.w1"] = _uniform(rng, (width, width), width)
    arrays[f"{prefix}.b1"] = np.zeros(width)
    arrays[f"{prefix}.w2"] = _uniform(rng, (width, width), width)
    arrays[f"{prefix}.b2"] = np.zeros(width)


def init_params(rng: RngStream, dims: Dims, levels: int, parameterization: str) -> ModelParams:
    """Scaled-uniform weights, zero biases, and a (K+1)-row level embedding."""
    d_in = dims.model_token
    h = dims.hidden
    z = dims.latent
    a: dict[str, np.ndarray] = {}
    a["embed.w"] = _uniform(rng, (d_in, h), d_in)
    a["embed.b"] = np.zeros(h)
    _res_block_params(rng, "embed.res0", h, a)
    _res_block_params(rng, "embed.res1", h, a)
    a["kemb"] = _uniform(rng, (levels + 1, h), h)
    for gate in ("r", "u", "c"):
        a[f"gru.wi_{gate}"] = _uniform(rng, (h, z), h)
        a[f"gru.wh_{gate}"] = _uniform(rng, (z, z), z)
        a[f"gru.b_{gate}"] = np.zeros(z)
    head_in = z + 2 * h
    a["head.w_in"] = _uniform(rng, (head_in, h), head_in)
    a["head.b_in"] = np.zeros(h)
    _res_block_params(rng, "head.res0", h, a)
    _res_block_params(rng, "head.res1", h, a)
    a["head.w_out"] = _uniform(rng, (h, d_in), h)
    a["head.b_out"] = np.zeros(d_in)
    return ModelParams(dims, levels, parameterization, a)


def _res_block(p, prefix, h):
    inner = ad.tanh(ad.matmul(h, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"])
    return h + (ad.matmul(inner, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"])


class GruModel:
    """Executable view of ModelParams; reuses one set of leaf tensors so a
    whole unrolled graph shares parameter nodes."""

    def __init__(self, params: ModelParams, tensors: dict[str, Tensor] | None = None):
        self.params = params
        self.p = tensors if tensors is not None else params.tensors()

    @property
    def dims(self) -> Dims:
        return self.params.dims

    @property
    def parameterization(self) -> str:
        return self.params.parameterization

    def zero_latent(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.params.dims.latent))

    def step(self, z_prev, x, k) -> tuple[Tensor, Tensor]:
        """One unit application.

        z_prev: (B, latent) array or Tensor; x: (B, token) array or Tensor;
        k: (B,) int array of noise levels. Returns (prediction, z_next).
        """
        p = self.p
        z_prev = ad.tensor(z_prev)
        x = ad.tensor(x)
        k = np.asarray(k)
        if np.any(k < 0) or np.any(k > self.params.levels):
            raise ContractError(f"noise level out of range 0..{self.params.levels}")

        e_x = ad.matmul(x, p["embed.w"]) + p["embed.b"]
        e_x = _res_block(p, "embed.res0", e_x)
        e_x = _res_block(p, "embed.res1", e_x)
        e_k = ad.take_rows(p["kemb"], k)

        u_in = e_x + e_k
        r = ad.sigmoid(ad.matmul(u_in, p["gru.wi_r"]) + ad.matmul(z_prev, p["gru.wh_r"]) + p["gru.b_r"])
        u = ad.sigmoid(ad.matmul(u_in, p["gru.wi_u"]) + ad.matmul(z_prev, p["gru.wh_u"]) + p["gru.b_u"])
        c = ad.tanh(ad.matmul(u_in, p["gru.wi_c"]) + ad.matmul(r * z_prev, p["gru.wh_c"]) + p["gru.b_c"])
        z_next = z_prev + u * (c - z_prev)

        hin = ad.concat([z_prev, e_x, e_k], axis=1)
        hid = ad.matmul(hin, p["head.w_in"]) + p["head.b_in"]
        hid = _res_block(p, "head.res0", hid)
        hid = _res_block(p, "head.res1", hid)
        pred = ad.matmul(hid, p["head.w_out"]) + p["head.b_out"]
        return pred, z_next

    def step_values(self, z_prev: np.ndarray, x: np.ndarray, k) -> tuple[np.ndarray, np.ndarray]:
        """step() for callers that only need arrays back."""
        pred, z_next = self.step(z_prev, x, k)
        return pred.data, z_next.data


def df_unit(params: ModelParams, z_prev: np.ndarray, x: np.ndarray, k) -> tuple[np.ndarray, np.ndarray]:
    """Single functional application of the unit on plain arrays."""
    return GruModel(params).step_values(z_prev, x, k)


def frame_stack(values: np.ndarray, s: int) -> np.ndarray:
    """Concatenate s consecutive tokens into one; pads the tail by edge
    replication when the length is not divisible by s."""
    if s <= 0:
        raise ContractError("frame stack size must be positive")
    values = np.asarray(values, dtype=np.float64)
    if s == 1:
        return values.copy()
    t = values.shape[0]
    pad = (-t) % s
    if pad:
        values = np.concatenate([values, np.repeat(values[-1:], pad, axis=0)], axis=0)
    return values.reshape(values.shape[0] // s, s * values.shape[1])


def frame_unstack(values: np.ndarray, s: int, length: int | None = None) -> np.ndarray:
    """Invert frame_stack; `length` trims replication padding if given."""
    if s <= 0:
        raise ContractError("frame stack size must be positive")
    values = np.asarray(values, dtype=np.float64)
    if s == 1:
        out = values.copy()
    else:
        out = values.reshape(values.shape[0] * s, values.shape[1] // s)
    return out[:length] if length is not None else out
