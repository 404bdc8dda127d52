"""Pointwise diffusion kernels: forward noising, prediction-target
conversions, posterior parameters, DDPM/DDIM reverse steps, and guidance
injection into the noise estimate.

All functions are stateless and operate on plain float64 arrays; levels may
be scalars or integer arrays broadcast against a trailing feature axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .schedule import NoiseSchedule

PARAMETERIZATIONS = ("x0", "epsilon", "v")


@dataclass(frozen=True)
class NoisyToken:
    """Token value(s) at explicit noise level(s); level 0 means clean data."""
    value: np.ndarray
    k: np.ndarray | int


@dataclass
class TokenSequence:
    """A sequence of D-dimensional tokens with one noise level per token."""
    values: np.ndarray               # (T, D)
    levels: np.ndarray               # (T,) ints, 0 = clean

    @classmethod
    def clean(cls, values: np.ndarray) -> "TokenSequence":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.zeros(values.shape[0], dtype=np.int64))


def _coef(table: np.ndarray, k) -> np.ndarray:
    """Look up a level table and append a broadcast axis for the feature dim."""
    c = table[np.asarray(k)]
    return c[..., None] if np.ndim(c) else c


def _check_levels(k, lo: int, schedule: NoiseSchedule, what: str) -> None:
    k = np.asarray(k)
    if np.any(k < lo) or np.any(k > schedule.levels):
        raise ContractError(f"{what}: level must lie in {lo}..{schedule.levels}")


def forward_diffuse(x0: np.ndarray, k, eps: np.ndarray, schedule: NoiseSchedule) -> NoisyToken:
    """x^k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ContractError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    _check_levels(k, 0, schedule, "forward_diffuse")
    ab = _coef(schedule.alpha_bar, k)
    value = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return NoisyToken(value, k)


def eps_from(x0: np.ndarray, xk: NoisyToken, schedule: NoiseSchedule) -> np.ndarray:
    """Exact inversion of forward_diffuse: the noise that produced xk from x0."""
    _check_levels(xk.k, 1, schedule, "eps_from")
    ab = _coef(schedule.alpha_bar, xk.k)
    return (xk.value - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


def convert(prediction: np.ndarray, frm: str, to: str, xk: NoisyToken,
            schedule: NoiseSchedule) -> np.ndarray:
    """Exact affine conversion between x0 / epsilon / v predictions at level k."""
    for tag in (frm, to):
        if tag not in PARAMETERIZATIONS:
            raise ContractError(f"unknown parameterization {tag!r}")
    if frm == to:
        return np.asarray(prediction, dtype=np.float64)
    _check_levels(xk.k, 1, schedule, "convert")
    p = np.asarray(prediction, dtype=np.float64)
    ab = _coef(schedule.alpha_bar, xk.k)
    sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
    x = xk.value
    if frm == "x0":
        x0 = p
    elif frm == "epsilon":
        x0 = (x - sb * p) / sa
    else:  # v
        x0 = sa * x - sb * p
    if to == "x0":
        return x0
    eps = (x - sa * x0) / sb
    if to == "epsilon":
        return eps
    return sa * eps - sb * x0  # v


def posterior_params(xk: NoisyToken, x0_hat: np.ndarray,
                     schedule: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of q(x^{k-1} | x^k, x0_hat)."""
    _check_levels(xk.k, 1, schedule, "posterior_params")
    cx = _coef(schedule.posterior_mean_x, xk.k)
    cx0 = _coef(schedule.posterior_mean_x0, xk.k)
    var = _coef(schedule.posterior_var, xk.k)
    return cx * xk.value + cx0 * x0_hat, np.broadcast_to(var, np.shape(xk.value))


def ddpm_step(xk: NoisyToken, eps_hat: np.ndarray, w: np.ndarray,
              schedule: NoiseSchedule) -> NoisyToken:
    """One ancestral reverse step from level k to k-1.

    x^{k-1} = (x^k - (1-alpha_k)/sqrt(1-alpha_bar_k) * eps_hat) / sqrt(alpha_k)
              + sigma_k w, with the noise forced off when k-1 = 0.
    """
    _check_levels(xk.k, 1, schedule, "ddpm_step")
    k = np.asarray(xk.k)
    alpha = _coef(schedule.alpha, k)
    ab = _coef(schedule.alpha_bar, k)
    sigma = _coef(schedule.sigma, k)
    k_b = k[..., None] if k.ndim else k
    noise = np.where(k_b == 1, 0.0, sigma * np.asarray(w, dtype=np.float64))
    value = (xk.value - (1.0 - alpha) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha) + noise
    return NoisyToken(value, k - 1 if k.ndim else int(k) - 1)


def ddim_step(xk: NoisyToken, x0_hat: np.ndarray, k_next,
              schedule: NoiseSchedule) -> NoisyToken:
    """Deterministic jump from level k to k_next < k, preserving implied noise."""
    k = np.asarray(xk.k)
    k_next_arr = np.asarray(k_next)
    if np.any(k_next_arr >= k) or np.any(k_next_arr < 0):
        raise ContractError("ddim_step requires 0 <= k_next < k")
    eps_impl = eps_from(x0_hat, xk, schedule)
    ab_next = _coef(schedule.alpha_bar, k_next_arr)
    value = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_impl
    return NoisyToken(value, k_next)


def apply_guidance(eps_hat: np.ndarray, grad_logc: np.ndarray, k,
                   schedule: NoiseSchedule) -> np.ndarray:
    """Tilt the noise estimate: eps_hat - sqrt(1 - alpha_bar_k) * grad_logc.

    Applied to the estimate before the reverse step; this realizes a
    post-step position nudge of (1-alpha_k)/sqrt(alpha_k) * grad_logc, i.e.
    the same correction as adding the gradient to the partially denoised
    token, folded into the step itself.
    """
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    grad_logc = np.asarray(grad_logc, dtype=np.float64)
    if eps_hat.shape != grad_logc.shape:
        raise ContractError("apply_guidance: shape mismatch")
    ab = _coef(schedule.alpha_bar, k)
    return eps_hat - np.sqrt(1.0 - ab) * grad_logc
