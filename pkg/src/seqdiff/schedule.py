"""Noise-level tables and loss-weighting factors.

A schedule with K levels exposes beta/alpha/alpha_bar/sigma tables indexed
0..K (level 0 is the clean token, so beta[0] and sigma[0] are fixed at 0 and
alpha_bar[0] = 1). Loss weights cover min-SNR capping and the sequence-fused
variant that folds in signal carried by the noisy history.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

SCHEDULE_KINDS = ("linear", "cosine", "sigmoid")

# linear endpoints follow common DDPM practice for K=1000, rescaled to K
_LINEAR_BETA_LO = 1e-4
_LINEAR_BETA_HI = 0.02
_BETA_MAX = 0.999
_BETA_MIN = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    levels: int                       # K
    beta: np.ndarray                  # (K+1,), beta[0] = 0 placeholder
    alpha: np.ndarray                 # (K+1,), alpha[0] = 1
    alpha_bar: np.ndarray             # (K+1,), alpha_bar[0] = 1
    sigma: np.ndarray                 # (K+1,), sqrt of posterior variance, sigma[<=1] = 0
    posterior_mean_x: np.ndarray      # (K+1,), coefficient on x^k
    posterior_mean_x0: np.ndarray     # (K+1,), coefficient on the x0 estimate
    posterior_var: np.ndarray         # (K+1,)

    @property
    def K(self) -> int:
        return self.levels

    def snr(self, k) -> np.ndarray:
        """alpha_bar / (1 - alpha_bar); +inf at k = 0."""
        ab = self.alpha_bar[k]
        with np.errstate(divide="ignore"):
            return np.where(ab >= 1.0, np.inf, ab / (1.0 - ab))


def _beta_from_alpha_bar(alpha_bar_full: np.ndarray) -> np.ndarray:
    beta = 1.0 - alpha_bar_full[1:] / alpha_bar_full[:-1]
    return np.clip(beta, _BETA_MIN, _BETA_MAX)


def build_schedule(kind: str, levels: int) -> NoiseSchedule:
    """Construct the level tables for one of the supported schedule kinds."""
    if levels < 1:
        raise ConfigError(f"schedule needs at least 1 level, got {levels}")
    K = int(levels)
    if kind == "linear":
        scale = 1000.0 / K
        beta = np.linspace(_LINEAR_BETA_LO * scale, _LINEAR_BETA_HI * scale, K)
        beta = np.clip(beta, _BETA_MIN, _BETA_MAX)
    elif kind == "cosine":
        s = 0.008
        t = np.arange(K + 1) / K
        f = np.cos((t + s) / (1.0 + s) * np.pi / 2.0) ** 2
        beta = _beta_from_alpha_bar(f / f[0])
    elif kind == "sigmoid":
        start, end, tau = -3.0, 3.0, 1.0
        t = np.arange(K + 1) / K
        v_start = 1.0 / (1.0 + np.exp(-start / tau))
        v_end = 1.0 / (1.0 + np.exp(-end / tau))
        sig = 1.0 / (1.0 + np.exp(-(t * (end - start) + start) / tau))
        ab = (v_end - sig) / (v_end - v_start)
        beta = _beta_from_alpha_bar(ab / ab[0])
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")

    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    beta = np.concatenate([[0.0], beta])
    alpha = np.concatenate([[1.0], alpha])

    # q(x^{k-1} | x^k, x0) coefficients; the k=1 entries collapse to (0, 1, 0)
    ab_prev = alpha_bar[:-1]
    denom = 1.0 - alpha_bar[1:]
    post_x = np.concatenate([[0.0], (1.0 - ab_prev) * np.sqrt(alpha[1:]) / denom])
    post_x0 = np.concatenate([[0.0], (1.0 - alpha[1:]) * np.sqrt(ab_prev) / denom])
    post_var = np.concatenate([[0.0], beta[1:] * (1.0 - ab_prev) / denom])
    sigma = np.sqrt(post_var)
    sched = NoiseSchedule(kind, K, beta, alpha, alpha_bar, sigma, post_x, post_x0, post_var)
    _validate(sched)
    return sched


def _validate(s: NoiseSchedule) -> None:
    if not np.all((s.beta[1:] > 0) & (s.beta[1:] < 1)):
        raise ConfigError("schedule invariant violated: beta outside (0, 1)")
    if not np.all(np.diff(s.alpha_bar) < 0):
        raise ConfigError("schedule invariant violated: alpha_bar not strictly decreasing")
    if s.levels >= 2 and s.alpha_bar[-1] >= 1e-3:
        raise ConfigError(
            f"alpha_bar[K] = {s.alpha_bar[-1]:.3e} is not near-total masking (< 1e-3)")


@dataclass(frozen=True)
class SnrWeights:
    """Normalized min-SNR factors in [0, 1] for levels 1..K (index 0 unused)."""
    factors: np.ndarray
    cap: float


def min_snr_weight(schedule: NoiseSchedule, k, cap: float):
    """min(SNR(k), cap) / cap for level(s) k; the k=0 entry is defined as 1."""
    if cap <= 0:
        raise ConfigError("min-SNR cap must be positive")
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k > schedule.levels):
        raise ContractError(f"level out of range 0..{schedule.levels}")
    w = np.where(k == 0, 1.0, np.minimum(schedule.snr(k), cap) / cap)
    return w if w.ndim else float(w)


def snr_weight_table(schedule: NoiseSchedule, cap: float) -> SnrWeights:
    ks = np.arange(schedule.levels + 1)
    return SnrWeights(min_snr_weight(schedule, ks, cap), cap)


def fused_sequence_snr(factors: np.ndarray, gamma: float, s_bar_0: float = 0.0) -> np.ndarray:
    """Fold the running history signal into per-token SNR factors.

    The running mean follows s_bar_t = gamma * s_bar_{t-1} + (1-gamma) * s_t
    and the fused factor is s'_t = 1 - (1 - s_t) * (1 - s_bar_{t-1}), treating
    current-token signal and history signal as independent sources.
    """
    factors = np.asarray(factors, dtype=np.float64)
    if not (0.0 < gamma < 1.0):
        raise ContractError("gamma must lie in (0, 1)")
    if np.any(factors < 0) or np.any(factors > 1) or not (0.0 <= s_bar_0 <= 1.0):
        raise ContractError("SNR factors must lie in [0, 1]")
    fused = np.empty_like(factors)
    s_bar = s_bar_0
    for t in range(factors.shape[-1]):
        fused[..., t] = 1.0 - (1.0 - factors[..., t]) * (1.0 - s_bar)
        s_bar = gamma * s_bar + (1.0 - gamma) * factors[..., t]
    return fused


def elbo_weights(schedule: NoiseSchedule) -> np.ndarray:
    """Per-level diagnostic weights c_j on the squared x0-estimate error.

    c_j = (1-alpha_j)^2 * alpha_bar_{j-1} / (2 * s2_j * (1-alpha_bar_j)^2)
    with s2_j = (1-alpha_j) * (1-sqrt(alpha_bar_{j-1})) / (1-alpha_bar_j).
    s2_1 vanishes, which would put infinite weight on the j=1 term, so that
    single entry falls back to the decoder convention s2_1 = beta_1; the
    j=1 algebraic collapse c_1 = 1/(2*s2_1) is preserved exactly.
    """
    K = schedule.levels
    alpha = schedule.alpha[1:]
    ab = schedule.alpha_bar[1:]
    ab_prev = schedule.alpha_bar[:-1]
    s2 = (1.0 - alpha) * (1.0 - np.sqrt(ab_prev)) / (1.0 - ab)
    s2[0] = schedule.beta[1]
    c = (1.0 - alpha) ** 2 * ab_prev / (2.0 * s2 * (1.0 - ab) ** 2)
    return np.concatenate([[0.0], c])  # index by level, c[0] unused
