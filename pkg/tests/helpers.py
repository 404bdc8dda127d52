"""Shared test utilities: hand-built schedules and closed-form model stand-ins.

The analytic Gaussian model implements the exact noise predictor for 1-D
data x0 ~ N(mu0, s0^2). Plugging it into the samplers makes their output a
closed-form linear-Gaussian chain, so sampling mechanics can be verified
against affine mean/variance recursions without training anything.
"""
from __future__ import annotations

import numpy as np

from seqdiff import autodiff as ad
from seqdiff.network import Dims
from seqdiff.schedule import NoiseSchedule


def toy_schedule(alpha_bar_inner) -> NoiseSchedule:
    """Build a consistent schedule from chosen alpha_bar values (levels 1..K)."""
    ab = np.concatenate([[1.0], np.asarray(alpha_bar_inner, dtype=np.float64)])
    K = len(ab) - 1
    alpha = ab[1:] / ab[:-1]
    beta = 1.0 - alpha
    denom = 1.0 - ab[1:]
    post_x = np.concatenate([[0.0], (1.0 - ab[:-1]) * np.sqrt(alpha) / denom])
    post_x0 = np.concatenate([[0.0], beta * np.sqrt(ab[:-1]) / denom])
    post_var = np.concatenate([[0.0], beta * (1.0 - ab[:-1]) / denom])
    return NoiseSchedule("linear", K, np.concatenate([[0.0], beta]),
                         np.concatenate([[1.0], alpha]), ab,
                         np.sqrt(post_var), post_x, post_x0, post_var)


class AnalyticGaussianModel:
    """Exact epsilon predictor for scalar data x0 ~ N(mu0, s0^2); stateless
    latent. Mirrors the GruModel step() interface."""

    parameterization = "epsilon"

    def __init__(self, schedule: NoiseSchedule, mu0: float, s0: float):
        self.schedule = schedule
        self.mu0 = mu0
        self.s0 = s0
        self.dims = Dims(token=1, latent=1, hidden=1, frame_stack=1)

    def zero_latent(self, batch: int) -> np.ndarray:
        return np.zeros((batch, 1))

    def posterior_mean_x0(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        ab = self.schedule.alpha_bar[k][..., None]
        denom = ab * self.s0 ** 2 + (1.0 - ab)
        return (np.sqrt(ab) * self.s0 ** 2 * x + (1.0 - ab) * self.mu0) / denom

    def step(self, z, x, k):
        z = z.data if isinstance(z, ad.Tensor) else np.asarray(z, dtype=np.float64)
        x = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
        k = np.asarray(k)
        ab = self.schedule.alpha_bar[k][..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            eps = (x - np.sqrt(ab) * self.posterior_mean_x0(x, k)) / np.sqrt(1.0 - ab)
        eps = np.where((k == 0)[..., None], 0.0, eps)
        return ad.Tensor(eps), ad.Tensor(z)

    def step_coefficients(self, k: int) -> tuple[float, float]:
        """eps_hat(x) = a x + b at level k >= 1."""
        ab = float(self.schedule.alpha_bar[k])
        sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
        denom = ab * self.s0 ** 2 + (1.0 - ab)
        a = (1.0 - ab * self.s0 ** 2 / denom) / sb
        b = -sa * (1.0 - ab) * self.mu0 / (denom * sb)
        return a, b

    def ddpm_affine(self, k: int) -> tuple[float, float, float]:
        """Unguided reverse step x' = A x + B + sigma w at level k."""
        s = self.schedule
        a_e, b_e = self.step_coefficients(k)
        c = (1.0 - s.alpha[k]) / np.sqrt(1.0 - s.alpha_bar[k])
        root = np.sqrt(s.alpha[k])
        return (1.0 - c * a_e) / root, -c * b_e / root, float(s.sigma[k])


def unguided_chain_moments(model: AnalyticGaussianModel, sigma_forced_zero=False):
    """Mean/variance of the exact DDPM chain from N(0, 1) at level K down to 0."""
    s = model.schedule
    m, v = 0.0, 1.0
    for k in range(s.levels, 0, -1):
        A, B, sig = model.ddpm_affine(k)
        if sigma_forced_zero:
            sig = 0.0
        m = A * m + B
        v = A * A * v + sig * sig
    return m, v
