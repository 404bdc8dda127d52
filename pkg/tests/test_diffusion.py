import numpy as np
import pytest

from helpers import toy_schedule
from seqdiff import (NoisyToken, RngStream, apply_guidance, build_schedule, convert,
                     ddim_step, ddpm_step, eps_from, forward_diffuse, posterior_params)
from seqdiff.errors import ContractError

S20 = build_schedule("cosine", 20)


def test_forward_diffuse_level_zero_identity():
    x0 = np.array([[1.0, -2.0]])
    out = forward_diffuse(x0, 0, np.ones((1, 2)), S20)
    assert np.array_equal(out.value, x0)


def test_forward_diffuse_quarter_alpha_bar_value():
    # formula oracle: 0.5*2 + sqrt(0.75)*1 = 1.8660254037844386
    s = toy_schedule([0.5, 0.25])
    out = forward_diffuse(np.array([[2.0]]), 2, np.array([[1.0]]), s)
    assert abs(out.value[0, 0] - 1.8660254037844386) < 1e-15


def test_forward_diffuse_terminal_level_is_noise():
    s = build_schedule("linear", 1000)
    x0 = np.full((1, 4), 3.0)
    eps = RngStream(1).normal((1, 4))
    out = forward_diffuse(x0, 1000, eps, s)
    bound = np.sqrt(s.alpha_bar[-1]) * np.linalg.norm(x0) + 1e-9
    assert np.linalg.norm(out.value - eps) <= bound


def test_forward_diffuse_shape_mismatch():
    with pytest.raises(ContractError):
        forward_diffuse(np.ones((2, 3)), 1, np.ones((2, 2)), S20)


def test_forward_marginal_statistics():
    # empirical mean/var of sqrt(ab)*x0 + sqrt(1-ab)*eps at several levels
    rng = RngStream(7)
    x0 = np.array([0.8, -1.4])
    n = 100_000
    for k in (1, 5, 10, 15, 20):
        eps = rng.normal((n, 2))
        vals = forward_diffuse(np.tile(x0, (n, 1)), k, eps, S20).value
        ab = S20.alpha_bar[k]
        se_mean = np.sqrt((1 - ab) / n)
        assert np.all(np.abs(vals.mean(0) - np.sqrt(ab) * x0) < 3 * se_mean + 1e-12)
        se_var = (1 - ab) * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(vals.var(0) - (1 - ab)) < 3 * se_var)


# ----------------------------------------------------------------------
# eps_from

def test_eps_from_round_trip():
    rng = RngStream(3)
    x0 = rng.normal((4, 3))
    eps = rng.normal((4, 3))
    xk = forward_diffuse(x0, 7, eps, S20)
    assert np.max(np.abs(eps_from(x0, xk, S20) - eps)) < 1e-12


def test_eps_from_zero_signal():
    v = np.array([[2.0, -1.0]])
    xk = NoisyToken(v, 9)
    expected = v / np.sqrt(1 - S20.alpha_bar[9])
    assert np.allclose(eps_from(np.zeros((1, 2)), xk, S20), expected)


def test_eps_from_formula_oracle():
    rng = RngStream(5)
    x0 = rng.normal((2, 2))
    value = rng.normal((2, 2))
    k = 10
    got = eps_from(x0, NoisyToken(value, k), S20)
    ab = S20.alpha_bar[k]
    oracle = (value - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
    assert np.max(np.abs(got - oracle)) < 1e-15


def test_eps_from_rejects_clean_level():
    with pytest.raises(ContractError):
        eps_from(np.ones((1, 1)), NoisyToken(np.ones((1, 1)), 0), S20)


# ----------------------------------------------------------------------
# parameterization conversions

def test_convert_identity():
    p = np.array([[0.3, 0.7]])
    out = convert(p, "x0", "x0", NoisyToken(np.zeros((1, 2)), 0), S20)
    assert np.array_equal(out, p)


def test_convert_x0_to_eps_is_inverted_forward():
    rng = RngStream(11)
    x0 = rng.normal((3, 2))
    eps = rng.normal((3, 2))
    xk = forward_diffuse(x0, 12, eps, S20)
    assert np.max(np.abs(convert(x0, "x0", "epsilon", xk, S20) - eps)) < 1e-12


def test_convert_round_trips_all_pairs():
    rng = RngStream(13)
    tags = ("x0", "epsilon", "v")
    for trial in range(100):
        k = int(rng.integers(1, 21))
        xk = NoisyToken(rng.normal((1, 3)), k)
        p = rng.normal((1, 3))
        for a in tags:
            for b in tags:
                back = convert(convert(p, a, b, xk, S20), b, a, xk, S20)
                assert np.max(np.abs(back - p)) < 1e-10


def test_convert_rejects_level_zero_for_noise_targets():
    xk = NoisyToken(np.ones((1, 1)), 0)
    with pytest.raises(ContractError):
        convert(np.ones((1, 1)), "x0", "epsilon", xk, S20)
    with pytest.raises(ContractError):
        convert(np.ones((1, 1)), "v", "x0", xk, S20)


# ----------------------------------------------------------------------
# reverse steps

def test_ddpm_last_step_exact_inversion():
    rng = RngStream(17)
    x0 = rng.normal((5, 2))
    eps = rng.normal((5, 2))
    xk = forward_diffuse(x0, 1, eps, S20)
    out = ddpm_step(xk, eps, np.zeros((5, 2)), S20)
    assert out.k == 0
    assert np.max(np.abs(out.value - x0)) < 1e-12


def test_ddpm_zero_inputs_pure_rescale():
    v = np.array([[1.0, 2.0]])
    out = ddpm_step(NoisyToken(v, 6), np.zeros((1, 2)), np.zeros((1, 2)), S20)
    assert np.allclose(out.value, v / np.sqrt(S20.alpha[6]))


def test_ddpm_random_case_formula_oracle():
    rng = RngStream(19)
    v = rng.normal((2, 3))
    eps_hat = rng.normal((2, 3))
    w = rng.normal((2, 3))
    k = 9
    out = ddpm_step(NoisyToken(v, k), eps_hat, w, S20)
    a, ab, sig = S20.alpha[k], S20.alpha_bar[k], S20.sigma[k]
    oracle = (v - (1 - a) / np.sqrt(1 - ab) * eps_hat) / np.sqrt(a) + sig * w
    assert np.max(np.abs(out.value - oracle)) < 1e-12


def test_ddpm_noise_forced_off_entering_level_zero():
    v = np.ones((1, 2))
    big_w = np.full((1, 2), 100.0)
    out = ddpm_step(NoisyToken(v, 1), np.zeros((1, 2)), big_w, S20)
    no_w = ddpm_step(NoisyToken(v, 1), np.zeros((1, 2)), np.zeros((1, 2)), S20)
    assert np.array_equal(out.value, no_w.value)


def test_ddpm_deterministic_inversion_chain():
    # exact-noise predictor with zero step noise reconstructs x0 from level K
    rng = RngStream(23)
    x0 = rng.normal((4, 2))
    eps = rng.normal((4, 2))
    token = forward_diffuse(x0, 20, eps, S20)
    for k in range(20, 0, -1):
        exact = eps_from(x0, token, S20)
        token = ddpm_step(token, exact, np.zeros((4, 2)), S20)
    assert token.k == 0
    assert np.max(np.abs(token.value - x0)) < 1e-8


def test_ddpm_rejects_level_zero():
    with pytest.raises(ContractError):
        ddpm_step(NoisyToken(np.ones((1, 1)), 0), np.ones((1, 1)), np.ones((1, 1)), S20)


def test_ddim_to_zero_returns_estimate():
    rng = RngStream(29)
    x0_hat = rng.normal((2, 2))
    out = ddim_step(NoisyToken(rng.normal((2, 2)), 8), x0_hat, 0, S20)
    assert np.array_equal(out.value, x0_hat)


def test_ddim_consistency_with_forward():
    rng = RngStream(31)
    x0 = rng.normal((3, 2))
    eps = rng.normal((3, 2))
    xk = forward_diffuse(x0, 15, eps, S20)
    out = ddim_step(xk, x0, 6, S20)
    expected = forward_diffuse(x0, 6, eps, S20)
    assert np.max(np.abs(out.value - expected.value)) < 1e-12


def test_ddim_formula_oracle():
    rng = RngStream(37)
    x0_hat = rng.normal((3, 2))
    xk = NoisyToken(rng.normal((3, 2)), 11)
    out = ddim_step(xk, x0_hat, 10, S20)
    ab_k, ab_n = S20.alpha_bar[11], S20.alpha_bar[10]
    eps_impl = (xk.value - np.sqrt(ab_k) * x0_hat) / np.sqrt(1 - ab_k)
    oracle = np.sqrt(ab_n) * x0_hat + np.sqrt(1 - ab_n) * eps_impl
    assert np.max(np.abs(out.value - oracle)) < 1e-12


def test_sigma_zero_ddpm_is_variance_adjusted_ddim():
    # the deterministic ancestral step is the posterior mean: it matches the
    # jump formula with the noise coefficient shrunk to sqrt(1-ab_prev-sigma^2),
    # not the plain sqrt(1-ab_prev) of the deterministic jump
    rng = RngStream(37)
    x0_hat = rng.normal((3, 2))
    xk = NoisyToken(rng.normal((3, 2)), 11)
    eps_hat = convert(x0_hat, "x0", "epsilon", xk, S20)
    via_ddpm = ddpm_step(xk, eps_hat, np.zeros((3, 2)), S20)
    ab_prev = S20.alpha_bar[10]
    coef = np.sqrt(1 - ab_prev - S20.posterior_var[11])
    adjusted = np.sqrt(ab_prev) * x0_hat + coef * eps_hat
    assert np.max(np.abs(via_ddpm.value - adjusted)) < 1e-10


def test_ddim_single_step_to_zero_equals_sigma_zero_ddpm():
    # at the last step both forms collapse to x0_hat exactly
    rng = RngStream(39)
    x0_hat = rng.normal((3, 2))
    xk = NoisyToken(rng.normal((3, 2)), 1)
    eps_hat = convert(x0_hat, "x0", "epsilon", xk, S20)
    via_ddim = ddim_step(xk, x0_hat, 0, S20)
    via_ddpm = ddpm_step(xk, eps_hat, np.zeros((3, 2)), S20)
    assert np.max(np.abs(via_ddim.value - via_ddpm.value)) < 1e-10


def test_ddim_requires_strictly_lower_target():
    with pytest.raises(ContractError):
        ddim_step(NoisyToken(np.ones((1, 1)), 5), np.ones((1, 1)), 5, S20)


# ----------------------------------------------------------------------
# posterior parameters

def test_posterior_level_one_collapses_to_estimate():
    x0_hat = np.array([[0.4, -0.9]])
    mean, var = posterior_params(NoisyToken(np.ones((1, 2)), 1), x0_hat, S20)
    assert np.max(np.abs(mean - x0_hat)) < 1e-12
    assert np.allclose(var, 0.0)


def test_posterior_degenerate_estimate_equals_value():
    # if x0_hat == x^k and alpha_bar were flat the posterior mean stays at x^k;
    # check the two coefficients always sum compatibly: mean(v, v) = c*(v)
    v = np.array([[1.0]])
    k = 5
    mean, _ = posterior_params(NoisyToken(v, k), v, S20)
    csum = S20.posterior_mean_x[k] + S20.posterior_mean_x0[k]
    assert abs(mean[0, 0] - csum) < 1e-12


def test_posterior_matches_monte_carlo_regression():
    # Bayes oracle: sample the forward chain jointly, bin on x^k, compare the
    # binned mean of x^{k-1} to the closed-form posterior mean
    rng = RngStream(41)
    s = S20
    k = 8
    x0 = 0.7
    n = 400_000
    e1 = rng.normal((n,))
    xm1 = np.sqrt(s.alpha_bar[k - 1]) * x0 + np.sqrt(1 - s.alpha_bar[k - 1]) * e1
    e2 = rng.normal((n,))
    xk = np.sqrt(s.alpha[k]) * xm1 + np.sqrt(s.beta[k]) * e2
    v = float(np.median(xk))
    width = 0.02 * xk.std()
    sel = np.abs(xk - v) < width
    mc_mean = xm1[sel].mean()
    se = xm1[sel].std() / np.sqrt(sel.sum())
    mean, var = posterior_params(NoisyToken(np.array([[v]]), k), np.array([[x0]]), s)
    # bin-center bias is second order; allow 3 standard errors plus a margin
    assert abs(mean[0, 0] - mc_mean) < 3 * se + 0.25 * width
    assert var[0, 0] > 0


def test_posterior_rejects_level_zero():
    with pytest.raises(ContractError):
        posterior_params(NoisyToken(np.ones((1, 1)), 0), np.ones((1, 1)), S20)


# ----------------------------------------------------------------------
# guidance injection

def test_guidance_zero_gradient_identity():
    eps_hat = np.array([[0.5, -0.5]])
    out = apply_guidance(eps_hat, np.zeros((1, 2)), 5, S20)
    assert np.array_equal(out, eps_hat)


def test_guidance_vanishes_as_alpha_bar_to_one():
    s = toy_schedule([1.0 - 1e-12, 0.5])
    eps_hat = np.zeros((1, 1))
    out = apply_guidance(eps_hat, np.ones((1, 1)), 1, s)
    assert abs(out[0, 0]) < 1e-5


def test_guidance_formula():
    rng = RngStream(43)
    eps_hat = rng.normal((2, 2))
    grad = rng.normal((2, 2))
    out = apply_guidance(eps_hat, grad, 9, S20)
    assert np.allclose(out, eps_hat - np.sqrt(1 - S20.alpha_bar[9]) * grad)
