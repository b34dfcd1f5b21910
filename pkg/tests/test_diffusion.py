import math

import numpy as np
import pytest
import torch

from t2vlab.diffusion import (
    check_video,
    make_linear_beta_schedule,
    mg_omega,
    predict_x0,
    q_sample,
)
from t2vlab.errors import ParameterError, ShapeError


def oracle_alpha_bar(T, beta_start, beta_end, t):
    """Hand computation: product of (1 - beta_i) with linearly spaced betas."""
    out = 1.0
    for i in range(t + 1):
        out *= 1.0 - (beta_start + i * (beta_end - beta_start) / (T - 1))
    return out


class TestLinearBetaSchedule:
    def test_reference_endpoints(self):
        s = make_linear_beta_schedule(1000, 0.00085, 0.012)
        assert s.betas[0] == pytest.approx(0.00085, abs=0)
        assert s.betas[999] == pytest.approx(0.012, abs=0)

    def test_constant_beta_cumprod(self):
        s = make_linear_beta_schedule(2, 0.1, 0.1)
        assert s.alpha_bars == pytest.approx([0.9, 0.81])

    def test_alpha_bar_matches_hand_product(self):
        s = make_linear_beta_schedule(10, 0.1, 0.2)
        assert s.alpha_bars[3] == pytest.approx(oracle_alpha_bar(10, 0.1, 0.2, 3), rel=1e-12)

    def test_alpha_bars_strictly_decreasing_in_unit_interval(self):
        s = make_linear_beta_schedule(1000, 0.00085, 0.012)
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))

    def test_alpha_bar_consistency_invariant(self):
        s = make_linear_beta_schedule(100, 0.01, 0.3)
        products = np.cumprod(1.0 - s.betas)
        assert np.allclose(s.alpha_bars, products, rtol=1e-6)

    @pytest.mark.parametrize(
        "args",
        [(1, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0), (10, -0.1, 0.2)],
    )
    def test_invalid_parameters_rejected(self, args):
        with pytest.raises(ParameterError):
            make_linear_beta_schedule(*args)


class TestQSample:
    def test_zero_noise_scales_by_sqrt_alpha_bar(self, t10_schedule):
        x0 = torch.ones(1, 2, 3, 4, 4)
        out = q_sample(x0, 3, torch.zeros_like(x0), t10_schedule)
        assert torch.allclose(out, math.sqrt(t10_schedule.alpha_bars[3]) * x0)

    def test_zero_signal_scales_noise(self, t10_schedule):
        eps = torch.ones(1, 2, 3, 4, 4)
        out = q_sample(torch.zeros_like(eps), 5, eps, t10_schedule)
        expected = math.sqrt(1.0 - t10_schedule.alpha_bars[5])
        assert torch.allclose(out, torch.full_like(eps, expected))

    def test_scalar_oracle_value(self, t10_schedule):
        ab3 = oracle_alpha_bar(10, 0.1, 0.2, 3)
        x0 = torch.ones(1, 1, 1, 1, 1)
        out = q_sample(x0, 3, torch.ones_like(x0), t10_schedule)
        assert out.item() == pytest.approx(math.sqrt(ab3) + math.sqrt(1 - ab3), rel=1e-6)

    def test_shape_mismatch_rejected(self, t10_schedule):
        with pytest.raises(ShapeError):
            q_sample(torch.zeros(1, 2, 3, 4, 4), 0, torch.zeros(1, 2, 3, 4, 5), t10_schedule)

    def test_timestep_out_of_range_rejected(self, t10_schedule):
        x = torch.zeros(1, 2, 3, 4, 4)
        with pytest.raises(ParameterError):
            q_sample(x, 10, x, t10_schedule)
        with pytest.raises(ParameterError):
            q_sample(x, -1, x, t10_schedule)


class TestPredictX0:
    def test_round_trip_identity_every_t(self, t10_schedule):
        gen = torch.Generator().manual_seed(1)
        x0 = torch.randn(2, 3, 3, 5, 5, generator=gen)
        eps = torch.randn(2, 3, 3, 5, 5, generator=gen)
        for t in range(10):
            recovered = predict_x0(q_sample(x0, t, eps, t10_schedule), eps, t, t10_schedule)
            assert torch.allclose(recovered, x0, atol=1e-5)

    def test_zero_eps_rescales(self, t10_schedule):
        x_t = torch.ones(1, 1, 1, 2, 2)
        out = predict_x0(x_t, torch.zeros_like(x_t), 4, t10_schedule)
        assert torch.allclose(out, x_t / math.sqrt(t10_schedule.alpha_bars[4]))

    def test_round_trip_at_default_schedule_extremes(self):
        s = make_linear_beta_schedule(1000, 0.00085, 0.012)
        gen = torch.Generator().manual_seed(2)
        x0 = torch.randn(1, 2, 3, 4, 4, generator=gen)
        eps = torch.randn(1, 2, 3, 4, 4, generator=gen)
        for t in (0, 500, 999):
            recovered = predict_x0(q_sample(x0, t, eps, s), eps, t, s)
            assert torch.allclose(recovered, x0, atol=1e-5)


class TestMgOmega:
    def test_alpha_bar_half_gives_one(self):
        s = make_linear_beta_schedule(2, 0.1, 0.1)
        # alpha_bars = [0.9, 0.81]; construct the 0.5 case analytically instead
        assert math.sqrt((1 - 0.5) / 0.5) == pytest.approx(1.0)
        assert mg_omega(s, 1) == pytest.approx(math.sqrt(0.19 / 0.81))

    def test_known_value(self):
        # alpha_bar = 0.2 -> omega = sqrt(0.8 / 0.2) = 2
        s = make_linear_beta_schedule(2, 0.8, 0.8)
        assert s.alpha_bars[0] == pytest.approx(0.2)
        assert mg_omega(s, 0) == pytest.approx(2.0)

    def test_limit_small_beta(self):
        s = make_linear_beta_schedule(2, 1e-8, 1e-8)
        assert mg_omega(s, 0) == pytest.approx(0.0, abs=1e-3)

    def test_strictly_increasing(self, t10_schedule):
        omegas = [mg_omega(t10_schedule, t) for t in range(10)]
        assert all(b > a for a, b in zip(omegas, omegas[1:]))


class TestForwardKernelConsistency:
    def test_iterated_single_step_matches_closed_form_moments(self, t10_schedule):
        """Iterating x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) eps_t must match
        the closed-form q_sample statistics within Monte-Carlo error."""
        n = 10_000
        x0_value = 0.7
        rng = np.random.default_rng(42)
        x = np.full(n, x0_value)
        for t in range(t10_schedule.T):
            beta = t10_schedule.betas[t]
            x = math.sqrt(1.0 - beta) * x + math.sqrt(beta) * rng.standard_normal(n)
            ab = t10_schedule.alpha_bars[t]
            mean_expected = math.sqrt(ab) * x0_value
            var_expected = 1.0 - ab
            sd = x.std(ddof=1)
            mean_tol = 3.0 * sd / math.sqrt(n)
            var_tol = 3.0 * var_expected * math.sqrt(2.0 / (n - 1))
            assert abs(x.mean() - mean_expected) < mean_tol
            assert abs(x.var(ddof=1) - var_expected) < var_tol


class TestCheckVideo:
    def test_accepts_valid(self):
        check_video(torch.zeros(1, 1, 1, 2, 2))

    def test_rejects_wrong_rank_and_nan(self):
        with pytest.raises(ShapeError):
            check_video(torch.zeros(2, 3, 4, 4))
        bad = torch.zeros(1, 1, 1, 2, 2)
        bad[0, 0, 0, 0, 0] = float("nan")
        with pytest.raises(ShapeError):
            check_video(bad)
