"""Noise schedules and the closed-form forward diffusion process.

Everything here is a pure function of a `NoiseSchedule`, which holds the
per-timestep tables

    beta_t            noise increment, linear between configured endpoints
    alpha_t = 1 - beta_t
    alpha_bar_t       cumulative product of alpha up to t

The closed-form jump to any timestep is

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps,

and its algebraic inverse recovers the clean-data estimate from a noise
prediction. Tables are kept in float64 so derived scalars are good to well
below the tolerances the rest of the package asserts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta/alpha/alpha_bar tables for T training timesteps."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def alpha_bar(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.alpha_bars[t])

    def check_timestep(self, t: int) -> None:
        if not 0 <= int(t) < self.T:
            raise ParameterError(f"timestep {t} outside [0, {self.T})")


def make_linear_beta_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build a schedule with betas linearly spaced from beta_start to beta_end inclusive."""
    if T < 2:
        raise ParameterError(f"need T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def check_video(x: torch.Tensor, ndim: int = 5) -> None:
    """Validate a video tensor: expected rank, positive dims, finite entries."""
    if x.ndim != ndim:
        raise ShapeError(f"expected rank-{ndim} tensor (B,F,C,H,W), got shape {tuple(x.shape)}")
    if min(x.shape) < 1:
        raise ShapeError(f"all dimensions must be positive, got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ShapeError("tensor contains NaN or Inf entries")


def q_sample(x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Noise x0 to timestep t: sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps."""
    _check_pair(x0, eps)
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def predict_x0(
    x_t: torch.Tensor, eps_pred: torch.Tensor, t: int, schedule: NoiseSchedule
) -> torch.Tensor:
    """Invert q_sample: (x_t - sqrt(1-ab_t)*eps_pred) / sqrt(ab_t)."""
    _check_pair(x_t, eps_pred)
    ab = schedule.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)


def mg_omega(schedule: NoiseSchedule, t: int) -> float:
    """Guidance weight sqrt((1 - ab_t) / ab_t); grows monotonically toward the noise end."""
    ab = schedule.alpha_bar(t)
    return math.sqrt((1.0 - ab) / ab)
