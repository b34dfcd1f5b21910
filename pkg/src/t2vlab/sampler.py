"""DDIM sampling with piecewise classifier-free guidance and mitigating-gradient guidance.

Per denoising step:

    eps = eps_uncond + scale * (eps_cond - eps_uncond)          # CFG
    eps = eps + alpha * concat(0, G)                            # MG guidance
    x   = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev) * eps      # DDIM (eta = 0)

where the MG term shrinks consecutive-frame differences of the predicted
clean video: with D_j = x0_hat^(j) - x0_hat^(j-1), n_j = ||D_j|| per pair,
S = median(n)^2 / log(F-1) per batch item, and omega = sqrt((1-ab_t)/ab_t),

    G_j = 2 * exp(-n_j^2 / S) * D_j / S * omega.

The first frame is never touched; the guidance scale alpha and the weight
omega make the correction strongest near the noise end. The median is the
interpolating one (even pair counts average the middle values), since a
lower-median reading would degenerate to S = 0 whenever half the pairs
coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import NoiseSchedule, mg_omega, predict_x0
from .errors import NumericError, ParameterError, ShapeError
from .model import T2VModel

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    """Inference settings: DDIM steps, piecewise CFG scales, MG guidance strength."""

    steps: int = 25
    cfg_high: float = 12.5
    cfg_low: float = 7.5
    cfg_switch_fraction: float = 0.7
    mg_alpha: float = 40.0
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.cfg_high < 0 or self.cfg_low < 0:
            raise ParameterError("CFG scales must be >= 0")
        if not 0.0 <= self.cfg_switch_fraction <= 1.0:
            raise ParameterError(
                f"cfg_switch_fraction must be in [0, 1], got {self.cfg_switch_fraction}"
            )
        if self.mg_alpha < 0:
            raise ParameterError(f"mg_alpha must be >= 0, got {self.mg_alpha}")


def cfg_scale_at(config: SamplerConfig, t: int, T: int) -> float:
    """cfg_high for t at or above the switch point (near the noise end), cfg_low after."""
    if not 0 <= t < T:
        raise ParameterError(f"timestep {t} outside [0, {T})")
    return config.cfg_high if t >= config.cfg_switch_fraction * T else config.cfg_low


def cfg_eps(
    model,
    x_t: torch.Tensor,
    t: int,
    tokens_cond,
    tokens_uncond,
    scale: float,
) -> torch.Tensor:
    """Classifier-free-guided noise prediction.

    scale 0 and 1 return the unconditional / conditional prediction exactly
    (no arithmetic applied).
    """
    if scale == 0.0:
        eps, _ = model(x_t, t, tokens_uncond, mode="full")
        return eps
    cond, _ = model(x_t, t, tokens_cond, mode="full")
    if scale == 1.0:
        return cond
    uncond, _ = model(x_t, t, tokens_uncond, mode="full")
    return uncond + scale * (cond - uncond)


def mg_guidance(
    eps_pred: torch.Tensor,
    x_t: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    alpha: float,
) -> torch.Tensor:
    """Add the mitigating-gradient term to a noise prediction.

    alpha = 0 and all-identical predicted frames are exact no-ops; F = 2 is
    rejected because S = median^2 / log(F-1) is undefined there.
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return eps_pred
    if eps_pred.shape != x_t.shape:
        raise ShapeError(f"shape mismatch: {tuple(eps_pred.shape)} vs {tuple(x_t.shape)}")
    frames = eps_pred.shape[1]
    if frames < 3:
        raise ParameterError(f"MG guidance needs F >= 3 frames, got {frames}")

    x0 = predict_x0(x_t, eps_pred, t, schedule)
    diffs = x0[:, 1:] - x0[:, :-1]  # (B, F-1, C, H, W)
    norms = diffs.flatten(2).norm(dim=2)  # (B, F-1)
    median = torch.quantile(norms, 0.5, dim=1)  # interpolating median per batch item
    s = median.pow(2) / math.log(frames - 1)  # (B,)

    degenerate = s <= 0
    s_safe = torch.where(degenerate, torch.ones_like(s), s)
    omega = mg_omega(schedule, t)
    coef = 2.0 * torch.exp(-norms.pow(2) / s_safe[:, None]) / s_safe[:, None] * omega
    guidance = coef[:, :, None, None, None] * diffs
    guidance = torch.where(
        degenerate[:, None, None, None, None], torch.zeros_like(guidance), guidance
    )
    if not torch.isfinite(guidance).all():
        raise NumericError("non-finite MG guidance term")
    zero_first = torch.zeros_like(eps_pred[:, :1])
    return eps_pred + alpha * torch.cat([zero_first, guidance], dim=1)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending timestep subsequence with uniform stride over [0, T)."""
    steps = min(steps, T)
    ts = np.unique(np.round(np.linspace(0, T - 1, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


def ddim_step(
    x_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One DDIM update from t to t_prev; t_prev = -1 denotes the clean endpoint (ab = 1)."""
    if t_prev >= t:
        raise ParameterError(f"timesteps must decrease, got t={t} -> t_prev={t_prev}")
    if t_prev < -1:
        raise ParameterError(f"t_prev must be >= -1, got {t_prev}")
    x0 = predict_x0(x_t, eps_pred, t, schedule)
    if t_prev < 0:
        return x0
    ab_prev = schedule.alpha_bar(t_prev)
    if eta == 0.0:
        return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_pred
    ab_t = schedule.alpha_bar(t)
    sigma = (
        eta
        * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t))
        * math.sqrt(1.0 - ab_t / ab_prev)
    )
    noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return (
        math.sqrt(ab_prev) * x0
        + math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_pred
        + sigma * noise
    )


def sample_video(
    model: T2VModel,
    caption: str,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    return_trace: bool = False,
):
    """Generate one clip (1, F, C, H, W) in [-1, 1], deterministic in config.seed.

    The optional trace lists per-step diagnostics: timestep, CFG scale used,
    and the mean |G| magnitude added by MG guidance.
    """
    cfg_model = model.config
    if config.mg_alpha > 0 and cfg_model.F < 3:
        raise ParameterError(f"MG sampling needs F >= 3 frames, model has F={cfg_model.F}")

    gen = torch.Generator().manual_seed(config.seed)
    x = torch.randn(
        (1, cfg_model.F, cfg_model.C, cfg_model.H, cfg_model.W), generator=gen
    )
    tokens_cond = model.generate_frame_tokens(model.encode_caption(caption), "full")
    tokens_uncond = model.generate_frame_tokens(model.encode_caption(""), "full")

    timesteps = ddim_timesteps(schedule.T, config.steps)
    trace = []
    with torch.no_grad():
        for i, t in enumerate(timesteps):
            t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else -1
            scale = cfg_scale_at(config, t, schedule.T)
            eps = cfg_eps(model, x, t, tokens_cond, tokens_uncond, scale)
            if config.mg_alpha > 0:
                guided = mg_guidance(eps, x, t, schedule, config.mg_alpha)
                mean_g = float((guided - eps).abs().mean() / config.mg_alpha)
                eps = guided
            else:
                mean_g = 0.0
            if return_trace:
                trace.append({"t": int(t), "cfg_scale": float(scale), "mean_abs_g": mean_g})
            x = ddim_step(x, eps, t, t_prev, schedule, config.eta, generator=gen)
    video = x.clamp(-1.0, 1.0)
    if return_trace:
        return video, trace
    return video
