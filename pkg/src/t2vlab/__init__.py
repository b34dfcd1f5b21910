"""Desk-scale lab for inflating a frozen text-to-image diffusion model into video.

Core surfaces:

    diffusion    noise schedules, q_sample / predict_x0 / mg_omega
    model        the instrumented toy text-to-video network
    losses       simple / reg / trs / dc losses and the negative queue
    sampler      DDIM with piecewise CFG and mitigating-gradient guidance
    noise_prior  iid vs correlated priors and the Jarque-Bera experiment
    data         synthetic moving-shape clips, vocabulary, manifest loader
    training     two-phase trainer (spatial pretrain, frozen inflation)
    checkpoint   bit-exact directory checkpoints
    evaluate     smoothness / h-consistency metrics, attention inspection
    cli          the t2vlab command-line tool
"""

__version__ = "0.1.0"

from .diffusion import NoiseSchedule, make_linear_beta_schedule, mg_omega, predict_x0, q_sample
from .losses import (
    LossBreakdown,
    NegativeQueue,
    dc_loss,
    push_negatives,
    reg_loss,
    simple_loss,
    total_loss,
    trs_loss,
)
from .model import AttentionRecord, ModelConfig, T2VModel, TokenBundle, build_model
from .noise_prior import NoiseSpec, gaussianity_experiment, jarque_bera, sample_noise
from .sampler import SamplerConfig, cfg_eps, cfg_scale_at, ddim_step, mg_guidance, sample_video

__all__ = [
    "__version__",
    "NoiseSchedule",
    "make_linear_beta_schedule",
    "q_sample",
    "predict_x0",
    "mg_omega",
    "ModelConfig",
    "T2VModel",
    "TokenBundle",
    "AttentionRecord",
    "build_model",
    "NegativeQueue",
    "push_negatives",
    "simple_loss",
    "reg_loss",
    "trs_loss",
    "dc_loss",
    "total_loss",
    "LossBreakdown",
    "SamplerConfig",
    "cfg_scale_at",
    "cfg_eps",
    "mg_guidance",
    "ddim_step",
    "sample_video",
    "NoiseSpec",
    "sample_noise",
    "jarque_bera",
    "gaussianity_experiment",
]
