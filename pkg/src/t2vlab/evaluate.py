"""Desk-scale evaluation: frame smoothness, bottleneck consistency, attention inspection.

These stand in for large pretrained-metric suites: smoothness is the mean
consecutive-frame L2 difference (normalized by element count), and
h-consistency is the mean pairwise cosine similarity of per-frame bottleneck
features after noising the clip to a probe timestep with noise shared across
frames (so a clip of identical frames scores exactly 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .diffusion import NoiseSchedule, q_sample
from .errors import ParameterError, ShapeError
from .model import T2VModel
from .sampler import SamplerConfig, sample_video


def smoothness_metric(video: torch.Tensor) -> float:
    """Mean over consecutive frame pairs of ||f_j - f_{j-1}||_2 / elements-per-frame."""
    if video.ndim != 4:
        raise ShapeError(f"expected one clip (F, C, H, W), got {tuple(video.shape)}")
    if video.shape[0] < 2:
        raise ParameterError("smoothness needs at least 2 frames")
    diffs = video[1:] - video[:-1]
    per_pair = diffs.flatten(1).norm(dim=1) / diffs[0].numel()
    return float(per_pair.mean())


def h_consistency_metric(
    model: T2VModel,
    video: torch.Tensor,
    t_probe: int,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> float:
    """Mean pairwise cosine similarity of per-frame bottleneck features at t_probe."""
    if video.ndim != 4:
        raise ShapeError(f"expected one clip (F, C, H, W), got {tuple(video.shape)}")
    x = video[None]
    gen = torch.Generator().manual_seed(seed)
    shared = torch.randn((1, 1, *video.shape[1:]), generator=gen)
    x_t = q_sample(x, t_probe, shared.expand_as(x), schedule)
    tokens = model.generate_frame_tokens(model.encode_caption(""), "full")
    with torch.no_grad():
        _, record = model(x_t, t_probe, tokens, mode="full", capture=True)
    flat = record.h[0].flatten(1)
    flat = flat / flat.norm(dim=1, keepdim=True)
    sims = flat @ flat.T
    n = flat.shape[0]
    iu = torch.triu_indices(n, n, offset=1)
    return float(sims[iu[0], iu[1]].mean())


@dataclass(frozen=True)
class VideoEval:
    prompt: str
    seed: int
    smoothness: float
    h_consistency: float


@dataclass(frozen=True)
class EvalReport:
    smoothness: float
    h_consistency: float
    per_video: list[VideoEval]

    def report(self) -> dict:
        return {
            "schema_version": 1,
            "smoothness": self.smoothness,
            "h_consistency": self.h_consistency,
            "per_video": [vars(v) for v in self.per_video],
        }


def evaluate_model(
    model: T2VModel,
    schedule: NoiseSchedule,
    sampler_cfg: SamplerConfig,
    prompts: list[str],
    t_probe: int | None = None,
    base_seed: int = 0,
) -> EvalReport:
    """Sample one clip per prompt (per-prompt seeds) and score both metrics."""
    if not prompts:
        raise ParameterError("need at least one prompt")
    if t_probe is None:
        t_probe = schedule.T // 4
    per_video = []
    for i, prompt in enumerate(prompts):
        seed = base_seed + i
        cfg = replace(sampler_cfg, seed=seed)
        clip = sample_video(model, prompt, cfg, schedule)[0]
        per_video.append(
            VideoEval(
                prompt=prompt,
                seed=seed,
                smoothness=smoothness_metric(clip),
                h_consistency=h_consistency_metric(model, clip, t_probe, schedule, seed=seed),
            )
        )
    mean = lambda xs: float(sum(xs) / len(xs))
    return EvalReport(
        smoothness=mean([v.smoothness for v in per_video]),
        h_consistency=mean([v.h_consistency for v in per_video]),
        per_video=per_video,
    )


@dataclass(frozen=True)
class AttentionInspection:
    """Cross-attention heatmaps of the output-nearest decoder layer, per token family.

    frame_token_maps carry the gated attention weights as captured;
    frame_token_patterns renormalize each query's frame-token segment to sum
    to one, which removes the (small, slowly trained) gate magnitude and
    leaves the spatial pattern each token attends to.
    """

    caption_words: list[str]
    frame_token_maps: torch.Tensor  # (K, F, h, w), gated weights
    frame_token_patterns: torch.Tensor  # (K, F, h, w), gate-normalized
    text_token_maps: torch.Tensor  # (n_words, F, h, w)
    framewise_variance: float
    framewise_pattern_variance: float
    text_variance: float

    def report(self) -> dict:
        return {
            "schema_version": 1,
            "caption_words": self.caption_words,
            "framewise_variance": self.framewise_variance,
            "framewise_pattern_variance": self.framewise_pattern_variance,
            "text_variance": self.text_variance,
        }


def _per_frame_variance(maps: torch.Tensor) -> float:
    # maps: (tokens, F, h, w); variance across frames, averaged over pixels and tokens.
    return float(maps.var(dim=1, unbiased=False).mean())


def attention_inspection(
    model: T2VModel,
    schedule: NoiseSchedule,
    caption: str,
    sampler_cfg: SamplerConfig,
    t_probe: int | None = None,
    seed: int = 0,
) -> AttentionInspection:
    """Sample a clip for the caption, re-noise it, and read the cross-attention maps."""
    words = caption.lower().split()
    if not words:
        raise ParameterError("caption must be non-empty for attention inspection")
    if model.config.K < 1:
        raise ParameterError("model has no frame-wise tokens (K = 0)")
    if t_probe is None:
        t_probe = schedule.T // 4
    cfg = replace(sampler_cfg, seed=seed)
    clip = sample_video(model, caption, cfg, schedule)
    gen = torch.Generator().manual_seed(seed + 1)
    eps = torch.randn(clip.shape, generator=gen)
    x_t = q_sample(clip, t_probe, eps, schedule)
    tokens = model.generate_frame_tokens(model.encode_caption(caption), "full")
    with torch.no_grad():
        _, record = model(x_t, t_probe, tokens, mode="full", capture=True)
    maps = record.cross_attn[-1][0].mean(dim=1)  # (F, q, M+K), heads averaged
    f, q, _ = maps.shape
    side = int(q**0.5)
    maps = maps.reshape(f, side, side, -1).permute(3, 0, 1, 2)  # (M+K, F, h, w)
    m = model.config.M
    frame_maps = maps[m:]
    text_maps = maps[: len(words)]
    # Per query, the frame-token segment sums to tanh(gate); dividing it out
    # (when the gate has moved off zero) leaves a proper distribution over K.
    sums = frame_maps.sum(dim=0, keepdim=True)
    patterns = torch.where(
        sums.abs() > 1e-12, frame_maps / sums, torch.zeros_like(frame_maps)
    )
    return AttentionInspection(
        caption_words=words,
        frame_token_maps=frame_maps,
        frame_token_patterns=patterns,
        text_token_maps=text_maps,
        framewise_variance=_per_frame_variance(frame_maps),
        framewise_pattern_variance=_per_frame_variance(patterns),
        text_variance=_per_frame_variance(text_maps),
    )
