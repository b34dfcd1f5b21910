"""The instrumented toy text-to-video model.

A small spatial U-Net (the frozen text-to-image stand-in, trained in the
pretraining phase) inflated with temporal attention layers, a noise mapping
network, a frame-wise token generator, and a bottleneck projection head.
Exactly four parameter groups are trainable after spatial pretraining:
temporal, mapping, token_gen, projection.

At initialization the inflated model is an exact per-frame copy of the
spatial U-Net; see blocks.py for how each added module achieves that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
from einops import rearrange
from torch import nn

from .blocks import (
    FrameTokenGenerator,
    MappingNetwork,
    ProjectionHead,
    ResBlock,
    SelfCrossBlock,
    TemporalAttention,
    TimeEmbedding,
)
from .data import DEFAULT_VOCAB, Vocabulary, tokenize_caption
from .diffusion import check_video
from .errors import ConfigError, ParameterError, ShapeError

PARAM_GROUPS = ("spatial", "temporal", "mapping", "token_gen", "projection")
TRAINABLE_GROUPS = ("temporal", "mapping", "token_gen", "projection")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for the toy model.

    channels lists the per-level U-Net widths; each level halves the
    resolution and the bottleneck sits one halving below the last level.
    Self/cross attention runs at every level past the first and in the
    bottleneck; the decoder therefore has len(channels)-1 self-attention
    layers, indexed from the bottleneck outward.
    """

    H: int = 32
    W: int = 32
    C: int = 3
    F: int = 8
    M: int = 16
    D: int = 64
    K: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    heads: int = 2
    map_hidden: int = 16
    queue_capacity: int = 512
    vocab: tuple[str, ...] = DEFAULT_VOCAB
    seed: int = 0

    def __post_init__(self):
        if self.F < 1 or self.M < 1 or self.K < 0 or self.C < 1:
            raise ConfigError(f"invalid F/M/K/C: {self.F}/{self.M}/{self.K}/{self.C}")
        if len(self.channels) < 2:
            raise ConfigError("need at least 2 U-Net levels")
        levels = len(self.channels)
        if self.H % (1 << levels) or self.W % (1 << levels):
            raise ConfigError(
                f"H={self.H}, W={self.W} must be divisible by 2^{levels} for {levels} levels"
            )
        for ch in self.channels:
            if ch % self.heads:
                raise ConfigError(f"channel width {ch} not divisible by heads={self.heads}")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")

    @property
    def n_decoder_attn(self) -> int:
        return len(self.channels) - 1

    @property
    def mid_channels(self) -> int:
        return self.channels[-1]

    @property
    def mid_spatial(self) -> int:
        return self.H >> len(self.channels)


@dataclass
class TokenBundle:
    """Per-frame conditioning tokens plus the text tokens they were built from."""

    per_frame: torch.Tensor  # (B*F, M+K, D) in full mode, (B*F, M, D) otherwise
    source_text: torch.Tensor  # (B, M, D)
    mode: str
    n_text: int


@dataclass
class AttentionRecord:
    """Maps and features captured during one forward pass.

    self_attn / cross_attn list the decoder attention layers ordered from the
    bottleneck outward (index 0 is the layer nearest the bottleneck); h is the
    bottleneck feature map per frame.
    """

    self_attn: list[torch.Tensor] = field(default_factory=list)  # (B, F, heads, q, k)
    cross_attn: list[torch.Tensor] = field(default_factory=list)  # (B, F, heads, q, M+K)
    h: Optional[torch.Tensor] = None  # (B, F, c_h, h_h, w_h)


class _Capture:
    def __init__(self):
        self.decoder: list[tuple[torch.Tensor, torch.Tensor]] = []
        self.h: Optional[torch.Tensor] = None


class SpatialUNet(nn.Module):
    """Per-frame denoiser with optional temporal layers threaded between blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chs = cfg.channels
        levels = len(chs)
        self.levels = levels
        time_dim = 4 * chs[0]
        self.time_embed = TimeEmbedding(time_dim)
        self.conv_in = nn.Conv2d(cfg.C, chs[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = chs[0]
        for l, ch in enumerate(chs):
            self.down_res.append(ResBlock(prev, ch, time_dim))
            self.down_attn.append(
                SelfCrossBlock(ch, cfg.D, cfg.heads) if l >= 1 else nn.Identity()
            )
            self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch

        mid = chs[-1]
        self.mid_res1 = ResBlock(mid, mid, time_dim)
        self.mid_attn = SelfCrossBlock(mid, cfg.D, cfg.heads)
        self.mid_res2 = ResBlock(mid, mid, time_dim)

        self.up_conv = nn.ModuleList()
        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        prev = mid
        for l in reversed(range(levels)):
            self.up_conv.append(nn.Conv2d(prev, prev, 3, padding=1))
            self.up_res.append(ResBlock(prev + chs[l], chs[l], time_dim))
            self.up_attn.append(
                SelfCrossBlock(chs[l], cfg.D, cfg.heads) if l >= 1 else nn.Identity()
            )
            prev = chs[l]

        self.out_norm = nn.GroupNorm(min(8, chs[0]), chs[0])
        self.conv_out = nn.Conv2d(chs[0], cfg.C, 3, padding=1)

        # Channel width at each temporal insertion point (encoder, mid, decoder).
        self.temporal_plan = list(chs) + [mid] + [chs[l] for l in reversed(range(levels))]
        # Cross-attention layers in forward order: encoder levels >=1, mid, decoder.
        self.num_cross_attn = 2 * (levels - 1) + 1

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        ctx: torch.Tensor,
        n_text: int,
        gates: Optional[torch.Tensor] = None,
        frames: int = 1,
        temporal: Optional[nn.ModuleList] = None,
        capture: Optional[_Capture] = None,
    ) -> torch.Tensor:
        temb = self.time_embed(t)
        gate_idx = 0
        slot = 0

        def maybe_temporal(h: torch.Tensor) -> torch.Tensor:
            nonlocal slot
            if temporal is not None:
                h = temporal[slot](h, frames)
            slot += 1
            return h

        def gate():
            nonlocal gate_idx
            g = gates[gate_idx] if gates is not None else None
            gate_idx += 1
            return g

        h = self.conv_in(x)
        skips = []
        for l in range(self.levels):
            h = self.down_res[l](h, temb)
            if not isinstance(self.down_attn[l], nn.Identity):
                h = self.down_attn[l](h, ctx, n_text, gate())
            h = maybe_temporal(h)
            skips.append(h)
            h = self.downsample[l](h)

        h = self.mid_res1(h, temb)
        h = self.mid_attn(h, ctx, n_text, gate())
        h = self.mid_res2(h, temb)
        h = maybe_temporal(h)
        if capture is not None:
            capture.h = h

        for i, l in enumerate(reversed(range(self.levels))):
            h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = self.up_conv[i](h)
            h = self.up_res[i](torch.cat([h, skips[l]], dim=1), temb)
            if not isinstance(self.up_attn[i], nn.Identity):
                maps = [] if capture is not None else None
                h = self.up_attn[i](h, ctx, n_text, gate(), capture=maps)
                if capture is not None:
                    capture.decoder.append(maps[0])
            h = maybe_temporal(h)

        return self.conv_out(torch.nn.functional.silu(self.out_norm(h)))


class T2VModel(nn.Module):
    """Frozen-style spatial U-Net plus the trainable inflation modules."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.vocab = Vocabulary(config.vocab)
        self.text_embed = nn.Embedding(len(self.vocab), config.D)
        self.unet = SpatialUNet(config)
        self.temporal = nn.ModuleList(
            TemporalAttention(ch, config.heads) for ch in self.unet.temporal_plan
        )
        self.mapping = MappingNetwork(config.C, config.map_hidden)
        self.token_gen = FrameTokenGenerator(
            config.M, config.D, config.K, config.F, self.unet.num_cross_attn
        )
        self.projection = ProjectionHead(config.mid_channels, config.mid_spatial)
        self.spatial_frozen = False
        self.build_seed = config.seed

    # ---- parameter bookkeeping -------------------------------------------------

    _GROUP_OF = {
        "text_embed": "spatial",
        "unet": "spatial",
        "temporal": "temporal",
        "mapping": "mapping",
        "token_gen": "token_gen",
        "projection": "projection",
    }

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list[tuple[str, nn.Parameter]]] = {g: [] for g in PARAM_GROUPS}
        for name, p in self.named_parameters():
            groups[self._GROUP_OF[name.split(".", 1)[0]]].append((name, p))
        return groups

    def spatial_parameters(self) -> list[nn.Parameter]:
        return [p for _, p in self.param_groups()["spatial"]]

    def trainable_parameters(self) -> list[nn.Parameter]:
        groups = self.param_groups()
        return [p for g in TRAINABLE_GROUPS for _, p in groups[g]]

    def freeze_spatial(self) -> None:
        for p in self.spatial_parameters():
            p.requires_grad_(False)
        self.spatial_frozen = True

    # ---- conditioning ----------------------------------------------------------

    def encode_caption(self, caption: str) -> torch.Tensor:
        """Caption -> (1, M, D) embedded tokens; '' gives the unconditional stream."""
        ids = tokenize_caption(caption, self.vocab, self.config.M)
        return self.text_embed(ids)

    def generate_frame_tokens(self, text_tokens: torch.Tensor, mode: str) -> TokenBundle:
        """Repeat text tokens per frame; in full mode append K generated tokens per frame."""
        if mode not in ("full", "image_only"):
            raise ParameterError(f"unknown mode {mode!r}")
        if text_tokens.ndim != 3 or text_tokens.shape[1:] != (self.config.M, self.config.D):
            raise ShapeError(
                f"text tokens must be (B, {self.config.M}, {self.config.D}), "
                f"got {tuple(text_tokens.shape)}"
            )
        per_frame = self.token_gen.expand(text_tokens, with_frame_tokens=mode == "full")
        return TokenBundle(per_frame, text_tokens, mode, self.config.M)

    # ---- forward passes --------------------------------------------------------

    def mapping_forward(self, x: torch.Tensor) -> torch.Tensor:
        """Run only the noise mapping network; identity at initialization."""
        check_video(x)
        if x.shape[2] != self.config.C:
            raise ShapeError(f"expected {self.config.C} channels, got {x.shape[2]}")
        return self.mapping(x)

    def project_h(self, h: torch.Tensor) -> torch.Tensor:
        """Project one frame's bottleneck features (c, h, w) to a vector of length c."""
        want = (self.config.mid_channels, self.config.mid_spatial, self.config.mid_spatial)
        if tuple(h.shape) != want:
            raise ShapeError(f"expected bottleneck features {want}, got {tuple(h.shape)}")
        return self.projection(h[None])[0]

    def _embed_t(self, t: int, n: int) -> torch.Tensor:
        return torch.full((n,), int(t), dtype=torch.int64)

    def spatial_forward(self, x: torch.Tensor, t: int, tokens: TokenBundle) -> torch.Tensor:
        """Pure per-frame U-Net: no mapping network, no temporal layers."""
        check_video(x)
        if tokens.mode != "image_only":
            raise ParameterError("spatial_forward expects image_only tokens")
        b, f = x.shape[:2]
        frames = rearrange(x, "b f c h w -> (b f) c h w")
        eps = self.unet(frames, self._embed_t(t, b * f), tokens.per_frame, tokens.n_text)
        return rearrange(eps, "(b f) c h w -> b f c h w", f=f)

    def forward(
        self,
        x: torch.Tensor,
        t: int,
        tokens: TokenBundle,
        mode: str = "full",
        capture: bool = False,
    ) -> tuple[torch.Tensor, Optional[AttentionRecord]]:
        """Denoise x_t. Both modes run the mapping network; only full mode runs
        temporal layers and (gated) frame-wise tokens."""
        check_video(x)
        if mode not in ("full", "image_only"):
            raise ParameterError(f"unknown mode {mode!r}")
        if tokens.mode != mode:
            raise ParameterError(f"tokens built for mode {tokens.mode!r}, forward ran {mode!r}")
        b, f = x.shape[:2]
        if tokens.per_frame.shape[0] != b * f:
            raise ShapeError(
                f"token bundle covers {tokens.per_frame.shape[0]} frames, batch has {b * f}"
            )
        mapped = self.mapping(x)
        frames = rearrange(mapped, "b f c h w -> (b f) c h w")
        temporal = self.temporal if mode == "full" else None
        gates = (
            self.token_gen.attn_gates
            if mode == "full" and tokens.per_frame.shape[1] > tokens.n_text
            else None
        )
        cap = _Capture() if capture else None
        eps = self.unet(
            frames,
            self._embed_t(t, b * f),
            tokens.per_frame,
            tokens.n_text,
            gates,
            frames=f,
            temporal=temporal,
            capture=cap,
        )
        eps = rearrange(eps, "(b f) c h w -> b f c h w", f=f)
        record = None
        if capture:
            record = AttentionRecord(
                self_attn=[
                    rearrange(m, "(b f) h q k -> b f h q k", f=f) for m, _ in cap.decoder
                ],
                cross_attn=[
                    rearrange(m, "(b f) h q k -> b f h q k", f=f) for _, m in cap.decoder
                ],
                h=rearrange(cap.h, "(b f) c h w -> b f c h w", f=f),
            )
        return eps, record


def build_model(config: ModelConfig, seed: int | None = None) -> T2VModel:
    """Deterministically initialize a model; same (config, seed) gives identical weights."""
    seed = config.seed if seed is None else seed
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = T2VModel(config)
    model.build_seed = seed
    return model
