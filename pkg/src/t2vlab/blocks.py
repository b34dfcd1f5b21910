"""Building blocks for the inflated text-to-video U-Net.

The inflation-specific modules (temporal attention, the noise mapping
network, the frame-wise token generator and its attention gates, the
bottleneck projection head) are all constructed so that a freshly built
model computes exactly the same function as the per-frame spatial U-Net:

  * every temporal attention layer ends in a zero-initialized projection,
    so it is the identity map at init;
  * the mapping network's two output layers (last conv of the residual
    block and the attention projection) are zero-initialized, so it adds
    an exact zero to its input at init;
  * frame-wise tokens enter cross-attention through a tanh-of-zero gate,
    so their attention weights are exactly zero at init.
"""

from __future__ import annotations

import math

import torch
from einops import rearrange, repeat
from torch import nn


def zero_module(module: nn.Module) -> nn.Module:
    """Zero every parameter of a module in place and return it."""
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer sin/cos embedding of integer positions, shape (n, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    args = positions.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class TimeEmbedding(nn.Module):
    """Sinusoidal timestep features passed through a two-layer MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.net(sinusoidal_embedding(t, self.dim))


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv residual block with an additive timestep projection."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int = 8):
        super().__init__()
        g_in = math.gcd(groups, in_ch)
        g_out = math.gcd(groups, out_ch)
        self.norm1 = nn.GroupNorm(g_in, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(g_out, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    return rearrange(x, "n l (h d) -> n h l d", h=heads)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    return rearrange(x, "n h l d -> n l (h d)")


class SelfCrossBlock(nn.Module):
    """Self-attention + gated cross-attention + feed-forward over spatial tokens.

    Cross-attention keys/values come from the conditioning tokens. When the
    token stream carries extra frame-wise tokens past the first ``n_text``
    slots, their attention weights are a separately softmaxed segment scaled
    by ``tanh(gate)``; with the gate at zero the block is numerically
    identical to attending over the text tokens alone.
    """

    def __init__(self, channels: int, ctx_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.norm1 = nn.LayerNorm(channels)
        self.to_qkv = nn.Linear(channels, 3 * channels, bias=False)
        self.self_out = nn.Linear(channels, channels)
        self.norm2 = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.cross_out = nn.Linear(channels, channels)
        self.norm3 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, 2 * channels), nn.SiLU(), nn.Linear(2 * channels, channels)
        )

    def _self_attention(self, seq: torch.Tensor):
        q, k, v = self.to_qkv(seq).chunk(3, dim=-1)
        q, k, v = (_split_heads(x, self.heads) for x in (q, k, v))
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        return self.self_out(_merge_heads(attn @ v)), attn

    def _cross_attention(self, seq: torch.Tensor, ctx: torch.Tensor, n_text: int, gate):
        q = _split_heads(self.to_q(seq), self.heads)
        k = _split_heads(self.to_k(ctx), self.heads)
        v = _split_heads(self.to_v(ctx), self.heads)
        logits = q @ k.transpose(-1, -2) * self.scale
        if gate is not None and ctx.shape[1] > n_text:
            # Segment-wise softmax: frame-token weights ride a zero-init gate.
            w_text = torch.softmax(logits[..., :n_text], dim=-1)
            w_frame = torch.tanh(gate) * torch.softmax(logits[..., n_text:], dim=-1)
            attn = torch.cat([w_text, w_frame], dim=-1)
        else:
            attn = torch.softmax(logits, dim=-1)
        return self.cross_out(_merge_heads(attn @ v)), attn

    def forward(
        self,
        x: torch.Tensor,
        ctx: torch.Tensor,
        n_text: int,
        gate: torch.Tensor | None = None,
        capture: list | None = None,
    ) -> torch.Tensor:
        n, c, h, w = x.shape
        seq = rearrange(x, "n c h w -> n (h w) c")
        out, self_map = self._self_attention(self.norm1(seq))
        seq = seq + out
        out, cross_map = self._cross_attention(self.norm2(seq), ctx, n_text, gate)
        seq = seq + out
        seq = seq + self.ff(self.norm3(seq))
        if capture is not None:
            capture.append((self_map, cross_map))
        return rearrange(seq, "n (h w) c -> n c h w", h=h, w=w)


class TemporalAttention(nn.Module):
    """Self-attention over the frame axis with a zero-initialized output projection.

    Frame-position encodings are added to queries and keys only, so a clip of
    identical frames stays exactly identical through the layer.
    """

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.norm = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.proj_out = zero_module(nn.Linear(channels, channels))

    def forward(self, x: torch.Tensor, frames: int) -> torch.Tensor:
        n, c, h, w = x.shape
        seq = rearrange(x, "(b f) c h w -> (b h w) f c", f=frames)
        normed = self.norm(seq)
        pos = sinusoidal_embedding(torch.arange(frames), c).to(seq.dtype)[None]
        q = _split_heads(self.to_q(normed + pos), self.heads)
        k = _split_heads(self.to_k(normed + pos), self.heads)
        v = _split_heads(self.to_v(normed), self.heads)
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        out = self.proj_out(_merge_heads(attn @ v))
        seq = seq + out
        return rearrange(seq, "(b h w) f c -> (b f) c h w", h=h, w=w)


class MappingNetwork(nn.Module):
    """Inter-frame noise mapping applied once to the U-Net input.

    A 3-D convolution block over (frame, height, width) followed by temporal
    self-attention; the block's last conv and the attention projection are
    zero-initialized so the whole module is an exact identity at init.
    """

    def __init__(self, channels: int, hidden: int, heads: int = 1):
        super().__init__()
        self.conv1 = nn.Conv3d(channels, hidden, 3, padding=1, padding_mode="replicate")
        self.conv2 = zero_module(
            nn.Conv3d(hidden, channels, 3, padding=1, padding_mode="replicate")
        )
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.norm = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.proj_out = zero_module(nn.Linear(channels, channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, f, c, h, w = x.shape
        u = rearrange(x, "b f c h w -> b c f h w")
        u = self.conv2(torch.nn.functional.silu(self.conv1(u)))
        seq = rearrange(u, "b c f h w -> (b h w) f c")
        normed = self.norm(seq)
        pos = sinusoidal_embedding(torch.arange(f), c).to(seq.dtype)[None]
        q = _split_heads(self.to_q(normed + pos), self.heads)
        k = _split_heads(self.to_k(normed + pos), self.heads)
        v = _split_heads(self.to_v(normed), self.heads)
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        seq = seq + self.proj_out(_merge_heads(attn @ v))
        return rearrange(seq, "(b h w) f c -> b f c h w", h=h, w=w) + x


class FrameTokenGenerator(nn.Module):
    """Maps text tokens (M, D) to K extra conditioning tokens per frame.

    Linear/SiLU layers followed by a 1-D convolution that expands the M token
    slots into F*K frame-wise slots. Also owns one scalar attention gate per
    cross-attention layer in the U-Net; the gates start at zero so the tokens
    have no effect on a freshly built model.
    """

    def __init__(self, token_len: int, token_dim: int, k_tokens: int, frames: int, n_gates: int):
        super().__init__()
        self.token_len = token_len
        self.k_tokens = k_tokens
        self.frames = frames
        self.attn_gates = nn.Parameter(torch.zeros(max(n_gates, 1)))
        if k_tokens > 0:
            self.net = nn.Sequential(
                nn.Linear(token_dim, token_dim),
                nn.SiLU(),
                nn.Conv1d(token_len, k_tokens * frames, kernel_size=1, bias=False),
                nn.SiLU(),
                nn.Linear(token_dim, token_dim),
                nn.SiLU(),
                nn.Linear(token_dim, token_dim),
            )

    def forward(self, text_tokens: torch.Tensor) -> torch.Tensor:
        """(B, M, D) -> (B, F, K, D) frame-wise tokens."""
        out = self.net(text_tokens)
        return rearrange(out, "b (f k) d -> b f k d", f=self.frames)

    def expand(self, text_tokens: torch.Tensor, with_frame_tokens: bool) -> torch.Tensor:
        """Repeat text tokens per frame, optionally concatenating frame-wise tokens."""
        if with_frame_tokens and self.k_tokens > 0:
            frame_tokens = self.forward(text_tokens)
            text = repeat(text_tokens, "b m d -> b f m d", f=self.frames)
            return rearrange(torch.cat([text, frame_tokens], dim=2), "b f m d -> (b f) m d")
        return repeat(text_tokens, "b m d -> (b f) m d", f=self.frames)


class ProjectionHead(nn.Module):
    """Collapses a bottleneck feature map (c, h, w) to a vector of length c.

    One full-spatial-extent conv, then three linear layers with SiLU between.
    Used only while training the contrastive term.
    """

    def __init__(self, channels: int, spatial: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=spatial, bias=False),
            nn.SiLU(),
            nn.Flatten(),
            nn.Linear(channels, channels),
            nn.SiLU(),
            nn.Linear(channels, channels),
            nn.SiLU(),
            nn.Linear(channels, channels),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)
