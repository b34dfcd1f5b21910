"""Training losses and the negative-embedding queue.

Four terms feed the combined objective:

    simple   mean squared error between predicted and true noise
    reg      (1 - t/T) * MSE between the full-path and image-path predictions
    trs      sum over decoder layers i and frame pairs j of (i/N) *
             mean |A_i^(j) - A_i^(j-1)| on captured self-attention maps
    dc       decoupled contrastive loss on projected bottleneck features:
             -<z1, z2>/tau + logsumexp over queue negatives only

All reductions are means over elements so magnitudes are resolution
independent; contrastive embeddings are L2-normalized before any inner
product so tau acts on cosine similarities.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import torch

from .errors import NumericError, ParameterError, ShapeError, StateError
from .model import AttentionRecord


class NegativeQueue:
    """Fixed-capacity FIFO of unit-normalized embeddings tagged with source-video ids."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ParameterError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: deque[tuple[torch.Tensor, int]] = deque()

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, vectors: torch.Tensor, video_ids) -> None:
        """Normalize and append vectors (n, d) as stop-gradient constants; evict oldest-first."""
        if vectors.ndim == 1:
            vectors = vectors[None]
        if len(video_ids) != vectors.shape[0]:
            raise ShapeError(f"{vectors.shape[0]} vectors but {len(video_ids)} video ids")
        for vec, vid in zip(vectors.detach(), video_ids):
            norm = vec.norm()
            if norm == 0 or not torch.isfinite(norm):
                raise NumericError("cannot enqueue a zero-norm or non-finite vector")
            self._entries.append((vec / norm, int(vid)))
            if len(self._entries) > self.capacity:
                self._entries.popleft()

    def entries(self) -> torch.Tensor:
        """Stacked (n, d) matrix of stored negatives, oldest first."""
        if not self._entries:
            raise StateError("negative queue is empty")
        return torch.stack([v for v, _ in self._entries])

    def video_ids(self) -> list[int]:
        return [vid for _, vid in self._entries]

    def snapshot(self, exclude_video: int | None = None) -> "NegativeQueue":
        """Shallow copy, optionally dropping entries from one source video."""
        out = NegativeQueue(self.capacity)
        for vec, vid in self._entries:
            if exclude_video is None or vid != exclude_video:
                out._entries.append((vec, vid))
        return out

    @classmethod
    def restore(cls, capacity: int, entries: torch.Tensor, video_ids) -> "NegativeQueue":
        """Rebuild a queue from stored (already normalized) entries, bit-exact."""
        out = cls(capacity)
        for i in range(entries.shape[0]):
            out._entries.append((entries[i], int(video_ids[i])))
        return out


def push_negatives(queue: NegativeQueue, vectors: torch.Tensor, video_ids) -> NegativeQueue:
    """Append this step's positive pair embeddings as future negatives."""
    queue.push(vectors, video_ids)
    return queue


def simple_loss(eps_pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    if eps_pred.shape != eps.shape:
        raise ShapeError(f"shape mismatch: {tuple(eps_pred.shape)} vs {tuple(eps.shape)}")
    return (eps_pred - eps).pow(2).mean()


def reg_loss(eps_full: torch.Tensor, eps_image: torch.Tensor, t: int, T: int) -> torch.Tensor:
    """(1 - t/T)-weighted MSE between the video-path and image-path predictions.

    Gradients flow through both operands; the weight vanishes toward the
    noise end where the per-frame model is expected to disagree.
    """
    if eps_full.shape != eps_image.shape:
        raise ShapeError(f"shape mismatch: {tuple(eps_full.shape)} vs {tuple(eps_image.shape)}")
    if not 0 <= t <= T:
        raise ParameterError(f"timestep {t} outside [0, {T}]")
    lam = 1.0 - t / T
    return lam * (eps_full - eps_image).pow(2).mean()


def trs_loss(record: AttentionRecord) -> torch.Tensor:
    """Penalize consecutive-frame differences of decoder self-attention maps.

    Layer i (1 = nearest the bottleneck, N = nearest the output) is weighted
    i/N, emphasizing output-side layers.
    """
    if record is None or not record.self_attn:
        raise StateError("record has no captured decoder self-attention maps")
    n_layers = len(record.self_attn)
    total = None
    for idx, maps in enumerate(record.self_attn):
        if maps.shape[1] < 2:
            raise ParameterError("TRS loss needs at least 2 frames")
        lam = (idx + 1) / n_layers
        diff = (maps[:, 1:] - maps[:, :-1]).abs()
        # Sum over frame pairs of the per-pair mean absolute difference.
        term = lam * diff.mean(dim=(0, 2, 3, 4)).sum()
        total = term if total is None else total + term
    return total


def dc_loss(z1: torch.Tensor, z2: torch.Tensor, queue: NegativeQueue, tau: float) -> torch.Tensor:
    """Decoupled contrastive loss: the positive pair is excluded from the denominator."""
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if z1.shape != z2.shape or z1.ndim != 1:
        raise ShapeError(f"expected matching vectors, got {tuple(z1.shape)} vs {tuple(z2.shape)}")
    negatives = queue.entries()  # raises StateError when empty
    if negatives.shape[1] != z1.shape[0]:
        raise ShapeError(
            f"queue entries have dim {negatives.shape[1]}, positives have {z1.shape[0]}"
        )
    n1, n2 = z1.norm(), z2.norm()
    if n1 == 0 or n2 == 0:
        raise NumericError("zero-norm embedding in dc_loss")
    z1n, z2n = z1 / n1, z2 / n2
    positive = torch.dot(z1n, z2n) / tau
    return -positive + torch.logsumexp(negatives @ z1n / tau, dim=0)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one training step plus their weighted total."""

    simple: float
    reg: float
    trs: float
    dc: float
    total: float
    weights: tuple[float, float, float]  # (lambda_trs, lambda_reg, lambda_dc)

    def as_dict(self) -> dict:
        return {
            "simple": self.simple,
            "reg": self.reg,
            "trs": self.trs,
            "dc": self.dc,
            "total": self.total,
        }


def total_loss(
    parts: tuple[float, float, float, float],
    weights: tuple[float, float, float] = (0.1, 0.1, 0.1),
) -> LossBreakdown:
    """Combine (simple, reg, trs, dc) with weights (lambda_trs, lambda_reg, lambda_dc)."""
    simple, reg, trs, dc = (float(p) for p in parts)
    lam_trs, lam_reg, lam_dc = (float(w) for w in weights)
    values = (simple, reg, trs, dc, lam_trs, lam_reg, lam_dc)
    if not all(math.isfinite(v) for v in values):
        raise NumericError(f"non-finite loss input: parts={parts}, weights={weights}")
    total = simple + lam_trs * trs + lam_reg * reg + lam_dc * dc
    return LossBreakdown(simple, reg, trs, dc, total, (lam_trs, lam_reg, lam_dc))
