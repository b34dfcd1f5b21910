"""Two-phase trainer: spatial pretraining, then frozen-spatial inflation training.

Phase 1 trains only the spatial U-Net (plus its text embedding) with the
plain noise-prediction MSE on independent frames, then freezes it. Phase 2
trains exactly the inflated groups (temporal, mapping, token_gen,
projection) with all four losses.

Every random draw in a step comes from a generator seeded by (config seed,
step index, purpose), so any step is reproducible in isolation: resuming
from a checkpoint at step k replays step k bit-exactly. The trainer is the
sole mutator of the model and queue; batches are assembled synchronously in
step order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from .checkpoint import save_checkpoint, spatial_param_hash
from .data import SyntheticClipDataset, load_manifest
from .diffusion import NoiseSchedule, q_sample
from .errors import ConfigError, NumericError, StateError
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
from .model import T2VModel

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "train_step",
    "pretrain_spatial",
    "train_temporal",
    "MetricsLogger",
    "spatial_param_hash",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by both phases."""

    batch_size: int = 4
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    pretrain_steps: int = 500
    steps: int = 200
    lambda_trs: float = 0.1
    lambda_reg: float = 0.1
    lambda_dc: float = 0.1
    tau: float = 0.1
    uncond_prob: float = 0.1
    dc_cross_timestep: bool = False
    checkpoint_interval: int = 100
    log_interval: int = 10
    seed: int = 0
    out_dir: str = "runs"
    init_checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1 or self.pretrain_steps < 1:
            raise ConfigError("batch_size, steps, pretrain_steps must be >= 1")
        if not (0 < self.lr_end <= self.lr_start):
            raise ConfigError(f"need 0 < lr_end <= lr_start, got {self.lr_start}->{self.lr_end}")
        if not 0.0 <= self.uncond_prob <= 1.0:
            raise ConfigError(f"uncond_prob must be in [0, 1], got {self.uncond_prob}")

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.lambda_trs, self.lambda_reg, self.lambda_dc)


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Linear decay from lr_start to lr_end across the step budget."""
    if total_steps <= 1:
        return cfg.lr_start
    frac = min(step / (total_steps - 1), 1.0)
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac


def _gen(seed: int, step: int, salt: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed((seed * 2_654_435_761 + step * 1_000_003 + salt) % (1 << 63))
    return g


def sample_batch(dataset, batch_size: int, gen: torch.Generator):
    """Draw batch_size clips; without replacement when the pool is large enough."""
    n = len(dataset)
    if batch_size <= n:
        idx = torch.randperm(n, generator=gen)[:batch_size]
    else:
        idx = torch.randint(0, n, (batch_size,), generator=gen)
    videos, captions, ids = [], [], []
    for i in idx.tolist():
        v, c, vid = dataset[i]
        videos.append(v)
        captions.append(c)
        ids.append(vid)
    return torch.stack(videos), captions, ids


def _encode_captions(model: T2VModel, captions: list[str]) -> torch.Tensor:
    return torch.cat([model.encode_caption(c) for c in captions])


def _apply_caption_dropout(captions: list[str], prob: float, gen: torch.Generator) -> list[str]:
    if prob <= 0:
        return list(captions)
    drop = torch.rand(len(captions), generator=gen) < prob
    return ["" if drop[i] else c for i, c in enumerate(captions)]


def _capture_h_at(
    model: T2VModel, videos: torch.Tensor, text: torch.Tensor, t: int, eps: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    x_t = q_sample(videos, t, eps, schedule)
    tokens = model.generate_frame_tokens(text, "full")
    _, rec = model(x_t, t, tokens, mode="full", capture=True)
    return rec.h


def train_step(
    model: T2VModel,
    batch,
    schedule: NoiseSchedule,
    queue: NegativeQueue,
    cfg: TrainConfig,
    step: int,
    optimizer: torch.optim.Optimizer,
) -> LossBreakdown:
    """One inflation-training step; mutates model (trainables only) and queue."""
    if not model.spatial_frozen:
        raise StateError("train_step requires a pretrained, frozen spatial model")
    videos, captions, ids = batch
    b, f = videos.shape[:2]

    t = int(torch.randint(0, schedule.T, (1,), generator=_gen(cfg.seed, step, 1)).item())
    eps = torch.randn(videos.shape, generator=_gen(cfg.seed, step, 2))
    captions = _apply_caption_dropout(captions, cfg.uncond_prob, _gen(cfg.seed, step, 3))
    text = _encode_captions(model, captions)
    x_t = q_sample(videos, t, eps, schedule)

    tokens_full = model.generate_frame_tokens(text, "full")
    eps_full, record = model(x_t, t, tokens_full, mode="full", capture=True)
    tokens_image = model.generate_frame_tokens(text, "image_only")
    eps_image, _ = model(x_t, t, tokens_image, mode="image_only")

    l_simple = simple_loss(eps_full, eps)  # full path only
    l_reg = reg_loss(eps_full, eps_image, t, schedule.T)
    l_trs = trs_loss(record)

    pair_gen = _gen(cfg.seed, step, 4)
    h_for_z2 = record.h
    if cfg.dc_cross_timestep:
        t2 = int(torch.randint(0, schedule.T, (1,), generator=pair_gen).item())
        eps2 = torch.randn(videos.shape, generator=_gen(cfg.seed, step, 5))
        h_for_z2 = _capture_h_at(model, videos, text, t2, eps2, schedule)

    l_dc = torch.zeros(())
    positives, positive_ids = [], []
    dc_terms = []
    for i in range(b):
        j1, j2 = torch.randperm(f, generator=pair_gen)[:2].tolist()
        z1 = model.project_h(record.h[i, j1])
        z2 = model.project_h(h_for_z2[i, j2])
        positives.extend([z1, z2])
        positive_ids.extend([ids[i], ids[i]])
        negatives = queue.snapshot(exclude_video=ids[i])
        if len(negatives) > 0:
            dc_terms.append(dc_loss(z1, z2, negatives, cfg.tau))
    if dc_terms:
        l_dc = torch.stack(dc_terms).mean()

    loss = (
        l_simple + cfg.lambda_trs * l_trs + cfg.lambda_reg * l_reg + cfg.lambda_dc * l_dc
    )
    breakdown = total_loss(
        (l_simple.item(), l_reg.item(), l_trs.item(), l_dc.item()), cfg.weights
    )
    if not math.isfinite(breakdown.total):
        raise NumericError(f"non-finite loss at step {step}: {breakdown.as_dict()}")

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()

    push_negatives(queue, torch.stack(positives), positive_ids)
    return breakdown


class MetricsLogger:
    """JSON-lines metrics writer; one flushed record per step."""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")

    def log(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def pretrain_spatial(
    model: T2VModel,
    dataset,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    metrics: Optional[MetricsLogger] = None,
) -> list[float]:
    """Train only the spatial group on independent frames, then freeze it."""
    if model.spatial_frozen:
        raise StateError("spatial parameters are already frozen")
    optimizer = torch.optim.Adam(model.spatial_parameters(), lr=cfg.lr_start)
    losses = []
    for step in range(cfg.pretrain_steps):
        lr = lr_at(cfg, step, cfg.pretrain_steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        videos, captions, _ = sample_batch(dataset, cfg.batch_size, _gen(cfg.seed, step, 11))
        t = int(torch.randint(0, schedule.T, (1,), generator=_gen(cfg.seed, step, 12)).item())
        eps = torch.randn(videos.shape, generator=_gen(cfg.seed, step, 13))
        captions = _apply_caption_dropout(captions, cfg.uncond_prob, _gen(cfg.seed, step, 14))
        text = _encode_captions(model, captions)
        tokens = model.generate_frame_tokens(text, "image_only")
        eps_pred = model.spatial_forward(q_sample(videos, t, eps, schedule), t, tokens)
        loss = simple_loss(eps_pred, eps)
        if not math.isfinite(loss.item()):
            raise NumericError(f"non-finite pretraining loss at step {step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        if metrics is not None:
            metrics.log({"step": step, "simple": loss.item(), "lr": lr})
        if step % cfg.log_interval == 0:
            logger.debug("pretrain step %d: simple=%.5f", step, loss.item())
    model.freeze_spatial()
    return losses


def train_temporal(
    model: T2VModel,
    dataset,
    schedule: NoiseSchedule,
    queue: NegativeQueue,
    cfg: TrainConfig,
    metrics: Optional[MetricsLogger] = None,
    checkpoint_dir: Optional[Path] = None,
    start_step: int = 0,
) -> list[LossBreakdown]:
    """Run the inflation phase for cfg.steps steps; spatial stays bit-frozen."""
    if not model.spatial_frozen:
        raise StateError("run pretraining first: spatial parameters are not frozen")
    optimizer = torch.optim.Adam(model.trainable_parameters(), lr=cfg.lr_start)
    history = []
    for step in range(start_step, start_step + cfg.steps):
        lr = lr_at(cfg, step, start_step + cfg.steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batch = sample_batch(dataset, cfg.batch_size, _gen(cfg.seed, step, 0))
        breakdown = train_step(model, batch, schedule, queue, cfg, step, optimizer)
        history.append(breakdown)
        if metrics is not None:
            metrics.log({"step": step, **breakdown.as_dict(), "lr": lr})
        if step % cfg.log_interval == 0:
            logger.debug("train step %d: %s", step, breakdown.as_dict())
        if checkpoint_dir is not None and (step + 1) % cfg.checkpoint_interval == 0:
            save_checkpoint(
                model, queue, step + 1, Path(checkpoint_dir) / f"step_{step + 1:06d}", schedule
            )
    return history


def build_dataset(data_cfg, model_cfg):
    """Dataset handle from the data section: synthetic pool or manifest CSV."""
    if data_cfg.source == "synthetic":
        return SyntheticClipDataset(
            data_cfg.num_clips,
            model_cfg.F,
            model_cfg.H,
            model_cfg.W,
            speed=data_cfg.speed,
            background=data_cfg.background,
            seed=data_cfg.seed,
        )
    if data_cfg.source == "manifest":
        if not data_cfg.manifest:
            raise ConfigError("data.source is 'manifest' but data.manifest is unset")
        return load_manifest(data_cfg.manifest, model_cfg.F, model_cfg.H, model_cfg.W)
    raise ConfigError(f"unknown data source {data_cfg.source!r}")
