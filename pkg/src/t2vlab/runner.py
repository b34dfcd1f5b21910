"""Run orchestration for the two training phases.

Lays out the run directory:

    <out_dir>/pretrain/{metrics.jsonl, checkpoints/final/}
    <out_dir>/train/{metrics.jsonl, checkpoints/step_*/, checkpoints/final/}
"""

from __future__ import annotations

import logging
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .diffusion import make_linear_beta_schedule
from .errors import StateError
from .losses import NegativeQueue
from .model import build_model
from .training import MetricsLogger, build_dataset, pretrain_spatial, train_temporal

logger = logging.getLogger(__name__)


def make_schedule(cfg: RunConfig):
    return make_linear_beta_schedule(
        cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end
    )


def run_pretrain(cfg: RunConfig) -> Path:
    """Phase 1: train and freeze the spatial model; returns the final checkpoint path."""
    out = Path(cfg.train.out_dir) / "pretrain"
    schedule = make_schedule(cfg)
    dataset = build_dataset(cfg.data, cfg.model)
    model = build_model(cfg.model)
    metrics = MetricsLogger(out / "metrics.jsonl")
    try:
        losses = pretrain_spatial(model, dataset, schedule, cfg.train, metrics)
    finally:
        metrics.close()
    logger.info(
        "pretraining done: %d steps, loss %.5f -> %.5f",
        len(losses),
        losses[0],
        losses[-1],
    )
    return save_checkpoint(
        model, None, cfg.train.pretrain_steps, out / "checkpoints" / "final", schedule
    )


def run_train(cfg: RunConfig) -> Path:
    """Phase 2: load the frozen spatial checkpoint and train the inflated groups."""
    out = Path(cfg.train.out_dir) / "train"
    init = cfg.train.init_checkpoint or str(
        Path(cfg.train.out_dir) / "pretrain" / "checkpoints" / "final"
    )
    loaded = load_checkpoint(init)
    model = loaded.model
    if not model.spatial_frozen:
        raise StateError(f"checkpoint {init} is not spatially frozen; run pretrain first")
    schedule = loaded.schedule or make_schedule(cfg)
    dataset = build_dataset(cfg.data, cfg.model)
    # A checkpoint carrying a queue is a train-phase checkpoint: resume its step count.
    resuming = loaded.queue is not None
    queue = loaded.queue if resuming else NegativeQueue(model.config.queue_capacity)
    start_step = loaded.step if resuming else 0
    metrics = MetricsLogger(out / "metrics.jsonl")
    try:
        history = train_temporal(
            model,
            dataset,
            schedule,
            queue,
            cfg.train,
            metrics,
            checkpoint_dir=out / "checkpoints",
            start_step=start_step,
        )
    finally:
        metrics.close()
    final_step = start_step + cfg.train.steps
    logger.info(
        "training done: %d steps, total %.5f -> %.5f",
        len(history),
        history[0].total,
        history[-1].total,
    )
    return save_checkpoint(model, queue, final_step, out / "checkpoints" / "final", schedule)
