"""Command-line surface.

Subcommands: pretrain, train, sample, eval, analyze-noise, inspect-attn.
Exit codes: 0 success, 2 usage error, 1 runtime error (diagnostic on stderr).
The HARIVO_LOG environment variable ({debug, info, warn}) sets verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__

logger = logging.getLogger("t2vlab")

_LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("HARIVO_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="t2vlab",
        description="Train, sample, and probe a toy inflated text-to-video diffusion model.",
    )
    parser.add_argument("--version", action="version", version=f"t2vlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the spatial model on single frames, then freeze")
    p.add_argument("--config", required=True, help="run configuration JSON")

    p = sub.add_parser("train", help="train the inflated layers against the frozen spatial model")
    p.add_argument("--config", required=True, help="run configuration JSON")

    p = sub.add_parser("sample", help="generate one clip from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--alpha", type=float, default=None, help="MG guidance scale (default 40)")
    p.add_argument("--steps", type=int, default=None, help="DDIM steps (default 25)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="prompt-sweep evaluation report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("analyze-noise", help="Jarque-Bera Gaussianity experiment")
    p.add_argument("--kind", required=True, choices=["iid", "correlated"])
    p.add_argument("--shared-weight", type=float, default=None)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("inspect-attn", help="cross-attention heatmaps for frame-wise tokens")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_pretrain(args) -> int:
    from .config import load_config
    from .runner import run_pretrain

    path = run_pretrain(load_config(args.config))
    print(f"pretrain checkpoint: {path}")
    return 0


def _cmd_train(args) -> int:
    from .config import load_config
    from .runner import run_train

    path = run_train(load_config(args.config))
    print(f"train checkpoint: {path}")
    return 0


def _load_model(checkpoint: str):
    from .checkpoint import load_checkpoint
    from .errors import IntegrityError

    loaded = load_checkpoint(checkpoint)
    if loaded.schedule is None:
        raise IntegrityError(f"{checkpoint}: checkpoint has no schedule metadata")
    return loaded


def _cmd_sample(args) -> int:
    from .report import save_frames, save_gif, write_jsonl_atomic
    from .sampler import SamplerConfig, sample_video

    loaded = _load_model(args.checkpoint)
    overrides = {"seed": args.seed}
    if args.alpha is not None:
        overrides["mg_alpha"] = args.alpha
    if args.steps is not None:
        overrides["steps"] = args.steps
    cfg = SamplerConfig(**overrides)
    video, trace = sample_video(
        loaded.model, args.prompt, cfg, loaded.schedule, return_trace=True
    )
    out = Path(args.out)
    save_frames(out, video[0])
    save_gif(out / "clip.gif", video[0])
    write_jsonl_atomic(out / "trace.jsonl", trace)
    print(f"wrote {video.shape[1]} frames, clip.gif, trace.jsonl to {out}")
    return 0


def _cmd_eval(args) -> int:
    from .config import load_config
    from .data import all_captions
    from .evaluate import evaluate_model
    from .report import save_eval_csv, save_eval_figures, write_json_atomic

    loaded = _load_model(args.checkpoint)
    run_cfg = load_config(args.config)
    report = evaluate_model(
        loaded.model, loaded.schedule, run_cfg.sampler, all_captions(),
        base_seed=run_cfg.sampler.seed,
    )
    out = Path(args.out)
    write_json_atomic(out, report.report())
    save_eval_csv(out.with_suffix(".csv"), report)
    figures = save_eval_figures(out, report)
    print(
        f"eval over {len(report.per_video)} prompts: smoothness={report.smoothness:.5f} "
        f"h_consistency={report.h_consistency:.5f}"
    )
    print(f"wrote {out}, {out.with_suffix('.csv')}, {len(figures)} figures")
    return 0


def _cmd_analyze_noise(args) -> int:
    from .noise_prior import NoiseSpec, gaussianity_experiment
    from .report import save_noise_histogram, save_noise_trials_csv, write_json_atomic

    kwargs = {}
    if args.shared_weight is not None:
        kwargs["shared_weight"] = args.shared_weight
    spec = NoiseSpec(kind=args.kind, **kwargs)
    result = gaussianity_experiment(spec, args.trials)
    out = Path(args.out)
    write_json_atomic(out, result.report())
    save_noise_trials_csv(out.with_suffix(".csv"), result)
    save_noise_histogram(out.parent / f"{out.stem}_hist.png", result)
    print(f"{args.kind}: pass rate {result.pass_rate:.4f} over {args.trials} trials -> {out}")
    return 0


def _cmd_inspect_attn(args) -> int:
    from .evaluate import attention_inspection
    from .report import save_attention_grids, write_json_atomic
    from .sampler import SamplerConfig

    loaded = _load_model(args.checkpoint)
    inspection = attention_inspection(
        loaded.model, loaded.schedule, args.prompt, SamplerConfig()
    )
    out = Path(args.out)
    paths = save_attention_grids(out, inspection)
    write_json_atomic(out / "stats.json", inspection.report())
    print(
        f"wrote {len(paths)} heatmap grids to {out} "
        f"(framewise var {inspection.framewise_variance:.3g}, "
        f"text var {inspection.text_variance:.3g})"
    )
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "analyze-noise": _cmd_analyze_noise,
    "inspect-attn": _cmd_inspect_attn,
}


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # runtime errors -> exit 1 with a diagnostic
        logger.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
