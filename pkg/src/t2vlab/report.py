"""Artifact writers: PNG frames, GIFs, CSV tables, and matplotlib figures.

All writers go through one atomic path (render to bytes, temp file, rename)
so an interrupted run never leaves a truncated artifact. PNG frames are the
lossless ground truth; GIFs are 8-bit previews.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
from PIL import Image

from .checkpoint import write_bytes_atomic, write_json_atomic

__all__ = [
    "write_bytes_atomic",
    "write_json_atomic",
    "write_text_atomic",
    "write_jsonl_atomic",
    "video_to_uint8",
    "save_frames",
    "save_gif",
    "save_eval_csv",
    "save_eval_figures",
    "save_noise_trials_csv",
    "save_noise_histogram",
    "save_attention_grids",
]


def write_text_atomic(path: Path, text: str) -> None:
    write_bytes_atomic(Path(path), text.encode("utf-8"))


def write_jsonl_atomic(path: Path, records: list[dict]) -> None:
    write_text_atomic(path, "".join(json.dumps(r) + "\n" for r in records))


def video_to_uint8(video: torch.Tensor) -> np.ndarray:
    """(F, C, H, W) in [-1, 1] -> (F, H, W, C) uint8."""
    arr = video.detach().clamp(-1, 1).numpy()
    arr = np.round((arr + 1.0) * 127.5).astype(np.uint8)
    return arr.transpose(0, 2, 3, 1)


def _png_bytes(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame).save(buf, format="PNG")
    return buf.getvalue()


def save_frames(out_dir: Path, video: torch.Tensor) -> list[Path]:
    """Write frame_0001.png ... for one clip (F, C, H, W)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(video_to_uint8(video), start=1):
        path = out_dir / f"frame_{i:04d}.png"
        write_bytes_atomic(path, _png_bytes(frame))
        paths.append(path)
    return paths


def save_gif(path: Path, video: torch.Tensor, duration_ms: int = 125) -> None:
    frames = [Image.fromarray(f) for f in video_to_uint8(video)]
    buf = io.BytesIO()
    frames[0].save(
        buf,
        format="GIF",
        save_all=True,
        append_images=frames[1:],
        duration=duration_ms,
        loop=0,
    )
    write_bytes_atomic(Path(path), buf.getvalue())


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def save_eval_csv(path: Path, report) -> None:
    rows = [
        [v.prompt, v.seed, f"{v.smoothness:.6g}", f"{v.h_consistency:.6g}"]
        for v in report.per_video
    ]
    write_text_atomic(path, _csv_text(["prompt", "seed", "smoothness", "h_consistency"], rows))


def _fig_bytes(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def save_eval_figures(stem: Path, report) -> list[Path]:
    """Histogram figures of the per-video metrics next to the JSON report."""
    stem = Path(stem)
    out = []
    for metric in ("smoothness", "h_consistency"):
        values = [getattr(v, metric) for v in report.per_video]
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.hist(values, bins=min(20, max(5, len(values) // 2)), color="#4878cf")
        ax.axvline(getattr(report, metric), color="k", linestyle="--", label="mean")
        ax.set_xlabel(metric)
        ax.set_ylabel("videos")
        ax.legend()
        path = stem.parent / f"{stem.stem}_{metric}.png"
        write_bytes_atomic(path, _fig_bytes(fig))
        out.append(path)
    return out


def save_noise_trials_csv(path: Path, result) -> None:
    rows = [
        [i, f"{s:.8g}", f"{p:.8g}"]
        for i, (s, p) in enumerate(zip(result.statistics, result.p_values))
    ]
    write_text_atomic(path, _csv_text(["trial", "statistic", "p_value"], rows))


def save_noise_histogram(path: Path, result) -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    stats = np.clip(result.statistics, 0, np.percentile(result.statistics, 99))
    ax.hist(stats, bins=50, color="#4878cf")
    ax.set_xlabel("Jarque-Bera statistic")
    ax.set_ylabel("trials")
    ax.set_title(f"{result.kind}: pass rate {result.pass_rate:.1%}")
    write_bytes_atomic(Path(path), _fig_bytes(fig))


def save_attention_grids(out_dir: Path, inspection) -> list[Path]:
    """One PNG grid per frame-wise token (rows of per-frame heatmaps) plus a text-token grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    def grid(maps: torch.Tensor, title: str, path: Path):
        n_frames = maps.shape[0]
        fig, axes = plt.subplots(1, n_frames, figsize=(1.2 * n_frames, 1.6))
        if n_frames == 1:
            axes = [axes]
        vmin, vmax = float(maps.min()), float(maps.max())
        for j, ax in enumerate(axes):
            ax.imshow(maps[j].numpy(), cmap="magma", vmin=vmin, vmax=vmax)
            ax.set_title(f"f{j + 1}", fontsize=7)
            ax.axis("off")
        fig.suptitle(title, fontsize=9)
        write_bytes_atomic(path, _fig_bytes(fig))
        paths.append(path)

    for k in range(inspection.frame_token_patterns.shape[0]):
        grid(
            inspection.frame_token_patterns[k],
            f"frame-wise token {k + 1}",
            out_dir / f"framewise_token_{k + 1}.png",
        )
    for w, word in enumerate(inspection.caption_words):
        grid(
            inspection.text_token_maps[w],
            f"text token '{word}'",
            out_dir / f"text_token_{w + 1}_{word}.png",
        )
    return paths
