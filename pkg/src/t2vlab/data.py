"""Synthetic moving-shape clips, the closed caption vocabulary, and manifest ingestion.

Clips are F frames of one colored shape on a gray background, moving with a
constant per-frame displacement (or growing/shrinking). Rendering evaluates a
geometric mask on the pixel grid, so integer-speed motions translate the mask
exactly and pixel-moment centroids shift by exactly `speed` per frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ClipSpecError, IngestionError, ParameterError, VocabularyError

SHAPES = ("square", "circle", "triangle")
COLORS = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
}
MOTIONS = ("left", "right", "up", "down", "grow", "shrink", "still")

EOS = "<eos>"
DEFAULT_VOCAB = (EOS, *COLORS, *SHAPES, "moving", *MOTIONS)


class Vocabulary:
    """Closed word list with an end-of-sequence token at id 0."""

    def __init__(self, words: tuple[str, ...] = DEFAULT_VOCAB):
        if EOS not in words:
            words = (EOS, *words)
        self.words = tuple(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.eos_id = self.index[EOS]

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, caption: str, length: int) -> list[int]:
        """Word ids padded to `length` with EOS; empty caption is all EOS."""
        tokens = caption.lower().split()
        if len(tokens) > length:
            raise VocabularyError(f"caption has {len(tokens)} words, max is {length}")
        ids = []
        for word in tokens:
            if word not in self.index:
                raise VocabularyError(f"word {word!r} not in vocabulary")
            ids.append(self.index[word])
        ids.extend([self.eos_id] * (length - len(ids)))
        return ids


def tokenize_caption(caption: str, vocab: Vocabulary, max_len: int) -> torch.Tensor:
    """Caption -> (1, M) int64 token ids, EOS-padded. Empty caption is the unconditional stream."""
    return torch.tensor([vocab.encode(caption, max_len)], dtype=torch.int64)


@dataclass(frozen=True)
class ClipSpec:
    """One synthetic clip: shape, color, motion, speed in px/frame, background gray level."""

    shape_kind: str
    color: str
    motion: str
    speed: float = 2.0
    background: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.shape_kind not in SHAPES:
            raise ClipSpecError(f"unknown shape {self.shape_kind!r}")
        if self.color not in COLORS:
            raise ClipSpecError(f"unknown color {self.color!r}")
        if self.motion not in MOTIONS:
            raise ClipSpecError(f"unknown motion {self.motion!r}")
        if self.speed < 0:
            raise ClipSpecError(f"speed must be >= 0, got {self.speed}")
        if not 0.0 <= self.background <= 1.0:
            raise ClipSpecError(f"background gray level must be in [0, 1], got {self.background}")

    @property
    def caption(self) -> str:
        return f"{self.color} {self.shape_kind} moving {self.motion}"


_DELTAS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
}


def _draw_position(rng, lo: float, hi: float) -> float:
    """Integer start position when one fits (keeps centroid shifts pixel-exact),
    otherwise the midpoint of the valid interval."""
    lo_i, hi_i = int(np.ceil(lo)), int(np.floor(hi))
    if lo_i > hi_i:
        return (lo + hi) / 2.0
    return float(rng.integers(lo_i, hi_i + 1))


def _shape_mask(kind: str, xs: np.ndarray, ys: np.ndarray, cx: float, cy: float, r: float):
    dx, dy = xs - cx, ys - cy
    if kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= r
    if kind == "circle":
        return dx * dx + dy * dy <= r * r
    # Upward triangle: apex at (cx, cy - r), half-width widening linearly to r.
    height = dy + r
    return (height >= 0) & (dy <= r) & (np.abs(dx) <= height / 2.0)


def generate_clip(
    spec: ClipSpec, F: int, H: int, W: int, radius: float = 5.0
) -> tuple[torch.Tensor, str]:
    """Render (F, 3, H, W) float32 frames in [-1, 1] plus the caption.

    Deterministic in spec.seed (which only picks the start position inside the
    region where the object stays fully in frame for all F frames).
    """
    if F < 1 or H < 1 or W < 1:
        raise ParameterError(f"invalid clip dims F={F}, H={H}, W={W}")
    dx, dy = _DELTAS.get(spec.motion, (0.0, 0.0))
    dx, dy = dx * spec.speed, dy * spec.speed
    dr = spec.speed if spec.motion == "grow" else -spec.speed if spec.motion == "shrink" else 0.0

    radii = [radius + j * dr for j in range(F)]
    if min(radii) < 1.0:
        raise ClipSpecError(f"shape shrinks below 1 px within {F} frames")
    lo_x = max(radii[j] - j * dx for j in range(F))
    hi_x = min(W - 1 - radii[j] - j * dx for j in range(F))
    lo_y = max(radii[j] - j * dy for j in range(F))
    hi_y = min(H - 1 - radii[j] - j * dy for j in range(F))
    if lo_x > hi_x or lo_y > hi_y:
        raise ClipSpecError(
            f"object cannot stay inside a {W}x{H} frame for {F} frames "
            f"(motion={spec.motion}, speed={spec.speed}, radius={radius})"
        )

    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, spec.seed & 0x7FFFFFFF]))
    cx0 = _draw_position(rng, lo_x, hi_x)
    cy0 = _draw_position(rng, lo_y, hi_y)

    bg = 2.0 * spec.background - 1.0
    color = COLORS[spec.color]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    frames = np.full((F, 3, H, W), bg, dtype=np.float32)
    for j in range(F):
        mask = _shape_mask(spec.shape_kind, xs, ys, cx0 + j * dx, cy0 + j * dy, radii[j])
        for c in range(3):
            frames[j, c][mask] = color[c]
    return torch.from_numpy(frames), spec.caption


def caption_grid() -> list[tuple[str, str, str]]:
    """Every (shape, color, motion) combination of the closed vocabulary."""
    return [(s, c, m) for s in SHAPES for c in COLORS for m in MOTIONS]


def all_captions() -> list[str]:
    return [f"{c} {s} moving {m}" for s, c, m in caption_grid()]


def _feasible_speed(motion: str, speed: float, F: int, H: int, W: int, radius: float) -> float:
    """Largest per-frame rate <= speed that keeps the object renderable for F frames."""
    if F < 2 or motion == "still":
        return speed
    span = F - 1
    if motion in ("left", "right"):
        cap = (W - 1 - 2 * radius) / span
    elif motion in ("up", "down"):
        cap = (H - 1 - 2 * radius) / span
    elif motion == "grow":
        cap = ((min(H, W) - 1) / 2 - radius) / span
    else:  # shrink
        cap = (radius - 1) / span
    return min(speed, cap)


class SyntheticClipDataset:
    """Fixed pool of deterministic synthetic clips, indexable like a dataset.

    The requested speed is clamped per motion so every drawn spec stays
    renderable (e.g. shrink cannot collapse the shape within F frames).
    """

    def __init__(
        self,
        num_clips: int,
        F: int,
        H: int,
        W: int,
        speed: float = 2.0,
        background: float = 0.5,
        radius: float = 5.0,
        seed: int = 0,
    ):
        if num_clips < 1:
            raise ParameterError(f"need num_clips >= 1, got {num_clips}")
        self.F, self.H, self.W, self.radius = F, H, W, radius
        grid = caption_grid()
        rng = np.random.default_rng(np.random.SeedSequence([0xDA7A, seed & 0x7FFFFFFF]))
        picks = rng.choice(len(grid), size=num_clips, replace=num_clips > len(grid))
        self.specs = []
        for i, g in enumerate(picks):
            shape, color, motion = grid[int(g)]
            self.specs.append(
                ClipSpec(
                    shape,
                    color,
                    motion,
                    speed=_feasible_speed(motion, speed, F, H, W, radius),
                    background=background,
                    seed=seed + i,
                )
            )

    def __len__(self) -> int:
        return len(self.specs)

    def __getitem__(self, idx: int) -> tuple[torch.Tensor, str, int]:
        video, caption = generate_clip(self.specs[idx], self.F, self.H, self.W, self.radius)
        return video, caption, idx


class ManifestDataset:
    """Lazily loads (video, caption) rows validated at construction time."""

    def __init__(self, rows: list[tuple[Path, str, list[Path]]], F: int, H: int, W: int):
        self.rows = rows
        self.F, self.H, self.W = F, H, W

    def __len__(self) -> int:
        return len(self.rows)

    def _load_frame(self, path: Path) -> np.ndarray:
        img = Image.open(path).convert("RGB")
        if img.size != (self.W, self.H):
            scale = max(self.W / img.width, self.H / img.height)
            img = img.resize(
                (round(img.width * scale), round(img.height * scale)), Image.BILINEAR
            )
            left = (img.width - self.W) // 2
            top = (img.height - self.H) // 2
            img = img.crop((left, top, left + self.W, top + self.H))
        arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
        return arr.transpose(2, 0, 1)

    def __getitem__(self, idx: int) -> tuple[torch.Tensor, str, int]:
        _, caption, frame_paths = self.rows[idx]
        frames = np.stack([self._load_frame(p) for p in frame_paths[: self.F]])
        return torch.from_numpy(frames), caption, idx


def load_manifest(path: str | Path, F: int, H: int, W: int) -> ManifestDataset:
    """Parse a "path,caption" CSV whose paths are directories of PNG frames.

    Row-level problems (missing directory, too few frames) raise IngestionError
    naming the offending row; frame decoding itself stays lazy.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty manifest") from None
        if [h.strip() for h in header] != ["path", "caption"]:
            raise IngestionError(f'{path}: expected header "path,caption", got {header}')
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise IngestionError(f"{path} row {i}: expected 2 fields, got {len(row)}")
            clip_dir = Path(row[0])
            if not clip_dir.is_absolute():
                clip_dir = path.parent / clip_dir
            if not clip_dir.is_dir():
                raise IngestionError(f"{path} row {i}: frame directory not found: {clip_dir}")
            frame_paths = sorted(clip_dir.glob("*.png"))
            if len(frame_paths) < F:
                raise IngestionError(
                    f"{path} row {i}: clip has {len(frame_paths)} frames, need {F}"
                )
            rows.append((clip_dir, row[1], frame_paths))
    return ManifestDataset(rows, F, H, W)
