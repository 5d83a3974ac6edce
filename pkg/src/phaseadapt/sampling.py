"""Causal clip sampling, grid framesets and the on-disk video source."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ClipSpec, DimensionError


@dataclass
class FrameVolume:
    indices: np.ndarray
    target_index: int
    pixels: np.ndarray | None = None  # (T, C, H, W)


@dataclass
class GridFrameset:
    pixels: np.ndarray  # (C, H, W)
    source_indices: np.ndarray


def sample_clip(video_length: int, target: int, spec: ClipSpec) -> np.ndarray:
    """Indices of the T frames ending at ``target``, spaced R apart.

    Frames before the start of the video repeat frame 0.
    """
    if not 0 <= target < video_length:
        raise IndexError(f"target {target} outside video of length {video_length}")
    offsets = (spec.T - 1 - np.arange(spec.T)) * spec.R
    return np.maximum(target - offsets, 0).astype(np.int64)


def downscale(frame: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downscale of a (C, H, W) frame by an integer factor."""
    c, h, w = frame.shape
    if h % factor or w % factor:
        raise DimensionError(f"frame {h}x{w} not divisible by {factor}")
    return frame.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def build_grid(frames, G: int, source_indices=None) -> GridFrameset:
    """Tile G*G downscaled frames into one frame-sized image, raster order."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] != G * G:
        raise DimensionError(f"need {G * G} frames for a {G}x{G} grid, got shape {frames.shape}")
    n, c, h, w = frames.shape
    out = np.empty((c, h, w), dtype=np.result_type(frames.dtype, np.float32))
    ch, cw = h // G, w // G
    for i in range(n):
        r, col = divmod(i, G)
        out[:, r * ch:(r + 1) * ch, col * cw:(col + 1) * cw] = downscale(frames[i], G)
    if source_indices is None:
        source_indices = np.arange(n)
    return GridFrameset(out, np.asarray(source_indices))


def grid_indices(video_length: int, target: int, G: int, interval: int) -> np.ndarray:
    return sample_clip(video_length, target, ClipSpec(T=G * G, R=interval))


# -- on-disk videos --------------------------------------------------------------

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def read_annotations(path) -> np.ndarray:
    """Parse a ``frame_idx<TAB>phase_id`` file into a dense label array."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.lower().startswith("frame"):
            continue
        idx, phase = line.split("\t")[:2]
        rows.append((int(idx), int(phase)))
    rows.sort()
    labels = np.array([p for _, p in rows], dtype=np.int64)
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: frame indices must be contiguous from 0")
    return labels


def write_annotations(path, labels) -> None:
    lines = [f"{i}\t{int(p)}" for i, p in enumerate(labels)]
    Path(path).write_text("\n".join(lines) + "\n")


class FrameDirectoryVideo:
    """A video stored as ``root/{video_id}/{frame_idx:06d}.ext`` at 1 fps with
    labels in ``root/{video_id}.tsv``.
    """

    def __init__(self, root, video_id: str, preload: bool = True):
        self.root = Path(root)
        self.video_id = video_id
        self.frame_paths = sorted(p for p in (self.root / video_id).iterdir() if p.suffix.lower() in IMAGE_EXTS)
        tsv = self.root / f"{video_id}.tsv"
        self.labels = read_annotations(tsv) if tsv.exists() else None
        if self.labels is not None and len(self.labels) != len(self.frame_paths):
            raise ValueError(f"{video_id}: {len(self.frame_paths)} frames but {len(self.labels)} labels")
        self._frames = np.stack([self._load(p) for p in self.frame_paths]) if preload else None

    @staticmethod
    def _load(path) -> np.ndarray:
        from PIL import Image

        img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
        return img.transpose(2, 0, 1)

    def __len__(self):
        return len(self.frame_paths)

    def frames(self, indices) -> np.ndarray:
        if self._frames is not None:
            return self._frames[np.asarray(indices)]
        return np.stack([self._load(self.frame_paths[i]) for i in indices])

    def volume(self, target: int, spec: ClipSpec) -> FrameVolume:
        idx = sample_clip(len(self), target, spec)
        return FrameVolume(idx, target, self.frames(idx))


def list_videos(root) -> list:
    root = Path(root)
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def grid_side_for(n_frames: int) -> int:
    side = math.isqrt(n_frames)
    if side * side != n_frames:
        raise DimensionError(f"{n_frames} frames do not form a square grid")
    return side
