"""Synthetic phase-structured videos for desk-scale runs.

Two signal modes:

* ``appearance`` -- each phase has its own mean colour and stripe texture, so
  single frames identify the phase.
* ``motion`` -- every phase shows the same bright square on the same
  background; odd phases move it left, even phases right. Any single frame
  is uninformative and only frame order carries the phase.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..sampling import write_annotations


@dataclass
class SynthSpec:
    num_videos: int = 20
    min_length: int = 64
    max_length: int = 64
    num_phases: int = 2
    image_size: int = 32
    signal: str = "appearance"
    noise: float = 0.05
    transition_noise: float = 0.1  # boundary jitter as a fraction of segment length
    proportions: list = field(default_factory=list)  # empty -> equal
    blob_size: int = 8
    speed: int = 2  # pixels per frame in motion mode

    def __post_init__(self):
        if self.num_phases < 2:
            raise ValueError("num_phases must be >= 2")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")
        if self.signal not in ("appearance", "motion"):
            raise ValueError(f"unknown signal {self.signal!r}")
        if self.proportions and len(self.proportions) != self.num_phases:
            raise ValueError("one proportion per phase required")


@dataclass
class SynthVideo:
    video_id: str
    frames: np.ndarray  # (L, 3, H, W) float32 in [0, 1]
    labels: np.ndarray


def phase_signatures(spec: SynthSpec, rng: np.random.Generator):
    """Per-phase (rgb colour, stripe frequency, stripe orientation)."""
    colors = np.linspace(0.15, 0.85, spec.num_phases)
    rgb = np.stack([colors, colors[::-1], rng.permutation(colors)], axis=1)
    freqs = 1 + np.arange(spec.num_phases) % 4
    orient = np.arange(spec.num_phases) % 2
    return rgb, freqs, orient


def segment_labels(length: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    props = np.asarray(spec.proportions or [1.0] * spec.num_phases, dtype=np.float64)
    props = props / props.sum()
    bounds = np.cumsum(props)[:-1] * length
    seg = length / spec.num_phases
    bounds = bounds + rng.uniform(-1, 1, size=bounds.shape) * spec.transition_noise * seg
    bounds = np.clip(np.round(bounds), 1, length - 1).astype(int)
    bounds = np.maximum.accumulate(bounds)
    labels = np.zeros(length, dtype=np.int64)
    for b in bounds:
        labels[b:] += 1
    return labels


def _appearance_frame(phase, t, spec, sig):
    rgb, freqs, orient = sig
    S = spec.image_size
    coords = np.arange(S) / S
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freqs[phase] * coords + 0.3 * t)
    tex = np.tile(stripes, (S, 1)) if orient[phase] == 0 else np.tile(stripes[:, None], (1, S))
    frame = 0.7 * rgb[phase][:, None, None] + 0.3 * tex[None]
    return frame


def _motion_video(labels, spec, rng):
    S, B = spec.image_size, spec.blob_size
    span = S - B
    x = int(rng.integers(0, span + 1))
    y = int(rng.integers(0, span + 1))
    frames = np.full((len(labels), 3, S, S), 0.3, dtype=np.float64)
    for t, phase in enumerate(labels):
        frames[t, :, y:y + B, x:x + B] = 0.9
        step = spec.speed if phase % 2 == 0 else -spec.speed
        x = (x + step) % (span + 1)
    return frames


def generate_videos(spec: SynthSpec, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    sig = phase_signatures(spec, rng)
    videos = []
    for v in range(spec.num_videos):
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        labels = segment_labels(length, spec, rng)
        if spec.signal == "appearance":
            frames = np.stack([_appearance_frame(p, t, spec, sig) for t, p in enumerate(labels)])
        else:
            frames = _motion_video(labels, spec, rng)
        if spec.noise > 0:
            frames = frames + rng.normal(0.0, spec.noise, size=frames.shape)
        frames = np.clip(frames, 0.0, 1.0)
        # quantise exactly as the on-disk PNGs do
        frames = (np.round(frames * 255) / 255).astype(np.float32)
        videos.append(SynthVideo(f"video{v:03d}", frames, labels))
    return videos


def write_dataset(videos, root) -> Path:
    from PIL import Image

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for vid in videos:
        d = root / vid.video_id
        d.mkdir(exist_ok=True)
        for i, frame in enumerate(vid.frames):
            img = np.round(frame.transpose(1, 2, 0) * 255).astype(np.uint8)
            Image.fromarray(img).save(d / f"{i:06d}.png", optimize=False)
        write_annotations(root / f"{vid.video_id}.tsv", vid.labels)
    return root


def generate_synth(spec: SynthSpec, seed: int, root) -> Path:
    videos = generate_videos(spec, seed)
    root = write_dataset(videos, root)
    manifest = {**asdict(spec), "seed": seed}
    manifest["proportions"] = ",".join(str(p) for p in spec.proportions)
    (Path(root) / "manifest.txt").write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    return root
