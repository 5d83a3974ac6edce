"""Frame-, phase- and video-level phase recognition metrics.

Per-phase cells that are 0/0 are left out of the phase average: precision is
undefined for a phase that is never predicted, recall for a phase absent from
the ground truth. Jaccard and F1 are defined for every phase in gt or pred.
All reported values are percentages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass
class PhaseSequence:
    video_id: str
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size == 0:
            raise ValueError(f"{self.video_id}: labels must be a nonempty 1-D array")

    def __len__(self):
        return len(self.labels)


@dataclass
class EvalPair:
    gt: PhaseSequence
    pred: PhaseSequence

    def __post_init__(self):
        if len(self.gt) != len(self.pred):
            raise LengthMismatch(f"{self.gt.video_id}: gt has {len(self.gt)} frames, pred {len(self.pred)}")

    @classmethod
    def from_arrays(cls, gt, pred, video_id="video"):
        return cls(PhaseSequence(video_id, gt), PhaseSequence(video_id, pred))


@dataclass
class PhaseScores:
    precision: float
    recall: float
    jaccard: float
    f1: float
    per_phase: dict = field(default_factory=dict)


@dataclass
class MeanStd:
    mean: float
    std: float

    def __str__(self):
        return f"{self.mean:.1f}±{self.std:.1f}"


@dataclass
class MetricReport:
    accuracy: MeanStd
    precision: MeanStd
    recall: MeanStd
    jaccard: MeanStd
    f1: MeanStd
    image_level_accuracy: float
    num_videos: int

    def as_dict(self) -> dict:
        out = {}
        for name in ("accuracy", "precision", "recall", "jaccard", "f1"):
            ms = getattr(self, name)
            out[f"{name}_mean"] = ms.mean
            out[f"{name}_std"] = ms.std
        out["image_level_accuracy"] = self.image_level_accuracy
        out["num_videos"] = self.num_videos
        return out


def relax(pair: EvalPair, window_s: float = 10.0, fps: float = 1.0) -> EvalPair:
    """Forgive neighbouring-phase predictions near ground-truth transitions.

    For a transition at frame b (gt[b-1] = a != gt[b] = c), a frame j with
    b - W <= j < b + W, W = round(window_s * fps), that predicts the phase on
    the other side of the transition is rewritten to gt[j].
    """
    gt = pair.gt.labels
    pred = pair.pred.labels.copy()
    W = int(round(window_s * fps))
    if W > 0:
        for b in np.flatnonzero(gt[1:] != gt[:-1]) + 1:
            a, c = gt[b - 1], gt[b]
            lo, hi = max(b - W, 0), min(b + W, len(gt))
            before = np.arange(lo, b)
            after = np.arange(b, hi)
            before = before[(pred[before] == c) & (gt[before] == a)]
            after = after[(pred[after] == a) & (gt[after] == c)]
            pred[before] = a
            pred[after] = c
    return EvalPair(pair.gt, PhaseSequence(pair.pred.video_id, pred))


def video_accuracy(pair: EvalPair) -> float:
    return 100.0 * float(np.mean(pair.gt.labels == pair.pred.labels))


def _safe_ratio(num, den):
    return num / den if den > 0 else None


def phase_metrics(pair: EvalPair) -> PhaseScores:
    gt, pred = pair.gt.labels, pair.pred.labels
    per_phase = {}
    for p in np.union1d(gt, pred):
        in_gt, in_pred = gt == p, pred == p
        tp = int(np.sum(in_gt & in_pred))
        fp = int(np.sum(~in_gt & in_pred))
        fn = int(np.sum(in_gt & ~in_pred))
        per_phase[int(p)] = {
            "precision": _safe_ratio(tp, tp + fp),
            "recall": _safe_ratio(tp, tp + fn),
            "jaccard": tp / (tp + fp + fn),
            "f1": 2 * tp / (2 * tp + fp + fn),
        }

    def avg(key):
        vals = [v[key] for v in per_phase.values() if v[key] is not None]
        return 100.0 * float(np.mean(vals)) if vals else 0.0

    return PhaseScores(avg("precision"), avg("recall"), avg("jaccard"), avg("f1"), per_phase)


def _mean_std(values) -> MeanStd:
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return MeanStd(float(np.mean(arr)), std)


def aggregate(pairs, relaxed: bool = False, window_s: float = 10.0, fps: float = 1.0) -> MetricReport:
    """Mean and sample std over videos; image-level accuracy pools all frames."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no videos to aggregate")
    if relaxed:
        pairs = [relax(p, window_s, fps) for p in pairs]
    accs, scores = [], []
    correct = total = 0
    for p in pairs:
        accs.append(video_accuracy(p))
        scores.append(phase_metrics(p))
        correct += int(np.sum(p.gt.labels == p.pred.labels))
        total += len(p.gt)
    return MetricReport(
        accuracy=_mean_std(accs),
        precision=_mean_std([s.precision for s in scores]),
        recall=_mean_std([s.recall for s in scores]),
        jaccard=_mean_std([s.jaccard for s in scores]),
        f1=_mean_std([s.f1 for s in scores]),
        image_level_accuracy=100.0 * correct / total,
        num_videos=len(pairs),
    )


def format_report(report: MetricReport, title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'metric':<22}{'mean±std':>14}")
    for name in ("accuracy", "precision", "recall", "jaccard", "f1"):
        lines.append(f"{name:<22}{str(getattr(report, name)):>14}")
    lines.append(f"{'image_level_accuracy':<22}{report.image_level_accuracy:>14.1f}")
    lines.append(f"{'videos':<22}{report.num_videos:>14d}")
    return "\n".join(lines)


def format_key_values(values: dict) -> str:
    return "\n".join(f"{k}={v}" for k, v in values.items()) + "\n"
