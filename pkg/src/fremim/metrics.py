"""Segmentation metrics over binary masks and nested label maps."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import LabelOutOfRange, ShapeMismatch

REGION_NAMES = ("region_1", "region_2", "region_3")


def _pair(pred, true):
    pred, true = np.asarray(pred, dtype=bool), np.asarray(true, dtype=bool)
    if pred.shape != true.shape:
        raise ShapeMismatch(f"mask shapes differ: {pred.shape} vs {true.shape}")
    return pred, true


def dice(pred, true) -> float:
    pred, true = _pair(pred, true)
    total = int(pred.sum()) + int(true.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & true).sum()) / total


def jaccard(pred, true) -> float:
    pred, true = _pair(pred, true)
    union = int((pred | true).sum())
    if union == 0:
        return 1.0
    return int((pred & true).sum()) / union


def confusion(pred, true) -> tuple[int, int, int, int]:
    pred, true = _pair(pred, true)
    tp = int((pred & true).sum())
    fp = int((pred & ~true).sum())
    fn = int((~pred & true).sum())
    tn = int((~pred & ~true).sum())
    return tp, fp, fn, tn


def accuracy(pred, true) -> float:
    tp, fp, fn, tn = confusion(pred, true)
    return (tp + tn) / (tp + fp + fn + tn)


def recall(pred, true) -> float:
    tp, _, fn, _ = confusion(pred, true)
    return 1.0 if tp + fn == 0 else tp / (tp + fn)


def precision(pred, true) -> float:
    tp, fp, _, _ = confusion(pred, true)
    return 1.0 if tp + fp == 0 else tp / (tp + fp)


def hd95(pred, true) -> float:
    """95th percentile of the pooled directed nearest-neighbour distances.

    Returns 0 when both masks are empty and ``inf`` when exactly one is.
    """
    pred, true = _pair(pred, true)
    a, b = np.argwhere(pred), np.argwhere(true)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.inf
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95, method="linear"))


def composite_regions(labels, n_classes: int = 4) -> list[np.ndarray]:
    """Nested binary regions ``labels >= k`` for k = 1 .. n_classes - 1."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    return [labels >= k for k in range(1, n_classes)]


@dataclass
class RegionScores:
    dice: float
    jaccard: float
    hd95: float
    accuracy: float
    recall: float
    precision: float


@dataclass
class SegReport:
    class_dice: list[float]
    regions: dict[str, RegionScores]
    n_samples: int = 0
    hd95_infinite: dict[str, int] = field(default_factory=dict)

    @property
    def mean_dice(self) -> float:
        return float(np.mean([r.dice for r in self.regions.values()]))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mean_dice"] = self.mean_dice
        return _jsonable(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SegReport":
        regions = {k: RegionScores(**{f: _unjson(v) for f, v in r.items()})
                   for k, r in d["regions"].items()}
        return cls(list(d["class_dice"]), regions, d.get("n_samples", 0),
                   dict(d.get("hd95_infinite", {})))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def _unjson(v):
    return math.inf if v == "inf" else v


def _region_scores(pred, true) -> RegionScores:
    return RegionScores(dice(pred, true), jaccard(pred, true), hd95(pred, true),
                        accuracy(pred, true), recall(pred, true), precision(pred, true))


def evaluate(pred_labels, true_labels, n_classes: int = 4) -> SegReport:
    """Score a batch of label maps (``N x H x W`` or ``H x W``).

    Metrics are computed per sample and averaged. HD95 is averaged over the
    samples where it is finite; the number of infinite cases is recorded.
    """
    pred_labels, true_labels = np.asarray(pred_labels), np.asarray(true_labels)
    if pred_labels.shape != true_labels.shape:
        raise ShapeMismatch(f"label shapes differ: {pred_labels.shape} vs {true_labels.shape}")
    if pred_labels.ndim == 2:
        pred_labels, true_labels = pred_labels[None], true_labels[None]

    class_dice = np.zeros(n_classes)
    per_region: dict[str, list[RegionScores]] = {}
    for p, t in zip(pred_labels, true_labels):
        for k in range(n_classes):
            class_dice[k] += dice(p == k, t == k)
        names = REGION_NAMES if n_classes - 1 <= len(REGION_NAMES) else [
            f"region_{k}" for k in range(1, n_classes)]
        for name, pr, tr in zip(names, composite_regions(p, n_classes),
                                composite_regions(t, n_classes)):
            per_region.setdefault(name, []).append(_region_scores(pr, tr))

    n = len(pred_labels)
    regions, infinite = {}, {}
    for name, scores in per_region.items():
        hds = [s.hd95 for s in scores if math.isfinite(s.hd95)]
        infinite[name] = len(scores) - len(hds)
        regions[name] = RegionScores(
            dice=float(np.mean([s.dice for s in scores])),
            jaccard=float(np.mean([s.jaccard for s in scores])),
            hd95=float(np.mean(hds)) if hds else math.inf,
            accuracy=float(np.mean([s.accuracy for s in scores])),
            recall=float(np.mean([s.recall for s in scores])),
            precision=float(np.mean([s.precision for s in scores])),
        )
    return SegReport((class_dice / n).tolist(), regions, n, infinite)


def mean_report(reports: list[SegReport]) -> SegReport:
    """Average several fold reports field by field."""
    names = list(reports[0].regions)
    regions = {}
    for name in names:
        rs = [r.regions[name] for r in reports]
        hds = [r.hd95 for r in rs if math.isfinite(r.hd95)]
        regions[name] = RegionScores(
            dice=float(np.mean([r.dice for r in rs])),
            jaccard=float(np.mean([r.jaccard for r in rs])),
            hd95=float(np.mean(hds)) if hds else math.inf,
            accuracy=float(np.mean([r.accuracy for r in rs])),
            recall=float(np.mean([r.recall for r in rs])),
            precision=float(np.mean([r.precision for r in rs])),
        )
    class_dice = np.mean([r.class_dice for r in reports], axis=0).tolist()
    infinite = {n: sum(r.hd95_infinite.get(n, 0) for r in reports) for n in names}
    return SegReport(class_dice, regions, sum(r.n_samples for r in reports), infinite)


def format_report(report: SegReport, title: str = "") -> str:
    """Aligned text table: one row per region plus the average Dice."""
    lines = [title] if title else []
    head = f"{'region':<10}{'Dice':>8}{'JI':>8}{'HD95':>8}{'Acc':>8}{'Rec':>8}{'Prec':>8}"
    lines += [head, "-" * len(head)]
    for name, r in report.regions.items():
        lines.append(f"{name:<10}{100 * r.dice:8.2f}{100 * r.jaccard:8.2f}{r.hd95:8.2f}"
                     f"{100 * r.accuracy:8.2f}{100 * r.recall:8.2f}{100 * r.precision:8.2f}")
    lines.append(f"{'average':<10}{100 * report.mean_dice:8.2f}")
    return "\n".join(lines)
