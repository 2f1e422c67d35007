"""Foreground, random and block-wise pixel masking.

Coordinates are ``(x, y)`` pairs indexing ``image[n, x, y]``. A masked
coordinate is zeroed in every channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CoordinateOutOfRange,
    InsufficientForeground,
    InvalidRatio,
    InvalidSchedule,
    ShapeMismatch,
)

STRATEGIES = ("foreground", "random", "blockwise")
BLOCK_SIZE = 4


@dataclass(frozen=True)
class MaskPlan:
    candidates: frozenset
    masked: frozenset
    ratio: float
    strategy: str
    seed: int
    shape: tuple[int, int] = field(default=(0, 0))

    def as_array(self) -> np.ndarray:
        """Boolean ``H x W`` map of the masked coordinates."""
        out = np.zeros(self.shape, dtype=bool)
        if self.masked:
            xs, ys = zip(*self.masked)
            out[list(xs), list(ys)] = True
        return out


@dataclass(frozen=True)
class RatioSchedule:
    values: tuple[float, ...]
    kind: str = "static"

    def __post_init__(self):
        if not self.values:
            raise InvalidSchedule("ratio schedule has no values")
        if self.kind not in ("static", "dynamic"):
            raise InvalidSchedule(f"unknown schedule kind {self.kind!r}")
        if self.kind == "static" and len(self.values) != 1:
            raise InvalidSchedule("a static schedule holds exactly one ratio")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise InvalidSchedule("dynamic ratios must be non-decreasing")
        for r in self.values:
            _check_ratio(r)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "RatioSchedule":
        values = tuple(float(v) for v in values)
        if not values:
            raise InvalidSchedule("ratio schedule has no values")
        return cls(values, "static" if len(values) == 1 else "dynamic")


def _check_ratio(ratio: float) -> None:
    if not 0.0 <= ratio <= 1.0:
        raise InvalidRatio(f"masking ratio must lie in [0, 1], got {ratio}")


def foreground_map(image: np.ndarray) -> np.ndarray:
    """Intersection over channels of the nonzero-pixel masks."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] < 1:
        raise ShapeMismatch(f"expected C x H x W with C >= 1, got {image.shape}")
    return np.all(image != 0, axis=0)


def foreground_candidates(image: np.ndarray) -> frozenset:
    fg = foreground_map(image)
    if not fg.any():
        raise InsufficientForeground("no pixel is nonzero in every channel")
    return frozenset(zip(*(a.tolist() for a in np.nonzero(fg))))


def plan_mask(image: np.ndarray, strategy: str = "foreground", ratio: float = 0.25,
              seed: int = 0, block_size: int = BLOCK_SIZE) -> MaskPlan:
    _check_ratio(ratio)
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeMismatch(f"expected C x H x W, got {image.shape}")
    h, w = image.shape[1:]
    rng = np.random.default_rng(seed)

    if strategy == "foreground":
        candidates = foreground_candidates(image)
    elif strategy in ("random", "blockwise"):
        candidates = frozenset((x, y) for x in range(h) for y in range(w))
    else:
        raise ValueError(f"unknown masking strategy {strategy!r}")

    if strategy == "blockwise":
        bh, bw = -(-h // block_size), -(-w // block_size)
        n_blocks = bh * bw
        chosen = rng.choice(n_blocks, size=int(np.floor(ratio * n_blocks)), replace=False)
        masked = set()
        for b in chosen.tolist():
            bx, by = divmod(b, bw)
            for x in range(bx * block_size, min((bx + 1) * block_size, h)):
                for y in range(by * block_size, min((by + 1) * block_size, w)):
                    masked.add((x, y))
    else:
        ordered = sorted(candidates)
        k = int(np.floor(ratio * len(ordered)))
        chosen = rng.choice(len(ordered), size=k, replace=False)
        masked = {ordered[i] for i in chosen.tolist()}

    return MaskPlan(candidates, frozenset(masked), float(ratio), strategy, int(seed), (h, w))


def apply_mask(image: np.ndarray, plan: MaskPlan) -> np.ndarray:
    image = np.asarray(image)
    out = image.copy()
    if not plan.masked:
        return out
    h, w = image.shape[-2:]
    xs, ys = (np.fromiter(c, dtype=np.int64) for c in zip(*plan.masked))
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= h or ys.max() >= w:
        raise CoordinateOutOfRange(f"mask coordinate outside {h} x {w} image")
    out[..., xs, ys] = 0
    return out


def ratio_at(schedule: RatioSchedule, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if schedule.kind == "static":
        return schedule.values[0]
    k = len(schedule.values)
    return schedule.values[k * epoch // total_epochs]


def sample_seed(seed: int, epoch: int, index: int) -> int:
    """Per-sample mask seed; a fresh draw every epoch, stable across runs."""
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0]) ^ index
