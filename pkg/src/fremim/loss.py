"""Spectral reconstruction losses and the fine-tuning loss.

All functions take torch tensors shaped ``(..., C, H, W)``; spectra are the
unnormalized forward transforms. :class:`~fremim.spectral.Spectrum` objects are
accepted wherever a spectrum is expected.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from . import spectral
from .errors import ConfigError, LabelOutOfRange, ShapeMismatch

LOSS_KINDS = ("focal", "l1", "mse")
TARGET_KINDS = ("high_pass", "low_pass", "all_pass", "raw_image", "none")


@dataclass
class LossConfig:
    alpha: float = 3.0
    beta: float = 1.0
    pb: float = 10.0
    kind: str = "focal"
    low_target: str = "high_pass"
    high_target: str = "low_pass"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"loss.alpha must be > 0, got {self.alpha}")
        if not self.beta >= 0:
            raise ConfigError(f"loss.beta must be >= 0, got {self.beta}")
        if not self.pb >= 0:
            raise ConfigError(f"loss.pb must be >= 0, got {self.pb}")
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        for t in (self.low_target, self.high_target):
            if t not in TARGET_KINDS:
                raise ConfigError(f"target kind must be one of {TARGET_KINDS}, got {t!r}")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, spectral.Spectrum):
        x = x.data
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def gamma(f, f_hat) -> torch.Tensor:
    """Frequency distance: modulus of the complex difference."""
    return torch.abs(_as_tensor(f) - _as_tensor(f_hat))


def focal_frequency_loss(pred_spec, target_spec, beta: float = 1.0) -> torch.Tensor:
    """Mean over bins and channels of ``w * gamma**2`` with ``w = gamma**beta`` frozen."""
    pred, target = _as_tensor(pred_spec), _as_tensor(target_spec)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"spectrum shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = pred - target
    sq = diff.real ** 2 + diff.imag ** 2 if diff.is_complex() else diff ** 2
    # 0**0 == 1 in torch, matching w == 1 everywhere when beta == 0
    weight = sq.detach() ** (beta / 2.0)
    return (weight * sq).mean()


def _pair_loss(pred: torch.Tensor, target: torch.Tensor, kind: str, beta: float) -> torch.Tensor:
    if kind == "focal":
        return focal_frequency_loss(pred, target, beta)
    if pred.is_complex():
        pred, target = torch.view_as_real(pred), torch.view_as_real(target)
    if kind == "l1":
        return F.l1_loss(pred, target)
    if kind == "mse":
        return F.mse_loss(pred, target)
    raise ConfigError(f"unknown loss kind {kind!r}")


@lru_cache(maxsize=64)
def _keep_mask(h: int, w: int, pb: float, kind: str) -> torch.Tensor:
    return torch.from_numpy(spectral.band_mask(h, w, pb, kind))


def filtered_spectrum(image: torch.Tensor, kind: str, pb: float) -> torch.Tensor:
    """Centered spectrum of ``image`` with the ideal band filter applied."""
    spec = torch.fft.fftshift(torch.fft.fft2(image), dim=(-2, -1))
    if kind == "all_pass":
        return spec
    keep = _keep_mask(image.shape[-2], image.shape[-1], float(pb), kind)
    return spec * keep.to(spec.device)


def branch_loss(pred, target, filter_kind: str = "high_pass", pb: float = 10.0,
                loss_kind: str = "focal", beta: float = 1.0) -> torch.Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if filter_kind == "none":
        return pred.sum() * 0.0
    if filter_kind == "raw_image":
        return _pair_loss(pred, target, loss_kind, beta)
    if filter_kind not in spectral.FILTER_KINDS:
        raise ConfigError(f"unknown filter kind {filter_kind!r}")
    return _pair_loss(filtered_spectrum(pred, filter_kind, pb),
                      filtered_spectrum(target, filter_kind, pb), loss_kind, beta)


def overall_loss(p_low, p_high, target, cfg: LossConfig | None = None) -> torch.Tensor:
    """High-pass loss on the low-level branch plus ``alpha`` times the low-pass loss on the high-level branch."""
    cfg = cfg or LossConfig()
    low = branch_loss(p_low, target, cfg.low_target, cfg.pb, cfg.kind, cfg.beta)
    high = branch_loss(p_high, target, cfg.high_target, cfg.pb, cfg.kind, cfg.beta)
    return low + cfg.alpha * high


def soft_dice_loss(probs: torch.Tensor, onehot: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    dims = (0, 2, 3)
    inter = (probs * onehot).sum(dims)
    total = probs.sum(dims) + onehot.sum(dims)
    return 1.0 - ((2 * inter + eps) / (total + eps)).mean()


def finetune_loss_terms(scores: torch.Tensor, labels: torch.Tensor):
    """Cross-entropy and soft Dice terms for ``N x K x H x W`` logits and ``N x H x W`` labels."""
    if scores.ndim == 3:
        scores, labels = scores[None], labels[None]
    k = scores.shape[1]
    if scores.shape[0] != labels.shape[0] or scores.shape[2:] != labels.shape[1:]:
        raise ShapeMismatch(f"scores {tuple(scores.shape)} vs labels {tuple(labels.shape)}")
    labels = labels.long()
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    ce = F.cross_entropy(scores, labels)
    onehot = F.one_hot(labels, k).permute(0, 3, 1, 2).to(scores.dtype)
    return ce, soft_dice_loss(scores.softmax(1), onehot)


def finetune_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    ce, dice = finetune_loss_terms(scores, labels)
    return 0.5 * (ce + dice)
