"""Pretraining, fine-tuning, checkpoints and learning-rate schedules."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import data, masking
from .config import TrainConfig
from .data import PhantomDataset
from .decoder import PretrainNet
from .errors import CheckpointError, ConfigError, DataExhausted, InsufficientForeground, TrainingDiverged
from .loss import branch_loss, finetune_loss, overall_loss
from .metrics import SegReport, evaluate, mean_report
from .model import EncoderSpec, SegmentationNet, load_encoder_weights

log = logging.getLogger(__name__)

SPEC_VERSION = 1


@dataclass
class RunRecord:
    phase: str
    losses: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    wall_clock: float = 0.0
    skipped: int = 0
    fold: int | None = None
    report: SegReport | None = None

    @property
    def steps(self) -> int:
        return len(self.losses)

    def summary(self) -> dict:
        out = {"phase": self.phase, "steps": self.steps, "wall_clock": round(self.wall_clock, 3),
               "skipped": self.skipped, "checkpoints": self.checkpoints,
               "final_loss": self.losses[-1] if self.losses else None}
        if self.fold is not None:
            out["fold"] = self.fold
        if self.report is not None:
            out["report"] = self.report.to_dict()
        return out


@dataclass
class FinetuneResult:
    records: list[RunRecord]
    mean: SegReport

    @property
    def reports(self) -> list[SegReport]:
        return [r.report for r in self.records]


def schedule_lr(kind: str, base_lr: float, epoch: int, total: int) -> float:
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    if kind == "cosine":
        return base_lr * 0.5 * (1 + math.cos(math.pi * epoch / total))
    if kind == "poly":
        return base_lr * (1 - epoch / total) ** 0.9
    raise ConfigError(f"unknown learning-rate schedule {kind!r}")


def make_optimizer(cfg: TrainConfig, params) -> torch.optim.Optimizer:
    o = cfg.optim
    if o.name == "adam":
        return torch.optim.Adam(params, lr=o.lr, weight_decay=o.weight_decay)
    return torch.optim.SGD(params, lr=o.lr, weight_decay=o.weight_decay, momentum=o.momentum)


def subset_indices(n: int, fraction: float, seed: int) -> np.ndarray:
    """Deterministic ``ceil(fraction * n)`` sample indices."""
    k = max(1, math.ceil(fraction * n - 1e-9))
    return np.sort(np.random.default_rng(seed).permutation(n)[:k])


def _epoch_plan(cfg: TrainConfig, n: int) -> tuple[int, int]:
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    if cfg.max_steps is None:
        return cfg.epochs, cfg.epochs * steps_per_epoch
    return max(1, math.ceil(cfg.max_steps / steps_per_epoch)), cfg.max_steps


def _resolve(cfg: TrainConfig, dataset: PhantomDataset) -> TrainConfig:
    if cfg.encoder.input_channels != dataset.channels:
        cfg = replace(cfg, encoder=replace(cfg.encoder, input_channels=dataset.channels))
    return cfg


def _check_loss(loss: torch.Tensor, step: int, cfg: TrainConfig) -> float:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss {value} at step {step} (phase={cfg.phase}, lr={cfg.optim.lr}, "
            f"seed={cfg.seed})")
    return value


def masked_batch(images: np.ndarray, indices, cfg: TrainConfig, epoch: int, ratio: float):
    """Mask each sample of a batch; returns ``(masked, clean, kept_indices, skipped)``."""
    masked, clean, kept = [], [], []
    for idx in indices:
        img = images[idx]
        try:
            plan = masking.plan_mask(img, cfg.mask.strategy, ratio,
                                     masking.sample_seed(cfg.seed, epoch, int(idx)),
                                     cfg.mask.block_size)
        except InsufficientForeground:
            continue
        masked.append(masking.apply_mask(img, plan))
        clean.append(img)
        kept.append(int(idx))
    skipped = len(indices) - len(kept)
    if not kept:
        return None, None, kept, skipped
    return (torch.from_numpy(np.stack(masked)), torch.from_numpy(np.stack(clean)), kept, skipped)


def pretrain_loss(net: PretrainNet, x_masked, target, cfg: TrainConfig) -> torch.Tensor:
    p_low, p_high = net(x_masked)
    if net.kind == "single":
        return branch_loss(p_high, target, "all_pass", cfg.loss.pb, cfg.loss.kind, cfg.loss.beta)
    return overall_loss(p_low, p_high, target, cfg.loss)


def build_pretrain_model(cfg: TrainConfig, image_size: int) -> PretrainNet:
    torch.manual_seed(cfg.seed)
    return PretrainNet(cfg.encoder, image_size, cfg.decoder.kind)


def pretrain(cfg: TrainConfig, dataset: PhantomDataset, out_dir=None):
    """Masked spectral pretraining; returns ``(RunRecord, PretrainNet)``.

    With ``out_dir`` the final weights go to ``pretrain.ckpt`` and the run is
    logged to ``run.json`` / ``loss.csv``.
    """
    if cfg.phase != "pretrain":
        raise ConfigError("pretrain() needs phase='pretrain'")
    cfg = _resolve(cfg, dataset)
    start = time.perf_counter()
    pool = subset_indices(len(dataset), cfg.sample_fraction, cfg.seed)
    if len(pool) == 0:
        raise DataExhausted("no samples left after sample_fraction subsetting")
    net = build_pretrain_model(cfg, dataset.size)
    opt = make_optimizer(cfg, net.parameters())
    total_epochs, total_steps = _epoch_plan(cfg, len(pool))
    schedule = cfg.mask.ratio_schedule()
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord("pretrain")
    net.train()

    step = 0
    for epoch in range(total_epochs):
        if step >= total_steps:
            break
        lr = schedule_lr(cfg.optim.schedule, cfg.optim.lr, epoch, total_epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        ratio = masking.ratio_at(schedule, epoch, total_epochs)
        order = rng.permutation(pool)
        used = 0
        for b in range(0, len(order), cfg.batch_size):
            if step >= total_steps:
                break
            x, t, kept, skipped = masked_batch(dataset.images, order[b:b + cfg.batch_size],
                                               cfg, epoch, ratio)
            record.skipped += skipped
            if not kept:
                continue
            used += len(kept)
            loss = pretrain_loss(net, x, t, cfg)
            record.losses.append(_check_loss(loss, step, cfg))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
        if used == 0 and len(order):
            raise DataExhausted(f"epoch {epoch}: every sample lacked foreground")
    if record.skipped:
        log.warning("skipped %d samples without foreground", record.skipped)

    record.wall_clock = time.perf_counter() - start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "pretrain.ckpt"
        save_checkpoint(net, ckpt, cfg, step, image_size=dataset.size)
        record.checkpoints.append(str(ckpt))
        write_run(out, cfg, record)
    return record, net


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(module: torch.nn.Module, path, cfg: TrainConfig, steps: int, **extra) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    meta = {"spec_version": SPEC_VERSION, "encoder": cfg.encoder.to_dict(), "seed": cfg.seed,
            "steps": steps, "phase": cfg.phase, "config": cfg.to_dict(), **extra}
    data.write_bundle(tensors, path, meta)


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        return data.read_bundle(path)
    except (data.FormatError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None


def pretrained_encoder_tensors(path) -> dict:
    tensors, _ = load_checkpoint(path)
    enc = {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")}
    if not enc:
        raise CheckpointError(f"{path} holds no encoder tensors")
    return enc


# -- fine-tuning --------------------------------------------------------------

def build_finetune_model(cfg: TrainConfig, encoder_tensors: dict | None = None) -> SegmentationNet:
    """Fresh segmentation net; the head's initialization depends only on ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    model = SegmentationNet(cfg.encoder, cfg.n_classes)
    if encoder_tensors is not None:
        load_encoder_weights(model.encoder, encoder_tensors)
    return model


def _init_tensors(cfg: TrainConfig):
    if cfg.init == "scratch":
        return None
    return pretrained_encoder_tensors(cfg.init)


@torch.no_grad()
def predict_labels(model: SegmentationNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    for b in range(0, len(images), batch_size):
        out.append(model(torch.from_numpy(images[b:b + batch_size])).argmax(1).numpy())
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[-2:], dtype=np.int64)


def train_segmentation(cfg: TrainConfig, dataset: PhantomDataset, train_idx,
                       encoder_tensors=None) -> tuple[SegmentationNet, RunRecord]:
    model = build_finetune_model(cfg, encoder_tensors)
    opt = make_optimizer(cfg, model.parameters())
    train_idx = np.asarray(train_idx)
    total_epochs, total_steps = _epoch_plan(cfg, len(train_idx))
    rng = np.random.default_rng(cfg.seed)
    labels = torch.from_numpy(dataset.labels.astype(np.int64))
    record = RunRecord("finetune")
    model.train()
    step = 0
    for epoch in range(total_epochs):
        if step >= total_steps:
            break
        lr = schedule_lr(cfg.optim.schedule, cfg.optim.lr, epoch, total_epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        order = rng.permutation(train_idx)
        for b in range(0, len(order), cfg.batch_size):
            if step >= total_steps:
                break
            idx = order[b:b + cfg.batch_size]
            loss = finetune_loss(model(torch.from_numpy(dataset.images[idx])), labels[idx])
            record.losses.append(_check_loss(loss, step, cfg))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
    return model, record


def finetune(cfg: TrainConfig, dataset: PhantomDataset, folds=None, fold_ids=None,
             out_dir=None) -> FinetuneResult:
    """Cross-validated fine-tuning: train on four folds, score the held-out one."""
    if cfg.phase != "finetune":
        raise ConfigError("finetune() needs phase='finetune'")
    cfg = _resolve(cfg, dataset)
    folds = folds if folds is not None else data.make_splits(len(dataset), cfg.split_seed)
    fold_ids = range(len(folds)) if fold_ids is None else fold_ids
    encoder_tensors = _init_tensors(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    records = []
    for k in fold_ids:
        start = time.perf_counter()
        held = np.asarray(folds[k])
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != k]))
        model, record = train_segmentation(cfg, dataset, train_idx, encoder_tensors)
        pred = predict_labels(model, dataset.images[held])
        record.report = evaluate(pred, dataset.labels[held], cfg.n_classes)
        record.fold = int(k)
        record.wall_clock = time.perf_counter() - start
        if out is not None:
            ckpt = out / f"fold{k}.ckpt"
            save_checkpoint(model, ckpt, cfg, record.steps, fold=int(k), n_classes=cfg.n_classes,
                            held_out=held.tolist())
            record.checkpoints.append(str(ckpt))
        records.append(record)

    result = FinetuneResult(records, mean_report([r.report for r in records]))
    if out is not None:
        write_finetune_run(out, cfg, result)
    return result


def eval_checkpoint(path, dataset: PhantomDataset, fold: int | None = None) -> SegReport:
    """Score a fine-tuned checkpoint on its held-out fold (or on ``fold`` of a fresh split)."""
    tensors, meta = load_checkpoint(path)
    try:
        spec = EncoderSpec(**meta["encoder"])
        n_classes = int(meta["n_classes"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: metadata lacks {exc}") from None
    model = SegmentationNet(spec, n_classes)
    own = model.state_dict()
    if set(own) != set(tensors):
        raise CheckpointError(f"{path} is not a segmentation checkpoint")
    for name, ref in own.items():
        if tuple(ref.shape) != tuple(tensors[name].shape):
            raise CheckpointError(f"shape mismatch for {name}")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    if fold is None and "held_out" in meta:
        held = np.asarray(meta["held_out"], dtype=np.int64)
    else:
        split_seed = meta.get("config", {}).get("split_seed", 0)
        held = data.make_splits(len(dataset), split_seed)[fold or 0]
    pred = predict_labels(model, dataset.images[held])
    return evaluate(pred, dataset.labels[held], n_classes)


# -- run logs -----------------------------------------------------------------

def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def write_run(out: Path, cfg: TrainConfig, record: RunRecord) -> None:
    with open(out / "run.json", "w") as fh:
        json.dump({"config": cfg.to_dict(), "record": record.summary()}, fh, indent=2)
        fh.write("\n")
    write_loss_csv(out / "loss.csv", record.losses)


def write_finetune_run(out: Path, cfg: TrainConfig, result: FinetuneResult) -> None:
    payload = {"config": cfg.to_dict(),
               "folds": [r.summary() for r in result.records],
               "mean_report": result.mean.to_dict()}
    with open(out / "run.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "step", "loss"])
        for r in result.records:
            for i, v in enumerate(r.losses):
                w.writerow([r.fold, i, repr(float(v))])
