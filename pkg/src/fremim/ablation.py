"""One-factor-at-a-time ablation grids mirroring the published ablation tables."""
from __future__ import annotations

import json
import logging
import multiprocessing as mp
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import TrainConfig
from .data import PhantomDataset
from .errors import ConfigError
from .pipeline import finetune, pretrain

log = logging.getLogger(__name__)

BASELINE = "baseline"

_TARGET_LABELS = {"high_pass": "high-pass", "low_pass": "low-pass", "all_pass": "all frequency",
                  "raw_image": "original image", "none": "-"}
_STRATEGY_LABELS = {"random": "random mask", "blockwise": "block wise mask",
                    "foreground": "foreground mask"}

# the rows of each published ablation table, in the published order
PAPER_GRIDS = {
    "target": {"loss.low_target,loss.high_target": [
        ["high_pass", "none"], ["none", "low_pass"], ["raw_image", "raw_image"],
        ["all_pass", "all_pass"], ["low_pass", "high_pass"], ["high_pass", "low_pass"]]},
    "strategy": {"mask.strategy": ["random", "blockwise", "foreground"]},
    "ratio": {"mask.ratio": [0.75, 0.5, 0.25, 0.15]},
    "schedule": {"mask.schedule": [[0.15, 0.20, 0.25], [0.25, 0.50, 0.75]]},
    "alpha": {"loss.alpha": [0.5, 1, 3, 5]},
    "pb": {"loss.pb": [5, 10, 20, 50]},
    "samples": {"sample_fraction": [0.003, 0.1, 1.0]},
    "decoder_loss": {"decoder.kind,loss.kind": [
        ["single", "focal"], ["bad", "l1"], ["bad", "mse"], ["bad", "focal"]]},
}
PAPER_GRIDS_FLAT = {axis: values for g in PAPER_GRIDS.values() for axis, values in g.items()}


def row_label(key: str, value) -> str:
    if key == "mask.strategy":
        return _STRATEGY_LABELS.get(value, str(value))
    if key == "mask.ratio":
        return f"{float(value):.2f}"
    if key == "mask.schedule":
        return ", ".join(f"{float(v):.2f}" for v in value)
    if key in ("loss.low_target", "loss.high_target"):
        return _TARGET_LABELS.get(value, str(value))
    if key == "sample_fraction":
        return f"{100 * float(value):g}%"
    if key == "decoder.kind":
        return {"bad": "BAD", "single": "Single"}.get(value, str(value))
    if key == "loss.kind":
        return {"focal": "Focal", "l1": "L1", "mse": "MSE"}.get(value, str(value))
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def split_axis(axis: str, values) -> tuple[list[str], list[list]]:
    """Normalize ``"a,b": [[x, y], ...]`` and ``"a": [x, ...]`` to keys plus value tuples."""
    keys = [k.strip() for k in axis.split(",")]
    rows = []
    for v in values:
        v = list(v) if len(keys) > 1 else [v]
        if len(v) != len(keys):
            raise ConfigError(f"axis {axis!r}: value {v} does not match {len(keys)} keys")
        rows.append(v)
    return keys, rows


def axis_labels(axis: str, values) -> list[str]:
    keys, rows = split_axis(axis, values)
    return [" | ".join(row_label(k, v) for k, v in zip(keys, row)) for row in rows]


def validate_grid(grid: dict) -> None:
    for axis, values in grid.items():
        if not isinstance(values, list):
            raise ConfigError(f"grid axis {axis!r} must map to a list")
        keys, _ = split_axis(axis, values)
        for k in keys:
            config_mod.check_key(k)


def load_grid(spec) -> dict:
    """A grid from a named paper table (or ``all``), a JSON file path, or a dict."""
    if isinstance(spec, dict):
        grid = spec
    elif spec in PAPER_GRIDS:
        grid = dict(PAPER_GRIDS[spec])
    elif spec == "all":
        grid = dict(PAPER_GRIDS_FLAT)
    else:
        path = Path(spec)
        if not path.is_file():
            raise ConfigError(f"grid {spec!r} is neither a named grid nor a file")
        with open(path) as fh:
            grid = json.load(fh)
    validate_grid(grid)
    return grid


@dataclass
class AblationRow:
    label: str
    overrides: dict
    regions: dict
    mean_dice: float
    delta: float = 0.0


@dataclass
class AblationTable:
    axis: str
    rows: list[AblationRow] = field(default_factory=list)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.rows]


@dataclass
class AblationReport:
    baseline: AblationRow
    tables: list[AblationTable]
    seeds: list[int]

    def to_dict(self) -> dict:
        return {"seeds": self.seeds, "baseline": asdict(self.baseline),
                "tables": [asdict(t) for t in self.tables]}

    def format(self) -> str:
        blocks = []
        tables = self.tables or [AblationTable("(none)")]
        for table in tables:
            head = (f"{table.axis:<34}{'R3(ET)':>9}{'R1(WT)':>9}{'R2(TC)':>9}"
                    f"{'Average':>9}{'delta':>9}")
            lines = [head, "-" * len(head)]
            for row in [self.baseline] + table.rows:
                r = row.regions
                delta = "" if row is self.baseline else f"{100 * row.delta:+9.2f}"
                lines.append(
                    f"{row.label:<34}{100 * r.get('region_3', float('nan')):9.2f}"
                    f"{100 * r.get('region_1', float('nan')):9.2f}"
                    f"{100 * r.get('region_2', float('nan')):9.2f}"
                    f"{100 * row.mean_dice:9.2f}{delta}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks)


def _cell(args) -> tuple[dict, float]:
    """Pretrain (unless baseline) then fine-tune one cell for one seed."""
    pre_cfg, fine_cfg, dataset, fold_ids = args
    with tempfile.TemporaryDirectory() as tmp:
        if pre_cfg is not None:
            pretrain(pre_cfg, dataset, out_dir=tmp)
            fine_cfg = config_mod.with_overrides(fine_cfg, {"init": str(Path(tmp) / "pretrain.ckpt")})
        result = finetune(fine_cfg, dataset, fold_ids=fold_ids)
    return {k: r.dice for k, r in result.mean.regions.items()}, result.mean.mean_dice


def run_ablation(grid, pre_cfg: TrainConfig, fine_cfg: TrainConfig, dataset: PhantomDataset,
                 seeds=None, fold_ids=None, jobs: int = 1) -> AblationReport:
    """Run every grid row (pretrain + fine-tune) and a shared scratch baseline.

    Each axis of ``grid`` becomes its own table; rows differ from ``pre_cfg``
    only in that axis' keys. Scores are averaged over ``seeds``.
    """
    grid = load_grid(grid)
    seeds = list(seeds) if seeds is not None else [pre_cfg.seed]
    fine_cfg = config_mod.with_overrides(fine_cfg, {"init": "scratch"})

    cells = [(None, None, BASELINE, {})]
    for axis, values in grid.items():
        keys, rows = split_axis(axis, values)
        for row, label in zip(rows, axis_labels(axis, values)):
            overrides = dict(zip(keys, row))
            cells.append((axis, config_mod.with_overrides(pre_cfg, overrides), label, overrides))

    jobs_args = []
    for axis, cfg, label, overrides in cells:
        for s in seeds:
            p = None if cfg is None else config_mod.with_overrides(cfg, {"seed": s})
            f = config_mod.with_overrides(fine_cfg, {"seed": s})
            jobs_args.append((p, f, dataset, fold_ids))

    if jobs > 1:
        with ProcessPoolExecutor(jobs, mp_context=mp.get_context("spawn")) as ex:
            results = list(ex.map(_cell, jobs_args))
    else:
        results = [_cell(a) for a in jobs_args]

    rows_out = []
    for i, (axis, _, label, overrides) in enumerate(cells):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        regions = {k: float(np.mean([c[0][k] for c in chunk])) for k in chunk[0][0]}
        rows_out.append((axis, AblationRow(label, overrides, regions,
                                           float(np.mean([c[1] for c in chunk])))))
        log.info("ablation cell %s: mean dice %.4f", label, rows_out[-1][1].mean_dice)

    baseline = rows_out[0][1]
    tables = {axis: AblationTable(axis) for axis in grid}
    for axis, row in rows_out[1:]:
        row.delta = row.mean_dice - baseline.mean_dice
        tables[axis].rows.append(row)
    return AblationReport(baseline, list(tables.values()), seeds)
