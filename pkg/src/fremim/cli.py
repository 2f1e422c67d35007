"""Command-line entry point: ``fremim <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data, spectral
from .errors import ConfigError, FremimError

log = logging.getLogger("fremim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_common(p, data_required=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", default="desk", help="named preset used when --config is absent")
    p.add_argument("--data", required=data_required, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fremim", description="Frequency-domain masked image modeling at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", help="masked spectral pretraining")
    _add_common(p)

    p = sub.add_parser("finetune", help="five-fold fine-tuning for segmentation")
    _add_common(p)
    p.add_argument("--init", help="pretrain checkpoint (shorthand for --set init=PATH)")
    p.add_argument("--folds", help="comma-separated fold ids to run (default: all five)")

    p = sub.add_parser("eval", help="score a fine-tuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int)
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="run an ablation grid against the scratch baseline")
    _add_common(p)
    p.add_argument("--grid", default="strategy",
                   help=f"named grid ({', '.join(['all'] + list(_grid_names()))}) or JSON file")
    p.add_argument("--finetune-config", help="JSON config for the fine-tuning phase")
    p.add_argument("--finetune-set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--folds", help="comma-separated fold ids (default: all five)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("plot-spectrum", help="write log-magnitude spectrum PGMs per channel")
    p.add_argument("--image", required=True, help=".tns image container")
    p.add_argument("--pb", type=int, default=10)
    p.add_argument("--out", required=True)
    return parser


def _grid_names():
    from .ablation import PAPER_GRIDS
    return PAPER_GRIDS


def _int_list(text):
    if text is None:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _resolve_config(path, preset, phase, overrides, seed=None):
    try:
        if path is not None:
            if not Path(path).is_file():
                raise UsageError(f"config file {path!r} not found")
            cfg = config_mod.load_config(path)
        else:
            cfg = config_mod.preset(preset, phase)
        extra = {"phase": phase}
        if seed is not None:
            extra["seed"] = seed
        cfg = config_mod.with_overrides(cfg, extra)
        return config_mod.with_overrides(cfg, list(overrides))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _need_dir(path, what="directory"):
    if not Path(path).is_dir():
        raise UsageError(f"{what} {path!r} not found")


def write_pgm(path, image: np.ndarray) -> None:
    """Binary greyscale PGM (P5) of a 2D uint8 array."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def spectrum_panels(image: np.ndarray, pb: float) -> dict[str, np.ndarray]:
    """Centered log-magnitude spectra (all / low-pass / high-pass), shape C x H x W each."""
    spec = spectral.center(spectral.dft2(image))
    return {
        "all": spectral.log_magnitude(spec),
        "low": spectral.log_magnitude(spectral.low_pass(spec, pb)),
        "high": spectral.log_magnitude(spectral.high_pass(spec, pb)),
    }


def cmd_gen_data(args):
    ds = data.gen_dataset(args.n, args.seed, args.size, args.channels, args.classes)
    data.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")


def cmd_pretrain(args):
    from .pipeline import pretrain
    _need_dir(args.data, "dataset directory")
    cfg = _resolve_config(args.config, args.preset, "pretrain", args.set, args.seed)
    ds = data.load_dataset(args.data)
    record, _ = pretrain(cfg, ds, out_dir=args.out)
    print(f"pretrained {record.steps} steps, final loss {record.losses[-1]:.6g}; "
          f"checkpoint {record.checkpoints[0]}")


def cmd_finetune(args):
    from .metrics import format_report
    from .pipeline import finetune
    _need_dir(args.data, "dataset directory")
    overrides = list(args.set)
    if args.init:
        if not Path(args.init).is_file():
            raise UsageError(f"checkpoint {args.init!r} not found")
        overrides.append(f"init={args.init}")
    cfg = _resolve_config(args.config, args.preset, "finetune", overrides, args.seed)
    ds = data.load_dataset(args.data)
    result = finetune(cfg, ds, fold_ids=_int_list(args.folds), out_dir=args.out)
    for r in result.records:
        print(format_report(r.report, f"fold {r.fold}"))
        print()
    print(format_report(result.mean, "mean over folds"))


def cmd_eval(args):
    from .metrics import format_report
    from .pipeline import eval_checkpoint
    _need_dir(args.data, "dataset directory")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint!r} not found")
    report = eval_checkpoint(args.checkpoint, data.load_dataset(args.data), args.fold)
    print(format_report(report, f"eval {args.checkpoint}"))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "report.json", "w") as fh:
            fh.write(report.to_json() + "\n")


def cmd_ablate(args):
    from .ablation import load_grid, run_ablation
    _need_dir(args.data, "dataset directory")
    pre = _resolve_config(args.config, args.preset, "pretrain", args.set, args.seed)
    fine = _resolve_config(args.finetune_config, args.preset, "finetune", args.finetune_set,
                           args.seed)
    try:
        grid = load_grid(args.grid)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    ds = data.load_dataset(args.data)
    report = run_ablation(grid, pre, fine, ds, seeds=_int_list(args.seeds),
                          fold_ids=_int_list(args.folds), jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.json", "w") as fh:
        json.dump({"grid": grid, "pretrain": pre.to_dict(), "finetune": fine.to_dict(),
                   "report": report.to_dict()}, fh, indent=2)
        fh.write("\n")
    text = report.format()
    (out / "ablation.txt").write_text(text + "\n")
    print(text)


def cmd_plot_spectrum(args):
    if not Path(args.image).is_file():
        raise UsageError(f"image {args.image!r} not found")
    if args.pb < 0:
        raise UsageError("--pb must be >= 0")
    image = data.read_container(args.image).astype(np.float64)
    if image.ndim == 2:
        image = image[None]
    panels = spectrum_panels(image, args.pb)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for c in range(image.shape[0]):
        peak = panels["all"][c].max() or 1.0
        for name, arr in panels.items():
            write_pgm(out / f"ch{c}_{name}.pgm", np.round(255 * arr[c] / peak))
    print(f"wrote {3 * image.shape[0]} spectrum panels to {out}")


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "eval": cmd_eval, "ablate": cmd_ablate, "plot-spectrum": cmd_plot_spectrum}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fremim {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (FremimError, OSError, ValueError) as exc:
        print(f"fremim {args.command}: failed: {exc}", file=sys.stderr)
        print("arguments: " + json.dumps(vars(args), default=str), file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
