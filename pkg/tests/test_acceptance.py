"""Exit criteria. Each test records one PASS/FAIL line in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import contextlib
import json
import math
import time

import numpy as np
import pytest
import torch

from fremim import ablation, cli, config, data, masking, metrics, pipeline, spectral
from fremim.decoder import BilateralAggregationDecoder, FrequencyMappingBlock
from fremim.loss import focal_frequency_loss
from fremim.model import StageFeatures

import oracles
from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(number, title, budget_s):
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        ACCEPTANCE_LINES.append(f"FAIL  {number:>2}. {title} ({elapsed:.1f}s): {exc}")
        print(ACCEPTANCE_LINES[-1])
        raise
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    ACCEPTANCE_LINES.append(f"PASS  {number:>2}. {title} ({elapsed:.1f}s){': ' + extra if extra else ''}")
    print(ACCEPTANCE_LINES[-1])


def test_c01_spectral_oracle():
    rng = np.random.default_rng(1)
    with criterion(1, "fast DFT/IDFT equal the direct double sums", 30) as d:
        worst = 0.0
        for h in (2, 3, 4, 5, 8):
            for w in (2, 3, 4, 5, 8):
                x = rng.normal(size=(100, h, w))
                worst = max(worst, np.abs(spectral.dft2(x).data - oracles.direct_dft2(x)).max())
                s = rng.normal(size=(100, h, w)) + 1j * rng.normal(size=(100, h, w))
                fast = spectral.idft2(spectral.Spectrum(s), real=False)
                worst = max(worst, np.abs(fast - oracles.direct_idft2(s)).max())
        d["max_abs_err"] = f"{worst:.2e}"
        assert worst < 1e-10


def test_c02_parseval_and_roundtrip():
    rng = np.random.default_rng(2)
    with criterion(2, "Parseval and roundtrip on 1000 random 8x8 inputs", 30) as d:
        x = rng.normal(size=(1000, 8, 8))
        f = spectral.dft2(x).data
        energy = np.sum(x ** 2, axis=(1, 2))
        pars = np.abs(np.sum(np.abs(f) ** 2, axis=(1, 2)) / 64 - energy) / energy
        back = spectral.idft2(spectral.dft2(x))
        rt = np.max(np.abs(back - x), axis=(1, 2)) / np.max(np.abs(x), axis=(1, 2))
        d["parseval_rel"] = f"{pars.max():.1e}"
        d["roundtrip_rel"] = f"{rt.max():.1e}"
        assert pars.max() < 1e-6 and rt.max() < 1e-6


def test_c03_filter_partition():
    rng = np.random.default_rng(3)
    with criterion(3, "band filters partition the spectrum; 8x8 PB=2 keeps 13 bins", 10) as d:
        for n in (8, 32):
            pbs = (0, 1, 2, 5, 10, spectral.infinite_passband(n, n))
            for pb in pbs:
                for _ in range(10):
                    s = spectral.Spectrum(rng.normal(size=(4, n, n)) + 1j * rng.normal(size=(4, n, n)),
                                          centered=True)
                    lo, hi = spectral.low_pass(s, pb), spectral.high_pass(s, pb)
                    assert np.array_equal((lo + hi).data, s.data)
                    assert not np.any(lo.data * hi.data)
            assert not np.any(spectral.high_pass(s, pbs[-1]).data)
        ones = spectral.Spectrum(np.ones((8, 8), dtype=complex), centered=True)
        count = int(np.count_nonzero(spectral.low_pass(ones, 2).data))
        d["bins_8x8_pb2"] = count
        assert count == int(oracles.keep_bins(8, 8, 2, "low_pass").sum()) == 13


def test_c04_focal_frequency_loss():
    rng = np.random.default_rng(4)
    with criterion(4, "focal loss hand case = 2.0; frozen-weight gradients match FD", 60) as d:
        t = torch.zeros(2, 2, dtype=torch.complex128)
        p = t.clone()
        p[0, 1] = 2.0
        hand = float(focal_frequency_loss(p, t, beta=1.0))
        assert hand == 2.0
        worst = 0.0
        for _ in range(50):
            x0, target = rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 4, 4))
            t_spec = oracles.direct_dft2(target)
            weight = np.abs(oracles.direct_dft2(x0) - t_spec)

            def frozen(x):
                return oracles.focal(oracles.direct_dft2(x), t_spec, 1.0, weight=weight)

            fd = oracles.central_difference(frozen, x0, h=1e-6)
            x = torch.tensor(x0, requires_grad=True)
            val = focal_frequency_loss(torch.fft.fft2(x), torch.fft.fft2(torch.tensor(target)), 1.0)
            (g,) = torch.autograd.grad(val, x)
            worst = max(worst, np.linalg.norm(g.numpy() - fd) / np.linalg.norm(fd))
        d["hand"] = hand
        d["max_rel_grad_err"] = f"{worst:.1e}"
        assert worst < 1e-3


def test_c05_masking_laws():
    rng = np.random.default_rng(5)
    with criterion(5, "masking laws over 1000 phantoms", 60) as d:
        for i in range(1000):
            img = data.gen_phantom(50_000 + i).image
            ratio = float(rng.uniform(0, 1))
            seed = int(rng.integers(2**31))
            plan = masking.plan_mask(img, "foreground", ratio, seed)
            assert plan.masked <= plan.candidates
            assert len(plan.masked) == math.floor(ratio * len(plan.candidates))
            fg = np.all(img != 0, axis=0)
            assert all(fg[x, y] for x, y in plan.masked)
            masked = masking.apply_mask(img, plan)
            assert np.array_equal(masked[:, ~fg], img[:, ~fg])
            assert masking.plan_mask(img, "foreground", ratio, seed) == plan
        d["phantoms"] = 1000


def test_c06_fmb_identity_and_bilaterality():
    rng = np.random.default_rng(6)
    with criterion(6, "FMB identity at init; BAD bilaterality by finite differences", 60) as d:
        worst = 0.0
        for _ in range(100):
            c, h, w = (int(v) for v in rng.integers(1, 17, size=3))
            fmb = FrequencyMappingBlock(c, h, w)
            a = torch.as_tensor(rng.normal(size=(2, c, h, w)) * rng.uniform(0.1, 10),
                                dtype=torch.float32)
            with torch.no_grad():
                worst = max(worst, float((fmb(a) - a).abs().max()))
        d["fmb_max_err"] = f"{worst:.1e}"
        assert worst < 1e-4

        torch.manual_seed(6)
        bad = BilateralAggregationDecoder([2, 4]).double()
        feats = [torch.as_tensor(rng.normal(size=(1, 2, 4, 4))),
                 torch.as_tensor(rng.normal(size=(1, 4, 2, 2)))]
        h = 1e-6
        with torch.no_grad():
            for i in range(2):
                for idx in np.ndindex(feats[i].shape):
                    plus = [f.clone() for f in feats]
                    minus = [f.clone() for f in feats]
                    plus[i][idx] += h
                    minus[i][idx] -= h
                    lp, hp = bad(StageFeatures(plus))
                    lm, hm = bad(StageFeatures(minus))
                    assert float(((lp - lm) / (2 * h)).abs().max()) > 1e-8, ("A_low", i, idx)
                    assert float(((hp - hm) / (2 * h)).abs().max()) > 1e-8, ("A_high", i, idx)
        d["jacobian_columns"] = sum(f.numel() for f in feats)


@pytest.mark.slow
def test_c07_end_to_end_descent():
    ds = data.gen_dataset(64, seed=0)
    with criterion(7, "desk pretraining halves the loss in 200 steps (3 seeds)", 600) as d:
        ratios = []
        for seed in range(3):
            cfg = config.with_overrides(config.preset("desk"), {"seed": seed, "max_steps": 200})
            rec, _ = pipeline.pretrain(cfg, ds)
            assert rec.steps == 200 and all(math.isfinite(v) for v in rec.losses)
            ratios.append(float(np.median(rec.losses[-10:]) / np.median(rec.losses[:10])))
        d["final/first"] = [round(r, 3) for r in ratios]
        assert all(r < 0.5 for r in ratios)


@pytest.mark.slow
def test_c08_transfer_trend():
    ds = data.gen_dataset(128, seed=1)
    pre = config.with_overrides(config.preset("desk"), {"max_steps": 200})
    fine = config.with_overrides(config.preset("desk", "finetune"), {"max_steps": 50})
    with criterion(8, "pretrained init >= scratch - 0.01 mean composite Dice (3 seeds)", 1200) as d:
        report = ablation.run_ablation({"mask.strategy": ["foreground"]}, pre, fine, ds,
                                       seeds=[0, 1, 2])
        (row,) = report.tables[0].rows
        d["scratch"] = round(report.baseline.mean_dice, 4)
        d["pretrained"] = round(row.mean_dice, 4)
        d["delta"] = f"{row.delta:+.4f}"
        header = report.format().splitlines()[0]
        assert "delta" in header
        assert row.delta == pytest.approx(row.mean_dice - report.baseline.mean_dice)
        assert row.mean_dice >= report.baseline.mean_dice - 0.01


# rows of the published ablation tables
PAPER_ROWS = {
    "mask.strategy": ["baseline", "random mask", "block wise mask", "foreground mask"],
    "mask.ratio": ["baseline", "0.75", "0.50", "0.25", "0.15"],
    "loss.alpha": ["0.5", "1", "3", "5"],
    "loss.pb": ["5", "10", "20", "50"],
}


@pytest.mark.slow
def test_c09_ablation_structure(tmp_path, dataset_dir):
    grid = {"mask.strategy": ["foreground", "random", "blockwise"],
            "mask.ratio": [0.75, 0.5, 0.25, 0.15],
            "loss.alpha": [0.5, 1, 3, 5],
            "loss.pb": [5, 10, 20, 50]}
    (tmp_path / "grid.json").write_text(json.dumps(grid))
    with criterion(9, "ablate row sets match the published tables", 900) as d:
        code = cli.main([
            "ablate", "--data", str(dataset_dir), "--out", str(tmp_path / "out"),
            "--grid", str(tmp_path / "grid.json"), "--folds", "0",
            "--set", "max_steps=10", "--finetune-set", "max_steps=5"])
        assert code == 0
        report = json.loads((tmp_path / "out" / "ablation.json").read_text())["report"]
        tables = {t["axis"]: [r["label"] for r in t["rows"]] for t in report["tables"]}
        assert report["baseline"]["label"] == "baseline"
        for axis, expected in PAPER_ROWS.items():
            got = tables[axis]
            if expected[0] == "baseline":
                got = ["baseline"] + got
            assert set(got) == set(expected) and len(got) == len(expected), (axis, got)
        d["tables"] = len(tables)


def test_c10_metric_oracles():
    rng = np.random.default_rng(10)
    with criterion(10, "Dice/JI identity, HD95 oracle and empty-mask sentinels", 30) as d:
        worst = 0.0
        for _ in range(1000):
            a = rng.random((16, 16)) < rng.random()
            b = rng.random((16, 16)) < rng.random()
            ji = metrics.jaccard(a, b)
            worst = max(worst, abs(metrics.dice(a, b) - 2 * ji / (1 + ji)))
        assert worst < 1e-12
        p, t = np.zeros((4, 4), bool), np.zeros((4, 4), bool)
        p[0, 0], t[0, 3] = True, True
        assert metrics.hd95(p, t) == 3.0
        empty = np.zeros((4, 4), bool)
        assert metrics.hd95(empty, t) == math.inf and metrics.hd95(p, empty) == math.inf
        assert metrics.hd95(empty, empty) == 0.0 and metrics.dice(empty, empty) == 1.0
        d["dice_ji_max_err"] = f"{worst:.1e}"
