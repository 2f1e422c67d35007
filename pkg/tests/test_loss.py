import math

import numpy as np
import pytest
import torch

from fremim import loss, spectral
from fremim.errors import LabelOutOfRange, ShapeMismatch
from fremim.loss import LossConfig

import oracles


def t64(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def test_gamma():
    assert float(loss.gamma(torch.tensor(1 + 2j), torch.tensor(1 + 2j))) == 0
    assert float(loss.gamma(torch.tensor(3 + 4j), torch.tensor(0j))) == 5
    a, b = torch.tensor(0.3 - 1.2j), torch.tensor(-2.0 + 0.5j)
    assert float(loss.gamma(a, b)) == float(loss.gamma(b, a))


def test_focal_zero_for_identical(rng):
    s = torch.as_tensor(rng.normal(size=(2, 4, 4)) + 1j * rng.normal(size=(2, 4, 4)))
    assert float(loss.focal_frequency_loss(s, s)) == 0.0


def test_focal_hand_case():
    target = torch.zeros(2, 2, dtype=torch.complex128)
    pred = target.clone()
    pred[1, 0] = 2.0
    assert float(loss.focal_frequency_loss(pred, target, beta=1.0)) == 2.0


def test_focal_beta_zero_is_mean_squared_distance(rng):
    p = torch.as_tensor(rng.normal(size=(3, 4, 4)) + 1j * rng.normal(size=(3, 4, 4)))
    t = torch.as_tensor(rng.normal(size=(3, 4, 4)) + 1j * rng.normal(size=(3, 4, 4)))
    expected = float((torch.abs(p - t) ** 2).mean())
    assert float(loss.focal_frequency_loss(p, t, beta=0.0)) == pytest.approx(expected, rel=1e-12)


def test_focal_accepts_spectrum_objects(rng):
    x, y = rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 4, 4))
    got = float(loss.focal_frequency_loss(spectral.dft2(x), spectral.dft2(y)))
    assert got == pytest.approx(oracles.focal(oracles.direct_dft2(x), oracles.direct_dft2(y), 1.0))


def test_focal_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        loss.focal_frequency_loss(torch.zeros(2, 2, dtype=torch.complex64),
                                  torch.zeros(2, 3, dtype=torch.complex64))


def test_focal_cubic_scaling(rng):
    p = torch.as_tensor(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    t = torch.as_tensor(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    base = float(loss.focal_frequency_loss(p, t))
    scaled = float(loss.focal_frequency_loss(t + 2.5 * (p - t), t))
    assert scaled == pytest.approx(2.5 ** 3 * base, rel=1e-10)


def frozen_fd_case(rng, beta=1.0):
    """Analytic (autograd) vs central-difference gradient of the weight-frozen loss w.r.t. pixels."""
    x0, target = rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 4, 4))
    t_spec = oracles.direct_dft2(target)
    weight = np.abs(oracles.direct_dft2(x0) - t_spec) ** beta

    def frozen(x):
        return oracles.focal(oracles.direct_dft2(x), t_spec, beta, weight=weight)

    fd = oracles.central_difference(frozen, x0, h=1e-6)
    x = t64(x0).requires_grad_(True)
    value = loss.focal_frequency_loss(torch.fft.fft2(x), torch.fft.fft2(t64(target)), beta)
    (analytic,) = torch.autograd.grad(value, x)
    return analytic.numpy(), fd


def test_gradient_matches_frozen_finite_differences(rng):
    for _ in range(5):
        analytic, fd = frozen_fd_case(rng)
        assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) < 1e-3


def test_weight_receives_no_gradient():
    p = torch.tensor([[1.0 + 0j, 2.0 + 0j]], requires_grad=False)
    d = torch.tensor([[0.5, -1.0]], dtype=torch.float64, requires_grad=True)
    val = loss.focal_frequency_loss(p.to(torch.complex128) + d, p.to(torch.complex128), beta=1.0)
    (g,) = torch.autograd.grad(val, d)
    # with w frozen: d/dd mean(|d| * d^2) = 2 * |d| * d / n
    np.testing.assert_allclose(g.numpy(), (2 * np.abs([[0.5, -1.0]]) * [[0.5, -1.0]]) / 2)


@pytest.mark.parametrize("kind", ["high_pass", "low_pass", "all_pass", "raw_image", "none"])
@pytest.mark.parametrize("loss_kind", loss.LOSS_KINDS)
def test_branch_loss_zero_at_identity(rng, kind, loss_kind):
    x = t64(rng.normal(size=(2, 8, 8)))
    assert float(loss.branch_loss(x, x, kind, 2, loss_kind)) == 0.0


def test_branch_loss_band_orthogonality(rng):
    target = rng.normal(size=(1, 16, 16))
    spec = spectral.center(spectral.dft2(target))
    bump = np.zeros_like(spec.data)
    bump[0, 8, 9], bump[0, 8, 7] = 5.0, 5.0  # conjugate pair inside radius 3
    pred = spectral.idft2(spectral.uncenter(spectral.Spectrum(spec.data + bump, True)))
    assert float(loss.branch_loss(t64(pred), t64(target), "high_pass", 3)) == pytest.approx(0, abs=1e-18)
    # two bins at distance 5, each contributing 5 * 5**2, over 256 bins
    assert float(loss.branch_loss(t64(pred), t64(target), "low_pass", 3)) == pytest.approx(250 / 256)


def test_branch_loss_matches_compositional_oracle(rng):
    for kind in ("high_pass", "low_pass", "all_pass"):
        p, t = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))
        got = float(loss.branch_loss(t64(p), t64(t), kind, 1.0))
        assert got == pytest.approx(oracles.branch(p, t, kind, 1.0), rel=1e-6, abs=1e-12)


def test_branch_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        loss.branch_loss(torch.zeros(1, 4, 4), torch.zeros(1, 4, 5))


def test_overall_loss_identity_and_alpha_linearity(rng):
    t = t64(rng.normal(size=(1, 8, 8)))
    assert float(loss.overall_loss(t, t, t)) == 0.0
    pl, ph = t64(rng.normal(size=(1, 8, 8))), t64(rng.normal(size=(1, 8, 8)))
    low = float(loss.branch_loss(pl, t, "high_pass", 10))
    l3 = float(loss.overall_loss(pl, ph, t, LossConfig(alpha=3)))
    l6 = float(loss.overall_loss(pl, ph, t, LossConfig(alpha=6)))
    assert l6 - low == pytest.approx(2 * (l3 - low), rel=1e-12)


def test_overall_loss_default_matches_oracle(rng):
    pl, ph, t = (rng.normal(size=(2, 4, 4)) for _ in range(3))
    expected = oracles.branch(pl, t, "high_pass", 10) + 3 * oracles.branch(ph, t, "low_pass", 10)
    got = float(loss.overall_loss(t64(pl), t64(ph), t64(t)))
    assert got == pytest.approx(expected, rel=1e-6)


def test_overall_loss_target_override(rng):
    pl, ph, t = (t64(rng.normal(size=(1, 8, 8))) for _ in range(3))
    cfg = LossConfig(low_target="none", high_target="low_pass")
    assert float(loss.overall_loss(pl, ph, t, cfg)) == pytest.approx(
        3 * float(loss.branch_loss(ph, t, "low_pass", 10)))


def test_loss_config_validation():
    for bad in ({"alpha": 0}, {"beta": -1}, {"pb": -2}, {"kind": "huber"}, {"low_target": "x"}):
        with pytest.raises(ValueError):
            LossConfig(**bad)


def test_finetune_loss_uniform_scores():
    scores = torch.zeros(2, 4, 8, 8)
    labels = torch.randint(0, 4, (2, 8, 8))
    ce, _ = loss.finetune_loss_terms(scores, labels)
    assert float(ce) == pytest.approx(math.log(4))


def test_finetune_loss_perfect_prediction():
    labels = torch.randint(0, 4, (2, 8, 8))
    scores = 50.0 * torch.nn.functional.one_hot(labels, 4).permute(0, 3, 1, 2).float()
    ce, dice = loss.finetune_loss_terms(scores, labels)
    assert float(ce) < 1e-6 and float(dice) < 1e-6


def test_finetune_loss_nonnegative_and_checks_labels(rng):
    for _ in range(20):
        scores = torch.as_tensor(rng.normal(size=(2, 3, 4, 4)) * 5)
        labels = torch.as_tensor(rng.integers(0, 3, (2, 4, 4)))
        assert float(loss.finetune_loss(scores, labels)) >= 0
    with pytest.raises(LabelOutOfRange):
        loss.finetune_loss(torch.zeros(1, 3, 4, 4), torch.full((1, 4, 4), 3))
