import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from depthadapt.losses import (
    DISCRIMINATOR_STEP,
    ENCODER_STEP,
    UpdatePhase,
    combined_adaptation_loss,
    consistency_loss,
    depth_adversarial_loss,
    latent_adversarial_loss,
    supervised_l1_loss,
)


def full(v, *shape):
    return torch.full(shape, float(v), dtype=torch.float64)


def test_phase_values():
    assert DISCRIMINATOR_STEP.is_discriminator_step and not ENCODER_STEP.is_discriminator_step
    with pytest.raises(ValueError):
        UpdatePhase(2)


def test_latent_loss_cases():
    assert latent_adversarial_loss(full(1, 4), full(0, 4), 1).item() == 0.0
    assert latent_adversarial_loss(full(0.5, 4), full(0.5, 4), 1).item() == 0.5
    assert latent_adversarial_loss(None, full(1, 4), 0).item() == 0.0
    with pytest.raises(ValueError):
        latent_adversarial_loss(full(1, 0), full(0, 4), 1)
    with pytest.raises(ValueError):
        latent_adversarial_loss(full(1, 4), full(0, 0), 0)


def test_depth_loss_cases():
    assert depth_adversarial_loss(full(1, 2, 1, 3, 3), full(0, 2, 1, 3, 3), 1).item() == 0.0
    assert depth_adversarial_loss(None, full(0, 2, 1, 3, 3), 0).item() == 1.0
    assert depth_adversarial_loss(full(0.5, 2, 1, 3, 3), full(0.5, 2, 1, 3, 3), 1).item() == 0.5


def test_consistency_cases():
    a = torch.randn(2, 4, 3, 3, dtype=torch.float64)
    assert consistency_loss(a, a.clone(), 0).item() == 0.0
    assert consistency_loss(a, a + 0.1, 0).item() == pytest.approx(0.1, rel=1e-12)
    zero = consistency_loss(a, torch.randn_like(a), 1)
    assert zero.item() == 0.0
    with pytest.raises(ValueError):
        consistency_loss(a, a[:, :2], 0)


def test_consistency_gate_blocks_gradient():
    b = torch.randn(2, 3, requires_grad=True)
    out = consistency_loss(torch.randn(2, 3), b, 1)
    assert not out.requires_grad  # a literal constant


def test_combined_cases():
    assert float(combined_adaptation_loss(0.0, 0.0, 0.0).total) == 0.0
    b = combined_adaptation_loss(0.5, 0.5, 0.1, 0.7)
    assert float(b.total) == pytest.approx(1.07, abs=1e-15)
    assert b.lambda_reg == 0.7
    assert float(combined_adaptation_loss(0.3, 0.2, 5.0, 0.0).total) == float(combined_adaptation_loss(0.3, 0.2, 9.0, 0.0).total)
    with pytest.raises(ValueError):
        combined_adaptation_loss(0.1, 0.1, 0.1, phases=(0, 1))
    assert combined_adaptation_loss(0.1, 0.1, 0.0, phases=(1, 1)).phase == DISCRIMINATOR_STEP


def test_combined_default_lambda():
    assert combined_adaptation_loss(0, 0, 1.0).total.item() == pytest.approx(0.7)


def test_l1_cases():
    gt = torch.rand(2, 1, 4, 4) * 5
    assert supervised_l1_loss(gt, gt).item() == 0.0
    assert supervised_l1_loss(gt + 1, gt).item() == pytest.approx(1.0)
    mask = torch.zeros_like(gt, dtype=torch.bool)
    mask[..., :2] = True
    huge = torch.where(mask, gt, torch.full_like(gt, 1e6))
    pred = gt + 0.5
    assert supervised_l1_loss(pred, huge, mask).item() == pytest.approx(0.5)
    # masked brute-force oracle
    total, n = 0.0, 0
    for idx in mask.nonzero().tolist():
        total += abs(pred[tuple(idx)].item() - huge[tuple(idx)].item())
        n += 1
    assert supervised_l1_loss(pred, huge, mask).item() == pytest.approx(total / n)
    with pytest.raises(ValueError):
        supervised_l1_loss(pred, gt, torch.zeros_like(mask))
    with pytest.raises(ValueError):
        supervised_l1_loss(pred[:, :, :2], gt)


def test_l1_invalid_pixels_carry_no_gradient():
    pred = torch.rand(1, 1, 2, 2, requires_grad=True)
    mask = torch.tensor([[[[True, False], [False, True]]]])
    supervised_l1_loss(pred, torch.full((1, 1, 2, 2), float("inf")).where(~mask, torch.zeros(1)), mask).backward()
    assert pred.grad[~mask].abs().sum() == 0 and torch.isfinite(pred.grad).all()


scores = st.lists(st.floats(-3, 3), min_size=1, max_size=8)


@given(scores, scores, st.sampled_from([0, 1]))
def test_losses_nonnegative(s, t, gamma):
    a = torch.tensor(s, dtype=torch.float64)
    b = torch.tensor(t, dtype=torch.float64)
    assert latent_adversarial_loss(a, b, gamma) >= 0
    assert depth_adversarial_loss(a, b, gamma) >= 0
    n = min(len(s), len(t))
    assert consistency_loss(a[:n], b[:n], gamma) >= 0


@given(scores, scores)
def test_batch_mean_linearity(s, t):
    a = torch.tensor(s, dtype=torch.float64)
    b = torch.tensor(t, dtype=torch.float64)
    per_sample = [((x - 1) ** 2).item() for x in a]
    assert latent_adversarial_loss(None, a, 0).item() == pytest.approx(sum(per_sample) / len(per_sample), rel=1e-12)
    n = min(len(s), len(t))
    whole = latent_adversarial_loss(a[:n], b[:n], 1).item()
    pieces = [latent_adversarial_loss(a[i : i + 1], b[i : i + 1], 1).item() for i in range(n)]
    assert whole == pytest.approx(sum(pieces) / n, rel=1e-12, abs=1e-15)


def _fd_grad(f, x, eps=1e-6):
    g = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        up = f(x).item()
        flat[i] = old - eps
        down = f(x).item()
        flat[i] = old
        g.view(-1)[i] = (up - down) / (2 * eps)
    return g


def _check_grad(f, x):
    x = x.clone().requires_grad_(True)
    f(x).backward()
    numeric = _fd_grad(f, x.detach().clone())
    rel = (x.grad - numeric).abs().max() / numeric.abs().max().clamp_min(1e-12)
    return rel.item()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_adversarial_gradients_match_finite_differences(seed):
    g = torch.Generator().manual_seed(seed)
    src = torch.randn(5, generator=g, dtype=torch.float64)
    tgt = torch.randn(5, generator=g, dtype=torch.float64)
    real = torch.randn(2, 1, 3, 3, generator=g, dtype=torch.float64)
    fake = torch.randn(2, 1, 3, 3, generator=g, dtype=torch.float64)
    assert _check_grad(lambda s: latent_adversarial_loss(s, tgt, 1), src) < 1e-4
    assert _check_grad(lambda t: latent_adversarial_loss(src, t, 1), tgt) < 1e-4
    assert _check_grad(lambda t: latent_adversarial_loss(None, t, 0), tgt) < 1e-4
    assert _check_grad(lambda r: depth_adversarial_loss(r, fake, 1), real) < 1e-4
    assert _check_grad(lambda f: depth_adversarial_loss(real, f, 1), fake) < 1e-4
    assert _check_grad(lambda f: depth_adversarial_loss(None, f, 0), fake) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_consistency_gradient_matches_finite_differences(seed):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(2, 3, 2, 2, generator=g, dtype=torch.float64)
    # keep every difference away from the |.| kink
    b = a + (torch.rand(2, 3, 2, 2, generator=g, dtype=torch.float64) + 0.1) * torch.sign(torch.randn(2, 3, 2, 2, generator=g, dtype=torch.float64))
    assert _check_grad(lambda z: consistency_loss(a, z, 0), b) < 1e-4


def test_gate_zero_gradients():
    s = torch.randn(4, requires_grad=True)
    t = torch.randn(4, requires_grad=True)
    # gamma = 0: the source term and the target-as-fake term are gated out
    latent_adversarial_loss(s, t, 0).backward()
    assert s.grad is None or torch.all(s.grad == 0)
    assert torch.equal(t.grad, 2 * (t.detach() - 1) / 4)
