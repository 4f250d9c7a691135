"""Least-squares adversarial objectives, the consistency regularizer and the supervised L1 loss.

All expectations are realized as batch means (patch maps are additionally
averaged over space). ``gamma=1`` selects the discriminator step and
``gamma=0`` the target-encoder step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

LAMBDA_REG = 0.7


@dataclass(frozen=True)
class UpdatePhase:
    gamma: int

    def __post_init__(self):
        if self.gamma not in (0, 1):
            raise ValueError(f"gamma must be 0 or 1, got {self.gamma!r}")

    @property
    def is_discriminator_step(self) -> bool:
        return self.gamma == 1


DISCRIMINATOR_STEP = UpdatePhase(1)
ENCODER_STEP = UpdatePhase(0)


@dataclass
class LossBreakdown:
    l_ld: torch.Tensor
    l_dd: torch.Tensor
    l_reg: torch.Tensor
    total: torch.Tensor
    lambda_reg: float = LAMBDA_REG
    phase: UpdatePhase = ENCODER_STEP

    def as_row(self) -> dict[str, float]:
        return {
            "phase": self.phase.gamma,
            "l_ld": float(self.l_ld),
            "l_dd": float(self.l_dd),
            "l_reg": float(self.l_reg),
            "total": float(self.total),
        }


def _phase(phase) -> UpdatePhase:
    return phase if isinstance(phase, UpdatePhase) else UpdatePhase(int(phase))


def _nonempty(t: torch.Tensor, what: str):
    if t is None or t.numel() == 0:
        raise ValueError(f"{what} batch is empty")


def _least_squares(real, fake, phase: UpdatePhase) -> torch.Tensor:
    if phase.gamma == 1:
        _nonempty(real, "source/real scores")
        _nonempty(fake, "target/fake scores")
        return ((real - 1) ** 2).mean() + (fake**2).mean()
    _nonempty(fake, "target/fake scores")
    return ((fake - 1) ** 2).mean()


def latent_adversarial_loss(scores_source, scores_target, phase) -> torch.Tensor:
    """LSGAN latent objective: source latents labelled 1, target latents 0 (or 1 for the adversary)."""
    return _least_squares(scores_source, scores_target, _phase(phase))


def depth_adversarial_loss(scores_real, scores_fake, phase) -> torch.Tensor:
    return _least_squares(scores_real, scores_fake, _phase(phase))


def consistency_loss(latent_source_on_target, latent_target_on_target, phase) -> torch.Tensor:
    """Mean absolute difference between frozen-source and target encodings of target images."""
    a, b = latent_source_on_target, latent_target_on_target
    if a.shape != b.shape:
        raise ValueError(f"latent shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if _phase(phase).gamma == 1:
        return torch.zeros((), dtype=b.dtype)
    _nonempty(b, "target latent")
    return (a - b).abs().mean()


def combined_adaptation_loss(l_ld, l_dd, l_reg, lambda_reg=LAMBDA_REG, phase=None, phases=()) -> LossBreakdown:
    """Sum the adversarial terms and the weighted regularizer.

    ``phases`` lists the phase each part was computed under; mixing phases is
    an error.
    """
    if len({_phase(p).gamma for p in phases}) > 1:
        raise ValueError("loss parts were computed under different phases")
    if phase is None:
        phase = _phase(phases[0]) if phases else ENCODER_STEP
    # plain numbers are summed in double precision; tensors keep their dtype
    l_ld, l_dd, l_reg = (v if isinstance(v, torch.Tensor) else torch.tensor(float(v), dtype=torch.float64)
                         for v in (l_ld, l_dd, l_reg))
    total = l_ld + l_dd + lambda_reg * l_reg
    return LossBreakdown(l_ld, l_dd, l_reg, total, lambda_reg, _phase(phase))


def supervised_l1_loss(pred, gt, valid_mask=None) -> torch.Tensor:
    """Mean absolute error over valid ground-truth pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")
    if valid_mask is None:
        valid_mask = torch.ones_like(gt, dtype=torch.bool)
    n = valid_mask.sum()
    if n == 0:
        raise ValueError("no valid ground-truth pixels")
    return torch.where(valid_mask, (pred - gt).abs(), 0.0).sum() / n
