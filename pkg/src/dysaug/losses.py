"""Objective terms for VAE initialisation and adversarial training.

Conventions: per-utterance quantities are *summed* over frames and
dimensions and then averaged over the batch; ``mask`` is a ``(B, T)``
boolean tensor marking valid frames (``None`` means all frames count).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

from dysaug.errors import DomainError, ShapeError, ValidationError
from dysaug.models import GaussianPosterior

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    alpha: float = 1.0  # phone CE
    beta: float = 1.0  # speaker CE
    gamma: float = 0.2  # VQ
    gan_weight: float = 1.0
    recon_weight: float = 1.0
    ssl_weight: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValidationError(f"loss weight {f.name} must be >= 0")

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(**{k: v * c for k, v in asdict(self).items()})


@dataclass
class LossReport:
    """Scalar loss values for one step; terms that were not computed stay None."""

    recon: float | None = None
    kl_content: float | None = None
    kl_speaker: float | None = None
    vq: float | None = None
    ce_phone: float | None = None
    ce_speaker: float | None = None
    ssl_reg: float | None = None
    d_loss: float | None = None
    g_loss: float | None = None
    total: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, obj: dict) -> "LossReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


def _per_utterance_sum(x: Tensor, mask: Tensor | None) -> Tensor:
    """Sum over (T, D), mean over any leading batch dims."""
    if mask is not None:
        x = x * mask.to(x.dtype).unsqueeze(-1)
    per_utt = x.sum(dim=(-2, -1))
    return per_utt.mean() if per_utt.dim() else per_utt


def kl_to_standard_normal(post: GaussianPosterior, mask: Tensor | None = None) -> Tensor:
    """KL(q || N(0, I)) = sum 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)."""
    if not (torch.isfinite(post.mean).all() and torch.isfinite(post.log_var).all()):
        raise ValidationError("non-finite posterior")
    kl = 0.5 * (post.mean.pow(2) + post.log_var.exp() - 1.0 - post.log_var)
    return _per_utterance_sum(kl, mask)


def reconstruction_nll(recon: Tensor, target: Tensor, mask: Tensor | None = None) -> Tensor:
    """Unit-variance Gaussian negative log-likelihood without the constant: 0.5 sum (x - y)^2."""
    if recon.shape != target.shape:
        raise ShapeError(f"recon {tuple(recon.shape)} vs target {tuple(target.shape)}")
    return _per_utterance_sum(0.5 * (recon - target).pow(2), mask)


def elbo(recon_nll: Tensor | float, kls: Sequence[Tensor | float], variant: str | None = None):
    """Negated variational bound: ``recon_nll + sum(kls)``.

    One KL term for the standard generator, two (content, speaker) for
    the structured one; ``variant`` enforces the arity when given.
    """
    expected = {"standard": 1, "structured": 2}.get(variant)
    if not 1 <= len(kls) <= 2 or (expected is not None and len(kls) != expected):
        raise ValidationError(f"elbo got {len(kls)} KL terms for variant {variant!r}")
    total = recon_nll
    for kl in kls:
        total = total + kl
    return total


def _check_prob(p: Tensor, name: str) -> Tensor:
    if not torch.is_tensor(p):
        p = torch.as_tensor(p, dtype=torch.float64)
    if torch.any(p < 0) or torch.any(p > 1) or not torch.isfinite(p).all():
        raise DomainError(f"{name} must lie in (0, 1)")
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def gan_losses(d_real, d_fake, saturating: bool = False) -> tuple[Tensor, Tensor]:
    """Discriminator and generator losses from discriminator probabilities.

    ``d_loss = -log D(real) - log(1 - D(fake))``.  The generator uses the
    non-saturating ``-log D(fake)`` unless ``saturating`` selects the
    minimax form ``log(1 - D(fake))``.

    Both sums share the normaliser ``(n_real + n_fake) / 2``, which is the
    plain ``mean + mean`` for balanced batches and keeps the optimal
    constant discriminator at ``n_real / (n_real + n_fake)`` otherwise.
    """
    d_real = _check_prob(d_real, "d_real")
    d_fake = _check_prob(d_fake, "d_fake")
    norm = (d_real.numel() + d_fake.numel()) / 2
    d_loss = (-torch.log(d_real).sum() - torch.log1p(-d_fake).sum()) / norm
    if saturating:
        g_loss = torch.log1p(-d_fake).mean()
    else:
        g_loss = -torch.log(d_fake).mean()
    return d_loss, g_loss


def vq_loss(z_s: Tensor, q: Tensor) -> Tensor:
    """Commitment plus codebook term with stop-gradients, equal weights.

    ``||z_s - sg(q)||^2`` only reaches the encoder and ``||sg(z_s) - q||^2``
    only reaches the codes.  Squared norms are summed over the code
    dimension and averaged over rows.
    """
    if z_s.shape != q.shape:
        raise ShapeError(f"z_s {tuple(z_s.shape)} vs q {tuple(q.shape)}")
    commit = (z_s - q.detach()).pow(2).sum(-1)
    codebook = (z_s.detach() - q).pow(2).sum(-1)
    return (commit + codebook).mean()


def supervision_losses(
    phone_logits: Tensor | None,
    phone_labels: Tensor | None,
    speaker_logits: Tensor | None,
    speaker_label: Tensor | None,
    w: LossWeights,
) -> tuple[Tensor | None, Tensor | None]:
    """``alpha`` x frame-level phone CE and ``beta`` x utterance-level speaker CE.

    Phone labels of -1 mark unlabelled frames and are ignored.  Either
    pair may be None to skip that term.
    """
    l_cnt = l_spk = None
    if phone_logits is not None:
        n_cls = phone_logits.shape[-1]
        labels = phone_labels.reshape(-1)
        if torch.any(labels >= n_cls) or torch.any(labels < -1):
            raise ValidationError(f"phone label out of range [0, {n_cls})")
        if torch.any(labels >= 0):
            ce = F.cross_entropy(phone_logits.reshape(-1, n_cls), labels, ignore_index=-1)
        else:
            ce = phone_logits.sum() * 0.0
        l_cnt = w.alpha * ce
    if speaker_logits is not None:
        n_cls = speaker_logits.shape[-1]
        label = speaker_label.reshape(-1)
        if torch.any(label >= n_cls) or torch.any(label < 0):
            raise ValidationError(f"speaker label out of range [0, {n_cls})")
        l_spk = w.beta * F.cross_entropy(speaker_logits.reshape(-1, n_cls), label)
    return l_cnt, l_spk


def ssl_regression_loss(pred: Tensor, target: Tensor, mask: Tensor | None = None) -> Tensor:
    """mean |pred - target| + mean (pred - target)^2 over valid entries."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    diff = pred - target
    if mask is None:
        return diff.abs().mean() + diff.pow(2).mean()
    m = mask.to(diff.dtype).unsqueeze(-1).expand_as(diff)
    n = m.sum().clamp_min(1.0)
    return (diff.abs() * m).sum() / n + (diff.pow(2) * m).sum() / n


def gaussian_log_norm(dim: int) -> float:
    """The constant dropped from the unit-variance Gaussian log-likelihood."""
    return 0.5 * dim * math.log(2 * math.pi)
