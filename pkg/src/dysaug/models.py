"""VAE generators (standard and structured), speaker VQ codebook and discriminators.

Tensors are batch-first: features ``(B, T, 40)``, latents ``(B, T, D)``.
Padding is at the tail and every recurrent layer is unidirectional, so
padded frames never influence valid ones; pooled quantities take a
``(B, T)`` boolean mask.

No forward pass draws random numbers.  Sampling noise is passed in
explicitly, and ``noise=None`` means "use the posterior mean".
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from dysaug.errors import RosterError, ShapeError, ValidationError, VariantError

FEAT_DIM = 40
HIDDEN_DIM = 128
LATENT_DIM = 39
SPEAKER_DIM = 29
CODEBOOK_SIZE = 29
SSL_DIM = 256
LOG_VAR_RANGE = (-10.0, 10.0)
CODEBOOK_INIT_STD = 0.1
VARIANTS = ("standard", "structured")


@dataclass
class GaussianPosterior:
    mean: Tensor
    log_var: Tensor

    @property
    def std(self) -> Tensor:
        return torch.exp(0.5 * self.log_var)

    def detach(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mean.detach(), self.log_var.detach())


def sample_latent(post: GaussianPosterior, noise: Tensor | None) -> Tensor:
    """Reparameterised draw ``mean + exp(log_var / 2) * noise``."""
    if noise is None:
        return post.mean
    if noise.shape != post.mean.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != posterior {tuple(post.mean.shape)}")
    return post.mean + post.std * noise


def masked_mean(x: Tensor, mask: Tensor | None) -> Tensor:
    """Average over the time axis (dim -2), ignoring padded frames."""
    if mask is None:
        return x.mean(dim=-2)
    m = mask.to(x.dtype).unsqueeze(-1)
    return (x * m).sum(dim=-2) / m.sum(dim=-2).clamp_min(1.0)


def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.dim() != 3 or x.shape[-1] != width:
        raise ShapeError(f"{what} expects (B, T, {width}), got {tuple(x.shape)}")


class RecurrentEncoder(nn.Module):
    """LSTM(40->128), two tanh FC(128->128), then mean and log-variance heads."""

    def __init__(self, latent_dim: int, in_dim: int = FEAT_DIM, hidden_dim: int = HIDDEN_DIM):
        super().__init__()
        self.in_dim = in_dim
        self.lstm = nn.LSTM(in_dim, hidden_dim, batch_first=True)
        self.fc1 = nn.Linear(hidden_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.mean_head = nn.Linear(hidden_dim, latent_dim)
        self.log_var_head = nn.Linear(hidden_dim, latent_dim)

    def forward(self, x: Tensor) -> tuple[GaussianPosterior, Tensor]:
        _check_width(x, self.in_dim, "encoder")
        h, _ = self.lstm(x)
        h = torch.tanh(self.fc1(h))
        h = torch.tanh(self.fc2(h))
        log_var = self.log_var_head(h).clamp(*LOG_VAR_RANGE)
        return GaussianPosterior(self.mean_head(h), log_var), h


class Decoder(nn.Module):
    """FC(in->128, tanh), LSTM(128->128), FC(128->40)."""

    def __init__(self, in_dim: int, hidden_dim: int = HIDDEN_DIM, out_dim: int = FEAT_DIM):
        super().__init__()
        self.in_dim = in_dim
        self.fc_in = nn.Linear(in_dim, hidden_dim)
        self.lstm = nn.LSTM(hidden_dim, hidden_dim, batch_first=True)
        self.fc_out = nn.Linear(hidden_dim, out_dim)

    def forward(self, z_cond: Tensor) -> Tensor:
        _check_width(z_cond, self.in_dim, "decoder")
        h = torch.tanh(self.fc_in(z_cond))
        h, _ = self.lstm(h)
        return self.fc_out(h)


def vq_lookup(codes: Tensor, z_s: Tensor) -> tuple[Tensor, Tensor]:
    """Nearest code per row of ``z_s`` (squared L2, ties to the lowest index)."""
    if z_s.shape[-1] != codes.shape[-1]:
        raise ShapeError(f"query width {z_s.shape[-1]} != code width {codes.shape[-1]}")
    dist = (z_s.detach().unsqueeze(-2) - codes.detach()).pow(2).sum(-1)
    indices = dist.argmin(dim=-1)
    return indices, codes[indices]


class _StraightThrough(torch.autograd.Function):
    # z + (q - z).detach() is not bit-exact in the forward value; this is.
    @staticmethod
    def forward(ctx, z_s, q):
        return q.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def straight_through(z_s: Tensor, q: Tensor) -> Tensor:
    """Forward value ``q``; backward passes the gradient to ``z_s`` unchanged."""
    if z_s.shape != q.shape:
        raise ShapeError(f"z_s {tuple(z_s.shape)} vs q {tuple(q.shape)}")
    return _StraightThrough.apply(z_s, q)


class SpeakerCodebook(nn.Module):
    def __init__(self, size: int = CODEBOOK_SIZE, dim: int = SPEAKER_DIM):
        super().__init__()
        self.codes = nn.Parameter(torch.randn(size, dim) * CODEBOOK_INIT_STD)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    def forward(self, z_s: Tensor) -> tuple[Tensor, Tensor]:
        return vq_lookup(self.codes, z_s)

    @torch.no_grad()
    def reseed(self, index: int, vector: Tensor) -> None:
        self.codes[index].copy_(vector)


class Discriminator(nn.Module):
    """Real-vs-generated classifier for one dysarthric speaker.

    LSTM(40->128), masked mean over frames, FC(128->1), sigmoid.
    """

    def __init__(self, target_speaker_id: str = "", hidden_dim: int = HIDDEN_DIM):
        super().__init__()
        self.target_speaker_id = target_speaker_id
        self.hidden_dim = hidden_dim
        self.lstm = nn.LSTM(FEAT_DIM, hidden_dim, batch_first=True)
        self.fc = nn.Linear(hidden_dim, 1)

    def logits(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        _check_width(x, FEAT_DIM, "discriminator")
        h, _ = self.lstm(x)
        return self.fc(masked_mean(h, mask)).squeeze(-1)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        return torch.sigmoid(self.logits(x, mask))


@dataclass
class GeneratorOutput:
    """Everything the trainer needs from one generator pass."""

    recon: Tensor
    posteriors: list[GaussianPosterior]
    z: Tensor
    hidden: Tensor
    z_s: Tensor | None = None
    pooled_s: Tensor | None = None
    indices: Tensor | None = None
    q: Tensor | None = None


class GeneratorModel(nn.Module):
    """Encoder(s) + decoder conditioned on a 29-dim speaker vector.

    ``standard``: one encoder; the decoder sees ``z`` concatenated with the
    frame-broadcast one-hot speaker vector (roster padded to ``speaker_dim``).

    ``structured``: content and speaker encoders.  The speaker latent is
    mean-pooled over the utterance and vector-quantised; the decoder sees
    ``z_c`` concatenated with the broadcast code.  Auxiliary heads predict
    monophones (from ``z_c``), speaker identity (from the pooled speaker
    latent) and SSL features (from the content encoder's hidden state).
    """

    def __init__(
        self,
        variant: str = "structured",
        roster: Sequence[str] = (),
        n_phones: int = 40,
        speaker_dim: int = SPEAKER_DIM,
        codebook_size: int = CODEBOOK_SIZE,
        hidden_dim: int = HIDDEN_DIM,
        seed: int | None = None,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise VariantError(f"unknown variant {variant!r}")
        if len(roster) > speaker_dim:
            raise ValidationError(f"roster of {len(roster)} speakers exceeds speaker_dim {speaker_dim}")
        self.variant = variant
        self.roster = list(roster)
        self.n_phones = n_phones
        self.speaker_dim = speaker_dim
        self.hidden_dim = hidden_dim
        # target speaker id -> fixed code index used at generation time
        self.speaker_codes: dict[str, int] = {}
        ctx = torch.random.fork_rng() if seed is not None else contextlib.nullcontext()
        with ctx:
            if seed is not None:
                torch.manual_seed(seed)
            if variant == "standard":
                self.encoder = RecurrentEncoder(LATENT_DIM, hidden_dim=hidden_dim)
            else:
                self.content_encoder = RecurrentEncoder(LATENT_DIM, hidden_dim=hidden_dim)
                self.speaker_encoder = RecurrentEncoder(speaker_dim, hidden_dim=hidden_dim)
                self.codebook = SpeakerCodebook(codebook_size, speaker_dim)
                self.phone_head = nn.Linear(LATENT_DIM, n_phones)
                self.speaker_head = nn.Linear(speaker_dim, speaker_dim)
                self.ssl_head = nn.Linear(hidden_dim, SSL_DIM)
            self.decoder = Decoder(LATENT_DIM + speaker_dim, hidden_dim=hidden_dim)

    @property
    def structured(self) -> bool:
        return self.variant == "structured"

    def config(self) -> dict:
        return {
            "variant": self.variant,
            "roster": list(self.roster),
            "n_phones": self.n_phones,
            "speaker_dim": self.speaker_dim,
            "codebook_size": self.codebook.size if self.structured else 0,
            "hidden_dim": self.hidden_dim,
        }

    def generator_parameters(self):
        """All trainable parameters except the speaker codebook."""
        return [p for n, p in self.named_parameters() if not n.startswith("codebook.")]

    def speaker_index(self, speaker_id: str) -> int:
        try:
            return self.roster.index(speaker_id)
        except ValueError:
            raise RosterError(f"speaker {speaker_id!r} not in model roster") from None

    def one_hot(self, speaker_idx: Tensor) -> Tensor:
        return F.one_hot(speaker_idx, self.speaker_dim).to(self.decoder.fc_in.weight.dtype)

    # -- encoder side ---------------------------------------------------
    def encode(self, x: Tensor):
        if self.structured:
            post_c, h_c = self.content_encoder(x)
            post_s, h_s = self.speaker_encoder(x)
            return post_c, post_s, h_c, h_s
        return self.encoder(x)

    def quantize(self, pooled_s: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(indices, q, straight-through q) for pooled speaker latents."""
        self._require_structured("quantize")
        indices, q = self.codebook(pooled_s)
        return indices, q, straight_through(pooled_s, q)

    # -- decoder side ---------------------------------------------------
    def decode(self, z: Tensor, speaker_vec: Tensor) -> Tensor:
        """Decode ``z`` (B, T, 39) with a per-utterance speaker vector (B, speaker_dim)."""
        cond = speaker_vec.unsqueeze(1).expand(-1, z.shape[1], -1)
        return self.decoder(torch.cat([z, cond], dim=-1))

    def reconstruct(
        self,
        x: Tensor,
        speaker_idx: Tensor | None = None,
        mask: Tensor | None = None,
        noise: Tensor | None = None,
        speaker_noise: Tensor | None = None,
    ) -> GeneratorOutput:
        """Autoencode ``x``; the standard variant needs the true speaker indices."""
        if self.structured:
            post_c, post_s, h_c, _ = self.encode(x)
            z_c = sample_latent(post_c, noise)
            z_s = sample_latent(post_s, speaker_noise)
            pooled = masked_mean(z_s, mask)
            indices, q, q_st = self.quantize(pooled)
            recon = self.decode(z_c, q_st)
            return GeneratorOutput(recon, [post_c, post_s], z_c, h_c, z_s, pooled, indices, q)
        if speaker_idx is None:
            raise ValidationError("standard variant needs speaker indices to reconstruct")
        post, h = self.encode(x)
        z = sample_latent(post, noise)
        recon = self.decode(z, self.one_hot(speaker_idx))
        return GeneratorOutput(recon, [post], z, h)

    def convert(
        self,
        ctrl_x: Tensor,
        target_idx: Tensor | None = None,
        target_x: Tensor | None = None,
        target_mask: Tensor | None = None,
        target_codes: Tensor | None = None,
        noise: Tensor | None = None,
        speaker_noise: Tensor | None = None,
    ) -> GeneratorOutput:
        """Map control features onto a dysarthric target.

        Standard: ``target_idx`` selects the one-hot vector.  Structured: the
        speaker code comes from ``target_codes`` (fixed code indices) or, if
        absent, from quantising the speaker encoder's view of ``target_x``.
        """
        if not self.structured:
            if target_idx is None:
                raise ValidationError("standard conversion needs target indices")
            post, h = self.encoder(ctrl_x)
            z = sample_latent(post, noise)
            return GeneratorOutput(self.decode(z, self.one_hot(target_idx)), [post], z, h)
        post_c, h_c = self.content_encoder(ctrl_x)
        z_c = sample_latent(post_c, noise)
        if target_codes is not None:
            q = self.codebook.codes[target_codes]
            return GeneratorOutput(self.decode(z_c, q), [post_c], z_c, h_c, indices=target_codes, q=q)
        if target_x is None:
            raise ValidationError("structured conversion needs target codes or target features")
        post_s, _ = self.speaker_encoder(target_x)
        z_s = sample_latent(post_s, speaker_noise)
        pooled = masked_mean(z_s, target_mask)
        indices, q, q_st = self.quantize(pooled)
        recon = self.decode(z_c, q_st)
        return GeneratorOutput(recon, [post_c, post_s], z_c, h_c, z_s, pooled, indices, q)

    def speaker_code_index(self, speaker_id: str) -> int:
        self._require_structured("speaker_code_index")
        try:
            return self.speaker_codes[speaker_id]
        except KeyError:
            raise RosterError(f"no learned speaker code for {speaker_id!r}") from None

    # -- auxiliary heads --------------------------------------------------
    def aux_heads(self, z_c: Tensor, z_s: Tensor, mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        self._require_structured("aux_heads")
        return self.phone_head(z_c), self.speaker_head(masked_mean(z_s, mask))

    def ssl_prediction(self, content_hidden: Tensor) -> Tensor:
        self._require_structured("ssl_prediction")
        return self.ssl_head(content_hidden)

    def _require_structured(self, what: str) -> None:
        if not self.structured:
            raise VariantError(f"{what} is only defined for the structured variant")


def _batched(t: Tensor) -> tuple[Tensor, bool]:
    return (t.unsqueeze(0), True) if t.dim() == 2 else (t, False)


def _unbatch(t, squeeze: bool):
    if isinstance(t, GaussianPosterior):
        return GaussianPosterior(_unbatch(t.mean, squeeze), _unbatch(t.log_var, squeeze))
    return t.squeeze(0) if squeeze else t


def encode(model: GeneratorModel, f: Tensor):
    """Posterior(s) for a (T, 40) or (B, T, 40) feature tensor.

    Returns one ``GaussianPosterior`` for the standard variant and a
    ``(content, speaker)`` tuple for the structured variant.
    """
    x, squeeze = _batched(f)
    out = model.encode(x)
    if model.structured:
        return _unbatch(out[0], squeeze), _unbatch(out[1], squeeze)
    return _unbatch(out[0], squeeze)


def decode(model: GeneratorModel, z_cond: Tensor) -> Tensor:
    """Decode an already-conditioned (T, 68) or (B, T, 68) latent."""
    x, squeeze = _batched(z_cond)
    return _unbatch(model.decoder(x), squeeze)


def discriminate(d: Discriminator, f: Tensor, mask: Tensor | None = None) -> Tensor:
    x, squeeze = _batched(f)
    return _unbatch(d(x, mask), squeeze)


def aux_heads(model: GeneratorModel, z_c: Tensor, z_s: Tensor, mask: Tensor | None = None):
    zc, squeeze = _batched(z_c)
    zs, _ = _batched(z_s)
    phone, spk = model.aux_heads(zc, zs, mask)
    return _unbatch(phone, squeeze), _unbatch(spk, squeeze)
