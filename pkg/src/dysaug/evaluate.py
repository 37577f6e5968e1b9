"""Intrinsic evaluation: discriminator accuracy, reconstruction error, latent probes, plots."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from dysaug.dsp import ParallelPair
from dysaug.errors import ValidationError
from dysaug.features import TrainUtterance
from dysaug.models import Discriminator, GeneratorModel
from dysaug.training import discriminator_accuracy, generate_fakes, pad_batch, utterance_codes


@dataclass
class EvalReport:
    recon_mse: float
    d_accuracy_heldout: float
    speaker_probe_acc: float | None = None
    phone_probe_acc: float | None = None
    phone_probe_acc_speaker_latent: float | None = None
    codebook_perplexity: float | None = None
    # intelligibility band -> {"recon_mse": ..., "d_accuracy_heldout": ..., "n_pairs": ...}
    per_band: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValidationError(f"unknown report field(s): {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def perplexity(indices: Sequence[int]) -> float:
    """exp(entropy) of the empirical code-usage distribution."""
    counts = np.bincount(np.asarray(indices, dtype=np.int64))
    if counts.sum() == 0:
        raise ValidationError("no code assignments")
    p = counts[counts > 0] / counts.sum()
    return float(math.exp(-(p * np.log(p)).sum()))


def linear_probe(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    *,
    n_classes: int | None = None,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> float:
    """Fit a softmax-linear classifier with Adam and return test accuracy."""
    if len(x_train) == 0 or len(x_test) == 0:
        raise ValidationError("probe needs non-empty train and test sets")
    n_classes = n_classes or int(max(y_train.max(), y_test.max())) + 1
    gen = torch.Generator().manual_seed(seed)
    xt = torch.as_tensor(x_train, dtype=torch.float32)
    yt = torch.as_tensor(y_train, dtype=torch.long)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        probe = torch.nn.Linear(xt.shape[1], n_classes)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        perm = torch.randperm(len(xt), generator=gen)
        for i in range(0, len(xt), batch_size):
            idx = perm[i : i + batch_size]
            loss = F.cross_entropy(probe(xt[idx]), yt[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    with torch.no_grad():
        pred = probe(torch.as_tensor(x_test, dtype=torch.float32)).argmax(-1).numpy()
    return float((pred == np.asarray(y_test)).mean())


@torch.no_grad()
def frame_latents(model: GeneratorModel, utts: Sequence[TrainUtterance], batch_size: int = 32):
    """Per-frame posterior means (content, speaker) and labels over labelled frames."""
    zc, zs, labels = [], [], []
    for i in range(0, len(utts), batch_size):
        chunk = utts[i : i + batch_size]
        x, mask = pad_batch([u.feats for u in chunk], 40)
        if model.structured:
            post_c, post_s, _, _ = model.encode(x)
        else:
            post_c, _ = model.encode(x)
            post_s = None
        for j, u in enumerate(chunk):
            n = u.num_frames
            keep = u.phones >= 0
            zc.append(post_c.mean[j, :n].numpy()[keep])
            if post_s is not None:
                zs.append(post_s.mean[j, :n].numpy()[keep])
            labels.append(u.phones[keep])
    return np.concatenate(zc), (np.concatenate(zs) if zs else None), np.concatenate(labels)


@torch.no_grad()
def speaker_code_vectors(model: GeneratorModel, utts: Sequence[TrainUtterance]) -> np.ndarray:
    """Quantised speaker vector VQ(z_s) of each utterance."""
    idx = utterance_codes(model, [u.feats for u in utts])
    return model.codebook.codes.detach()[torch.as_tensor(idx)].numpy()


@torch.no_grad()
def conversion_mse(model: GeneratorModel, pairs: Sequence[ParallelPair], batch_size: int = 32) -> float:
    """Mean squared error per feature element between converted control and dysarthric target."""
    err, n = 0.0, 0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        ctrl, mask = pad_batch([p.ctrl.frames for p in chunk], 40)
        dys, _ = pad_batch([p.dys.frames for p in chunk], 40)
        fake = generate_fakes(model, chunk, ctrl, dys, mask).recon
        m = mask.unsqueeze(-1).float()
        err += float(((fake - dys) ** 2 * m).sum())
        n += int(m.sum()) * 40
    return err / n


def _param_digest(model: torch.nn.Module) -> list[bytes]:
    return [p.detach().numpy().tobytes() for p in model.parameters()]


def evaluate(
    model: GeneratorModel,
    discriminators: Mapping[str, Discriminator],
    heldout_pairs: Sequence[ParallelPair],
    *,
    probe_train: Sequence[TrainUtterance] = (),
    probe_test: Sequence[TrainUtterance] = (),
    speaker_bands: Mapping[str, str] | None = None,
    probe_lr: float = 1e-3,
    probe_epochs: int = 20,
    seed: int = 0,
) -> EvalReport:
    """All intrinsic metrics on frozen parameters.

    Probes are fitted on ``probe_train`` and scored on ``probe_test``; they
    are skipped (left None) when either is empty or, for the phone probes,
    when frame labels are missing.
    """
    if not heldout_pairs:
        raise ValidationError("evaluate needs a non-empty held-out pair set")
    before = _param_digest(model)
    model.eval()
    acc = discriminator_accuracy(model, discriminators, heldout_pairs)
    report = EvalReport(recon_mse=conversion_mse(model, heldout_pairs), d_accuracy_heldout=acc)

    speaker_bands = speaker_bands or {}
    by_band: dict[str, list[ParallelPair]] = defaultdict(list)
    for p in heldout_pairs:
        by_band[speaker_bands.get(p.target_speaker_id, "unknown")].append(p)
    for band, group in sorted(by_band.items()):
        report.per_band[band] = {
            "recon_mse": conversion_mse(model, group),
            "d_accuracy_heldout": discriminator_accuracy(model, discriminators, group),
            "n_pairs": len(group),
        }

    probing = bool(probe_train) and bool(probe_test)
    kw = dict(epochs=probe_epochs, lr=probe_lr, seed=seed)
    if probing and model.structured:
        spk_index = {s: i for i, s in enumerate(model.roster)}
        y_tr = np.array([spk_index[u.speaker_id] for u in probe_train])
        y_te = np.array([spk_index[u.speaker_id] for u in probe_test])
        report.speaker_probe_acc = linear_probe(
            speaker_code_vectors(model, probe_train), y_tr, speaker_code_vectors(model, probe_test), y_te,
            n_classes=len(model.roster), **kw,
        )
        codes = utterance_codes(model, [u.feats for u in list(probe_train) + list(probe_test)])
        report.codebook_perplexity = perplexity(codes)
    if probing and all(u.phones is not None for u in list(probe_train) + list(probe_test)):
        zc_tr, zs_tr, ph_tr = frame_latents(model, probe_train)
        zc_te, zs_te, ph_te = frame_latents(model, probe_test)
        n_cls = model.n_phones
        report.phone_probe_acc = linear_probe(zc_tr, ph_tr, zc_te, ph_te, n_classes=n_cls, batch_size=256, **kw)
        if zs_tr is not None:
            report.phone_probe_acc_speaker_latent = linear_probe(
                zs_tr, ph_tr, zs_te, ph_te, n_classes=n_cls, batch_size=256, **kw
            )
    if _param_digest(model) != before:  # pragma: no cover - guards the frozen-latent contract
        raise RuntimeError("evaluation modified model parameters")
    return report


def code_usage(model: GeneratorModel, utts: Sequence[TrainUtterance]) -> Counter:
    return Counter(utterance_codes(model, [u.feats for u in utts]).tolist())


# -- plots -----------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_metrics(records: Sequence[dict], out_path: str | Path, keys: Sequence[str] | None = None) -> Path:
    """Loss curves from metrics-log records (per-step rows only)."""
    steps = [r for r in records if not r.get("summary") and "step" in r]
    if not steps:
        raise ValidationError("metrics log has no step records")
    numeric = sorted({k for r in steps for k, v in r.items() if isinstance(v, (int, float)) and k not in ("step", "epoch")})
    keys = [k for k in (keys or numeric) if k in numeric]
    plt = _pyplot()
    fig, axes = plt.subplots(len(keys), 1, figsize=(7, 1.8 * len(keys) + 0.5), squeeze=False, sharex=True)
    for ax, key in zip(axes[:, 0], keys):
        xs = [i for i, r in enumerate(steps) if key in r]
        ax.plot(xs, [steps[i][key] for i in xs], lw=0.8)
        ax.set_ylabel(key, fontsize=8)
    axes[-1, 0].set_xlabel("step")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def heatmap_matrix(frames: np.ndarray) -> np.ndarray:
    """(T, F) features as the (F, T) image drawn by the heatmap plots."""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValidationError(f"expected a (T, F) matrix, got shape {frames.shape}")
    return frames.T


def plot_features(frames: np.ndarray, out_path: str | Path, title: str | None = None) -> Path:
    """Spectrogram-style heatmap: time on x (T columns), mel channel on y."""
    img = heatmap_matrix(frames)
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(4, img.shape[1] / 40), 3))
    ax.imshow(img, origin="lower", aspect="auto", interpolation="nearest")
    ax.set_xlabel("frame")
    ax.set_ylabel("mel channel")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def plot_comparison(real: np.ndarray, generated: np.ndarray, out_path: str | Path, titles=("real", "generated")) -> Path:
    """Two heatmaps side by side on a shared colour scale."""
    plt = _pyplot()
    lo = min(real.min(), generated.min())
    hi = max(real.max(), generated.max())
    fig, axes = plt.subplots(1, 2, figsize=(9, 3), sharey=True)
    for ax, frames, title in zip(axes, (real, generated), titles):
        ax.imshow(heatmap_matrix(frames), origin="lower", aspect="auto", interpolation="nearest", vmin=lo, vmax=hi)
        ax.set_title(title)
        ax.set_xlabel("frame")
    axes[0].set_ylabel("mel channel")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path
