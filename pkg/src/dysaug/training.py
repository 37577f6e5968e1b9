"""Two-stage training: VAE initialisation, then adversarial training on parallel pairs."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import yaml

from dysaug.checkpoint import save_checkpoint
from dysaug.dsp import ParallelPair
from dysaug.errors import ConfigError, RosterError
from dysaug.features import TrainUtterance
from dysaug.losses import (
    LossReport,
    LossWeights,
    elbo,
    gan_losses,
    kl_to_standard_normal,
    reconstruction_nll,
    ssl_regression_loss,
    supervision_losses,
    vq_loss,
)
from dysaug.models import Discriminator, GeneratorModel, masked_mean

logger = logging.getLogger(__name__)


@dataclass
class SupervisionFlags:
    speaker: bool = False
    phone: bool = False
    ssl: bool = False


@dataclass
class TrainConfig:
    stage: str = "init"
    epochs: int = 10
    batch_size: int = 16
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    lr_codebook: float = 1e-2
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    supervision_flags: SupervisionFlags = field(default_factory=SupervisionFlags)
    g_steps_per_d_step: int = 1
    grad_clip: float = 5.0
    sample_noise: bool = True
    saturating_generator: bool = False
    # adversarial stage
    d_warmup_steps: int = 0
    converge_band: tuple[float, float] = (0.45, 0.65)
    converge_patience: int = 5
    # model / data (used by the CLI)
    variant: str = "structured"
    n_phones: int = 40
    hidden_dim: int = 128
    normalize: bool = True
    manifest: str | None = None
    features_dir: str | None = None
    out_dir: str | None = None
    phones: list[str] | None = None
    targets: list[str] | None = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.supervision_flags, dict):
            self.supervision_flags = SupervisionFlags(**self.supervision_flags)
        self.converge_band = tuple(self.converge_band)
        if self.stage not in ("init", "adversarial"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if min(self.lr_generator, self.lr_discriminator, self.lr_codebook) <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.g_steps_per_d_step < 1:
            raise ConfigError("g_steps_per_d_step must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        """Load a YAML (or JSON) file whose keys mirror the dataclass fields."""
        with open(path, encoding="utf-8") as fh:
            obj = yaml.safe_load(fh) or {}
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["converge_band"] = list(self.converge_band)
        return out


@dataclass
class TrainResult:
    model: GeneratorModel
    discriminators: dict[str, Discriminator]
    history: list[dict]
    checkpoints: list[Path]
    d_steps: int = 0
    g_steps: int = 0
    converged_epoch: int | None = None


class MetricsLog:
    """JSON-lines writer; one object per step (or epoch summary)."""

    def __init__(self, path: str | Path | None):
        self.records: list[dict] = []
        self._fh = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")

    def write(self, **record) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def reference_mode(threads: int = 1) -> None:
    """Single-threaded deterministic kernels for bit-reproducible runs."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


# -- batching ------------------------------------------------------------------


def pad_batch(seqs: Sequence[np.ndarray], width: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length (T, F) arrays with zero tail padding and a (B, T) mask."""
    t_max = max(s.shape[0] for s in seqs)
    width = width or seqs[0].shape[1]
    out = torch.zeros(len(seqs), t_max, width)
    mask = torch.zeros(len(seqs), t_max, dtype=torch.bool)
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = torch.from_numpy(np.asarray(s, dtype=np.float32))
        mask[i, : s.shape[0]] = True
    return out, mask


def length_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator | None) -> list[list[int]]:
    """Group indices of similar length; batch order shuffled when ``rng`` is given."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches


def _noise(gen: torch.Generator, shape, enabled: bool):
    return torch.randn(*shape, generator=gen) if enabled else None


def _clip(params, max_norm: float) -> None:
    params = [p for p in params if p.grad is not None]
    if params and max_norm > 0:
        torch.nn.utils.clip_grad_norm_(params, max_norm)


def _f(x) -> float | None:
    return None if x is None else float(x.detach()) if torch.is_tensor(x) else float(x)


def _make_optimizers(model: GeneratorModel, cfg: TrainConfig):
    opt_g = torch.optim.Adam(model.generator_parameters(), lr=cfg.lr_generator)
    # plain SGD: codes that receive no gradient do not move
    opt_cb = torch.optim.SGD([model.codebook.codes], lr=cfg.lr_codebook) if model.structured else None
    return opt_g, opt_cb


# -- stage 1 -------------------------------------------------------------------


def init_step_loss(
    model: GeneratorModel,
    batch: Sequence[TrainUtterance],
    cfg: TrainConfig,
    gen: torch.Generator | None,
) -> tuple[torch.Tensor, LossReport, object]:
    """Stage-1 objective for one batch: negated bound plus flagged supervision."""
    flags, w = cfg.supervision_flags, cfg.weights
    x, mask = pad_batch([u.feats for u in batch], 40)
    spk = torch.tensor([model.speaker_index(u.speaker_id) for u in batch])
    B, T = mask.shape
    sample = cfg.sample_noise and gen is not None
    noise = _noise(gen, (B, T, 39), sample)
    if model.structured:
        spk_noise = _noise(gen, (B, T, model.speaker_dim), sample)
        out = model.reconstruct(x, spk, mask, noise, spk_noise)
    else:
        out = model.reconstruct(x, spk, mask, noise)
    recon = reconstruction_nll(out.recon, x, mask)
    kls = [kl_to_standard_normal(p, mask) for p in out.posteriors]
    loss = elbo(recon, kls, model.variant)
    rep = LossReport(recon=_f(recon), kl_content=_f(kls[0]))
    if model.structured:
        rep.kl_speaker = _f(kls[1])
        vq = vq_loss(out.pooled_s, out.q)
        loss = loss + w.gamma * vq
        rep.vq = _f(vq)
        phone_logits = phone_labels = spk_logits = None
        if flags.phone:
            phone_logits, _ = model.aux_heads(out.z, out.z_s, mask)
            phone_labels, _ = pad_batch([u.phones[:, None].astype(np.float32) for u in batch], 1)
            phone_labels = phone_labels.squeeze(-1).long()
            phone_labels[~mask] = -1
        if flags.speaker:
            _, spk_logits = model.aux_heads(out.z, out.z_s, mask)
        l_cnt, l_spk = supervision_losses(phone_logits, phone_labels, spk_logits, spk, w)
        if l_cnt is not None:
            loss = loss + l_cnt
            rep.ce_phone = _f(l_cnt)
        if l_spk is not None:
            loss = loss + l_spk
            rep.ce_speaker = _f(l_spk)
        if flags.ssl:
            target, _ = pad_batch([u.ssl for u in batch], 256)
            ssl = ssl_regression_loss(model.ssl_prediction(out.hidden), target, mask)
            loss = loss + w.ssl_weight * ssl
            rep.ssl_reg = _f(ssl)
    rep.total = _f(loss)
    return loss, rep, out


def _check_supervision(model: GeneratorModel, utts: Sequence[TrainUtterance], cfg: TrainConfig) -> None:
    flags = cfg.supervision_flags
    if not model.structured and (flags.phone or flags.speaker or flags.ssl):
        raise ConfigError("supervision flags need the structured variant")
    for u in utts:
        if flags.phone and u.phones is None:
            raise ConfigError(f"{u.utt_id}: phone supervision enabled but no phone labels")
        if flags.ssl and u.ssl is None:
            raise ConfigError(f"{u.utt_id}: SSL supervision enabled but no SSL features")
        if flags.phone and u.phones.max(initial=-1) >= model.n_phones:
            raise ConfigError(f"{u.utt_id}: phone label exceeds n_phones={model.n_phones}")


def train_init(
    model: GeneratorModel,
    train_set: Sequence[TrainUtterance],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    metrics_path: str | Path | None = None,
    extra: dict | None = None,
) -> TrainResult:
    """Stage 1: fit the VAE generator on un-augmented data.

    Writes ``init_epoch<N>.ckpt`` and ``metrics_init.jsonl`` into ``out_dir``
    when given; dead speaker codes are re-seeded after every epoch.
    """
    if cfg.stage != "init":
        raise ConfigError(f"train_init needs stage 'init', got {cfg.stage!r}")
    if not train_set:
        raise ConfigError("empty training set")
    _check_supervision(model, train_set, cfg)
    for u in train_set:
        model.speaker_index(u.speaker_id)
    out_dir = Path(out_dir) if out_dir is not None else None
    if metrics_path is None and out_dir is not None:
        metrics_path = out_dir / "metrics_init.jsonl"

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt_g, opt_cb = _make_optimizers(model, cfg)
    log = MetricsLog(metrics_path)
    checkpoints: list[Path] = []
    step = 0
    lengths = [u.num_frames for u in train_set]
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            usage: Counter = Counter()
            pooled_pool = []
            sums: dict[str, float] = defaultdict(float)
            n_batches = 0
            for idx in length_batches(lengths, cfg.batch_size, rng):
                batch = [train_set[i] for i in idx]
                loss, rep, out = init_step_loss(model, batch, cfg, gen)
                opt_g.zero_grad(set_to_none=True)
                if opt_cb:
                    opt_cb.zero_grad(set_to_none=True)
                loss.backward()
                _clip(model.generator_parameters(), cfg.grad_clip)
                opt_g.step()
                if opt_cb:
                    opt_cb.step()
                    usage.update(out.indices.tolist())
                    pooled_pool.append(out.pooled_s.detach())
                step += 1
                n_batches += 1
                for k, v in rep.to_dict().items():
                    sums[k] += v
                log.write(stage="init", epoch=epoch, step=step, **rep.to_dict())
            summary = {k: v / n_batches for k, v in sums.items()}
            if model.structured:
                reseeded = reseed_dead_codes(model, usage, torch.cat(pooled_pool), rng)
                summary["codes_used"] = len(usage)
                summary["codes_reseeded"] = reseeded
            log.write(stage="init", epoch=epoch, summary=True, **summary)
            logger.info("init epoch %d: %s", epoch, summary)
            if model.structured:
                assign_speaker_codes(model, train_set)
            if out_dir is not None:
                checkpoints.append(
                    save_checkpoint(out_dir / f"init_epoch{epoch}.ckpt", model, extra={**(extra or {}), "stage": "init", "epoch": epoch})
                )
    finally:
        log.close()
    model.eval()
    return TrainResult(model, {}, log.records, checkpoints, g_steps=step)


def reseed_dead_codes(model: GeneratorModel, usage: Counter, pooled: torch.Tensor, rng: np.random.Generator) -> int:
    """Reset every code unused this epoch to a random pooled speaker latent."""
    dead = [i for i in range(model.codebook.size) if usage[i] == 0]
    if not dead or pooled.numel() == 0:
        return 0
    picks = rng.integers(0, pooled.shape[0], size=len(dead))
    for code, row in zip(dead, picks):
        model.codebook.reseed(code, pooled[int(row)])
    return len(dead)


@torch.no_grad()
def utterance_codes(model: GeneratorModel, feats: Sequence[np.ndarray], batch_size: int = 32) -> np.ndarray:
    """Code index of each utterance from the speaker encoder's posterior mean."""
    out = []
    for i in range(0, len(feats), batch_size):
        x, mask = pad_batch(feats[i : i + batch_size], 40)
        _, post_s, _, _ = model.encode(x)
        idx, _ = model.codebook(masked_mean(post_s.mean, mask))
        out.extend(idx.tolist())
    return np.asarray(out, dtype=np.int64)


def assign_speaker_codes(model: GeneratorModel, utterances: Sequence[TrainUtterance]) -> dict[str, int]:
    """Fix each speaker's generation code to its most frequent utterance code (lowest index on ties)."""
    codes = utterance_codes(model, [u.feats for u in utterances])
    per_spk: dict[str, Counter] = defaultdict(Counter)
    for u, c in zip(utterances, codes):
        per_spk[u.speaker_id][int(c)] += 1
    model.speaker_codes = {
        spk: min(cnt, key=lambda c: (-cnt[c], c)) for spk, cnt in sorted(per_spk.items())
    }
    return model.speaker_codes


# -- stage 2 -------------------------------------------------------------------


def _pair_tensors(pairs: Sequence[ParallelPair]):
    ctrl, mask = pad_batch([p.ctrl.frames for p in pairs], 40)
    dys, _ = pad_batch([p.dys.frames for p in pairs], 40)
    return ctrl, dys, mask


def generate_fakes(
    model: GeneratorModel,
    pairs: Sequence[ParallelPair],
    ctrl: torch.Tensor,
    dys: torch.Tensor,
    mask: torch.Tensor,
    gen: torch.Generator | None = None,
):
    """Convert the control side of ``pairs`` towards their targets."""
    B, T = mask.shape
    noise = _noise(gen, (B, T, 39), gen is not None)
    if model.structured:
        spk_noise = _noise(gen, (B, T, model.speaker_dim), gen is not None)
        return model.convert(ctrl, target_x=dys, target_mask=mask, noise=noise, speaker_noise=spk_noise)
    idx = torch.tensor([model.speaker_index(p.target_speaker_id) for p in pairs])
    return model.convert(ctrl, target_idx=idx, noise=noise)


def _d_step(model, disc, opt_d, pairs, ctrl, dys, mask, gen) -> float:
    with torch.no_grad():
        fake = generate_fakes(model, pairs, ctrl, dys, mask, gen).recon
    d_loss, _ = gan_losses(disc(dys, mask), disc(fake, mask))
    opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    opt_d.step()
    return float(d_loss.detach())


@torch.no_grad()
def discriminator_accuracy(
    model: GeneratorModel,
    discriminators: Mapping[str, Discriminator],
    pairs: Sequence[ParallelPair],
    batch_size: int = 32,
    per_speaker: bool = False,
):
    """Balanced accuracy of each pair's discriminator on real vs generated features.

    Generation uses posterior means.  D predicts "real" when its output is
    at least 0.5, so a discriminator that always answers 0.5 scores exactly 0.5.
    """
    correct: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    by_spk: dict[str, list[ParallelPair]] = defaultdict(list)
    for p in pairs:
        by_spk[p.target_speaker_id].append(p)
    for spk, group in sorted(by_spk.items()):
        disc = discriminators[spk]
        for i in range(0, len(group), batch_size):
            chunk = group[i : i + batch_size]
            ctrl, dys, mask = _pair_tensors(chunk)
            fake = generate_fakes(model, chunk, ctrl, dys, mask, None).recon
            correct[spk][0] += int((disc(dys, mask) >= 0.5).sum()) + int((disc(fake, mask) < 0.5).sum())
            correct[spk][1] += 2 * len(chunk)
    if not correct:
        raise ConfigError("no pairs to evaluate")
    total = sum(c for c, _ in correct.values()) / sum(n for _, n in correct.values())
    if per_speaker:
        return total, {spk: c / n for spk, (c, n) in correct.items()}
    return total


def train_discriminators(
    model: GeneratorModel,
    discriminators: Mapping[str, Discriminator],
    pairs: Sequence[ParallelPair],
    cfg: TrainConfig,
    steps: int,
    log: MetricsLog | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> int:
    """D-only updates with the generator frozen; returns the number of steps taken."""
    by_spk = _group_pairs(pairs)
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    rng = np.random.default_rng(cfg.seed + 7919)
    opts = {spk: torch.optim.Adam(d.parameters(), lr=cfg.lr_discriminator) for spk, d in discriminators.items()}
    schedule = _schedule(by_spk, cfg.batch_size, rng)
    for step in range(1, steps + 1):
        spk, idx = schedule[(step - 1) % len(schedule)]
        if (step - 1) % len(schedule) == len(schedule) - 1:
            schedule = _schedule(by_spk, cfg.batch_size, rng)
        chunk = [by_spk[spk][i] for i in idx]
        ctrl, dys, mask = _pair_tensors(chunk)
        d_loss = _d_step(model, discriminators[spk], opts[spk], chunk, ctrl, dys, mask, gen)
        if log is not None:
            log.write(stage="d_warmup", step=step, speaker=spk, d_loss=d_loss)
        if callback is not None:
            callback(step, d_loss)
    return steps


def _group_pairs(pairs: Sequence[ParallelPair]) -> dict[str, list[ParallelPair]]:
    by_spk: dict[str, list[ParallelPair]] = defaultdict(list)
    for p in pairs:
        by_spk[p.target_speaker_id].append(p)
    return dict(sorted(by_spk.items()))


def _schedule(by_spk, batch_size, rng) -> list[tuple[str, list[int]]]:
    """Interleaved (speaker, batch indices) list for one pass over all pairs."""
    items = []
    for spk, group in by_spk.items():
        for idx in length_batches([p.num_frames for p in group], batch_size, rng):
            items.append((spk, idx))
    perm = rng.permutation(len(items))
    return [items[i] for i in perm]


def train_adversarial(
    model: GeneratorModel,
    discriminators: Mapping[str, Discriminator],
    pairs: Sequence[ParallelPair],
    cfg: TrainConfig,
    heldout: Sequence[ParallelPair] | None = None,
    out_dir: str | Path | None = None,
    metrics_path: str | Path | None = None,
    step_hook: Callable[[str, str], None] | None = None,
    extra: dict | None = None,
) -> TrainResult:
    """Stage 2: alternate per-speaker D-steps and generator steps on parallel pairs.

    Each batch holds pairs of one target speaker.  The D-step maximises the
    speaker's real-vs-generated objective with the generator frozen; then
    ``g_steps_per_d_step`` generator steps minimise
    ``gan_weight * g_loss + recon_weight * recon(fake, dys) [+ gamma * vq]``.
    Training stops early once held-out accuracy stays inside
    ``converge_band`` for ``converge_patience`` consecutive epochs.
    ``step_hook(kind, speaker)`` runs after every update (kind "d" or "g").
    """
    if cfg.stage != "adversarial":
        raise ConfigError(f"train_adversarial needs stage 'adversarial', got {cfg.stage!r}")
    if not pairs:
        raise ConfigError("no parallel pairs")
    by_spk = _group_pairs(pairs)
    missing = sorted(set(by_spk) - set(discriminators))
    if missing:
        raise ConfigError(f"no discriminator for speaker(s): {', '.join(missing)}")
    for spk in by_spk:
        try:
            model.speaker_index(spk)
        except RosterError as exc:
            raise ConfigError(str(exc)) from exc
    out_dir = Path(out_dir) if out_dir is not None else None
    if metrics_path is None and out_dir is not None:
        metrics_path = out_dir / "metrics_gan.jsonl"

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    w = cfg.weights
    opt_g, opt_cb = _make_optimizers(model, cfg)
    opt_d = {spk: torch.optim.Adam(d.parameters(), lr=cfg.lr_discriminator) for spk, d in discriminators.items()}
    log = MetricsLog(metrics_path)
    checkpoints: list[Path] = []
    d_steps = g_steps = 0
    in_band = 0
    converged = None
    lo, hi = cfg.converge_band
    try:
        if cfg.d_warmup_steps:
            model.eval()
            d_steps += train_discriminators(model, discriminators, pairs, cfg, cfg.d_warmup_steps, log)
            if heldout:
                log.write(stage="d_warmup", summary=True, d_accuracy_heldout=discriminator_accuracy(model, discriminators, heldout))
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            sums: dict[str, list] = defaultdict(lambda: [0.0, 0])
            for spk, idx in _schedule(by_spk, cfg.batch_size, rng):
                chunk = [by_spk[spk][i] for i in idx]
                ctrl, dys, mask = _pair_tensors(chunk)
                disc = discriminators[spk]

                d_loss = _d_step(model, disc, opt_d[spk], chunk, ctrl, dys, mask, gen)
                d_steps += 1
                if step_hook:
                    step_hook("d", spk)

                for _ in range(cfg.g_steps_per_d_step):
                    out = generate_fakes(model, chunk, ctrl, dys, mask, gen if cfg.sample_noise else None)
                    _, g_loss = gan_losses(torch.ones(1), disc(out.recon, mask), cfg.saturating_generator)
                    recon = reconstruction_nll(out.recon, dys, mask)
                    loss = w.gan_weight * g_loss + w.recon_weight * recon
                    rep = LossReport(recon=_f(recon), d_loss=d_loss, g_loss=_f(g_loss))
                    if model.structured:
                        vq = vq_loss(out.pooled_s, out.q)
                        loss = loss + w.gamma * vq
                        rep.vq = _f(vq)
                    rep.total = _f(loss)
                    opt_g.zero_grad(set_to_none=True)
                    if opt_cb:
                        opt_cb.zero_grad(set_to_none=True)
                    loss.backward()
                    _clip(model.generator_parameters(), cfg.grad_clip)
                    opt_g.step()
                    if opt_cb:
                        opt_cb.step()
                    disc.zero_grad(set_to_none=True)
                    g_steps += 1
                    if step_hook:
                        step_hook("g", spk)
                    log.write(stage="adversarial", epoch=epoch, step=g_steps, speaker=spk, **rep.to_dict())
                    for k, v in rep.to_dict().items():
                        sums[f"{spk}/{k}"][0] += v
                        sums[f"{spk}/{k}"][1] += 1
            summary = {k: s / n for k, (s, n) in sorted(sums.items())}
            if heldout:
                model.eval()
                acc, per = discriminator_accuracy(model, discriminators, heldout, per_speaker=True)
                summary["d_accuracy_heldout"] = acc
                summary.update({f"{spk}/d_accuracy_heldout": a for spk, a in per.items()})
                in_band = in_band + 1 if lo <= acc <= hi else 0
            log.write(stage="adversarial", epoch=epoch, summary=True, **summary)
            logger.info("adversarial epoch %d: %s", epoch, summary.get("d_accuracy_heldout"))
            if out_dir is not None:
                checkpoints.append(
                    save_checkpoint(
                        out_dir / f"gan_epoch{epoch}.ckpt",
                        model,
                        discriminators,
                        extra={**(extra or {}), "stage": "adversarial", "epoch": epoch},
                    )
                )
            if heldout and in_band >= cfg.converge_patience:
                converged = epoch
                break
    finally:
        log.close()
    model.eval()
    return TrainResult(model, dict(discriminators), log.records, checkpoints, d_steps, g_steps, converged)


def new_discriminators(speakers: Sequence[str], seed: int, hidden_dim: int = 128) -> dict[str, Discriminator]:
    """One freshly initialised discriminator per target speaker, seeded per speaker index."""
    out = {}
    for i, spk in enumerate(sorted(speakers)):
        with torch.random.fork_rng():
            torch.manual_seed(seed * 1000 + i)
            out[spk] = Discriminator(spk, hidden_dim)
    return out
