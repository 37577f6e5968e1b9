"""Generation stage: convert control speech into target-speaker features and export corpora."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from dysaug.archive import archive_path, read_dafa, write_dafa
from dysaug.corpus import CorpusManifest, UtteranceRecord, build_pair_index
from dysaug.dsp import FbankConfig, FeatureSequence, clip_speed_factor, load_waveform, record_duration
from dysaug.errors import RosterError, ValidationError
from dysaug.features import WaveLoader, featurize
from dysaug.models import LATENT_DIM, GeneratorModel

logger = logging.getLogger(__name__)

CTRL_JITTER = 0.10
DYS_FACTORS = (0.9, 1.1)
FRAME_SHIFT_S = 0.01


@dataclass(frozen=True)
class AugmentedEntry:
    new_utt_id: str
    source_ctrl_utt_id: str | None
    source_dys_utt_id: str
    target_speaker_id: str
    feature_path: str
    multiplier_tag: str
    speed_factor: float
    num_frames: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AugmentedCorpus:
    entries: list[AugmentedEntry] = field(default_factory=list)
    manifest_path: Path | None = None

    def __post_init__(self):
        ids = [e.new_utt_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate new_utt_id in augmented corpus")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total_hours(self) -> float:
        return sum(e.num_frames for e in self.entries) * FRAME_SHIFT_S / 3600.0

    def count(self, tag_prefix: str = "") -> int:
        return sum(e.multiplier_tag.startswith(tag_prefix) for e in self.entries)

    def verify(self) -> None:
        """Every archive exists, parses as fbank40 and matches its recorded length."""
        for e in self.entries:
            frames = read_dafa(e.feature_path)
            if frames.shape != (e.num_frames, 40):
                raise ValidationError(f"{e.feature_path}: shape {frames.shape} != ({e.num_frames}, 40)")


def load_augmented(path: str | Path) -> AugmentedCorpus:
    with open(path, encoding="utf-8") as fh:
        entries = [AugmentedEntry(**json.loads(line)) for line in fh if line.strip()]
    return AugmentedCorpus(entries, Path(path))


@torch.no_grad()
def synthesize(
    model: GeneratorModel,
    ctrl_feats: FeatureSequence | np.ndarray,
    target_speaker_id: str,
    noise: torch.Tensor | None = None,
) -> FeatureSequence:
    """Decode control content with the target's speaker conditioning.

    Structured: content posterior (mean unless ``noise`` is given) plus the
    target's fixed speaker code.  Standard: latent plus one-hot(target).
    """
    frames = ctrl_feats.frames if isinstance(ctrl_feats, FeatureSequence) else np.asarray(ctrl_feats)
    idx = model.speaker_index(target_speaker_id)
    x = torch.as_tensor(frames, dtype=torch.float32).unsqueeze(0)
    if noise is not None:
        noise = noise.reshape(1, x.shape[1], LATENT_DIM)
    if model.structured:
        code = torch.tensor([model.speaker_code_index(target_speaker_id)])
        out = model.convert(x, target_codes=code, noise=noise)
    else:
        out = model.convert(x, target_idx=torch.tensor([idx]), noise=noise)
    return FeatureSequence(out.recon[0].numpy().astype(np.float32), FRAME_SHIFT_S, "fbank40")


def _ctrl_copies(manifest, target, ctrl_multiplier, rng, duration_fn):
    """(tag, pair spec, speed factor) for every converted copy of one target."""
    copies = []
    for spec in build_pair_index(manifest, target, duration_fn=duration_fn):
        base = clip_speed_factor(spec.factor)
        copies.append(("ctrl1", spec, base))
        if ctrl_multiplier == 2:
            copies.append(("ctrl2", spec, clip_speed_factor(base * (1 + rng.uniform(-CTRL_JITTER, CTRL_JITTER)))))
    return copies


def _check_targets(model: GeneratorModel, manifest: CorpusManifest, targets: Sequence[str]) -> None:
    for t in targets:
        if t not in manifest.speaker_ids:
            raise RosterError(f"target {t!r} not in manifest roster")
        model.speaker_index(t)
        if model.structured:
            model.speaker_code_index(t)


def generate_corpus(
    model: GeneratorModel,
    manifest: CorpusManifest,
    targets: Sequence[str],
    ctrl_multiplier: int = 1,
    dys_multiplier: int = 0,
    out_dir: str | Path = "augmented",
    *,
    loader: WaveLoader | None = None,
    duration_fn: Callable[[UtteranceRecord], float] | None = None,
    fbank: FbankConfig = FbankConfig(),
    normalize: bool = True,
    seed: int = 0,
    sample: bool = False,
) -> AugmentedCorpus:
    """Write generated (and optionally perturbed dysarthric) archives plus ``augmented.jsonl``.

    For every target, each control utterance in its pair index is
    speed-perturbed by the pair factor, featurised and converted
    (tag ``ctrl1``).  ``ctrl_multiplier=2`` adds a second conversion with
    the factor jittered uniformly within +-10% (tag ``ctrl2``).
    ``dys_multiplier=2`` adds copies of every real utterance of the target
    perturbed by 0.9 and 1.1 without the model (tags ``dys0.9``, ``dys1.1``).
    """
    if ctrl_multiplier not in (1, 2):
        raise ValidationError(f"ctrl_multiplier must be 1 or 2, got {ctrl_multiplier}")
    if dys_multiplier not in (0, 2):
        raise ValidationError(f"dys_multiplier must be 0 or 2, got {dys_multiplier}")
    loader = loader or load_waveform
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = sorted(targets)
    _check_targets(model, manifest, targets)
    model.eval()
    rng = np.random.default_rng(seed)
    noise_gen = torch.Generator().manual_seed(seed) if sample else None
    entries: list[AugmentedEntry] = []

    def emit(new_id, frames, ctrl_id, dys_id, target, tag, factor):
        path = archive_path(out_dir, new_id)
        write_dafa(path, frames)
        entries.append(AugmentedEntry(new_id, ctrl_id, dys_id, target, str(path), tag, float(factor), frames.shape[0]))

    for target in targets:
        for tag, spec, factor in _ctrl_copies(manifest, target, ctrl_multiplier, rng, duration_fn):
            feats = featurize(loader(spec.ctrl_utt), fbank, normalize, speed=factor)
            noise = torch.randn(feats.num_frames, LATENT_DIM, generator=noise_gen) if sample else None
            gen = synthesize(model, feats, target, noise)
            new_id = f"{target}__{spec.ctrl_utt.utt_id}__{spec.dys_utt.utt_id}__{tag}"
            emit(new_id, gen.frames, spec.ctrl_utt.utt_id, spec.dys_utt.utt_id, target, tag, factor)
        if dys_multiplier == 2:
            for rec in sorted((r for r in manifest if r.speaker_id == target), key=lambda r: r.utt_id):
                for factor in DYS_FACTORS:
                    feats = featurize(loader(rec), fbank, normalize, speed=factor)
                    emit(f"{rec.utt_id}__dys{factor}", feats.frames, None, rec.utt_id, target, f"dys{factor}", factor)

    corpus = AugmentedCorpus(entries, out_dir / "augmented.jsonl")
    with open(corpus.manifest_path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
    logger.info("generated %d archives, %.4f h", len(entries), corpus.total_hours)
    return corpus


def expected_counts(
    manifest: CorpusManifest, targets: Sequence[str], ctrl_multiplier: int, dys_multiplier: int
) -> int:
    """Number of archives ``generate_corpus`` writes, from pair-index sizes alone."""
    total = 0
    for t in targets:
        total += ctrl_multiplier * len(build_pair_index(manifest, t))
        if dys_multiplier:
            total += len(DYS_FACTORS) * sum(r.speaker_id == t for r in manifest)
    return total


def expected_hours(
    manifest: CorpusManifest,
    targets: Sequence[str],
    ctrl_multiplier: int,
    dys_multiplier: int,
    *,
    duration_fn: Callable[[UtteranceRecord], float] | None = None,
    seed: int = 0,
) -> float:
    """Hours ``generate_corpus`` would write, from durations alone (no audio, no model).

    Each copy lasts ``duration / factor``; the jittered ``ctrl2`` factors
    are drawn from the same seeded stream as in generation.  Frame
    quantisation makes the real total differ by at most a frame per file.
    """
    duration_fn = duration_fn or record_duration
    rng = np.random.default_rng(seed)
    seconds = 0.0
    for target in sorted(targets):
        for _, spec, factor in _ctrl_copies(manifest, target, ctrl_multiplier, rng, duration_fn):
            seconds += duration_fn(spec.ctrl_utt) / factor
        if dys_multiplier == 2:
            for rec in manifest:
                if rec.speaker_id == target:
                    seconds += sum(duration_fn(rec) / f for f in DYS_FACTORS)
    return seconds / 3600.0
