"""From manifest records to model inputs: FBank, phone labels, SSL targets, parallel pairs."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from dysaug.archive import archive_path, read_dafa, write_dafa
from dysaug.corpus import CorpusManifest, PairSpec, UtteranceRecord
from dysaug.dsp import (
    AlignmentWarning,
    FbankConfig,
    FeatureSequence,
    ParallelPair,
    Waveform,
    align_pair,
    clip_speed_factor,
    compute_fbank,
    load_waveform,
    mean_normalize,
    speed_perturb,
)
from dysaug.errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

WaveLoader = Callable[[UtteranceRecord], Waveform]


@dataclass
class TrainUtterance:
    """One utterance ready for stage-1 training."""

    utt_id: str
    speaker_id: str
    feats: np.ndarray  # (T, 40)
    phones: np.ndarray | None = None  # (T,), -1 = unlabelled
    ssl: np.ndarray | None = None  # (T, 256)

    @property
    def num_frames(self) -> int:
        return self.feats.shape[0]


def featurize(
    w: Waveform,
    cfg: FbankConfig = FbankConfig(),
    normalize: bool = True,
    speed: float = 1.0,
) -> FeatureSequence:
    """FBank of a waveform, optionally speed-perturbed first and mean-normalised after."""
    if speed != 1.0:
        w = speed_perturb(w, speed)
    f = compute_fbank(w, cfg)
    return mean_normalize(f) if normalize else f


def read_alignment(path: str | Path) -> list[tuple[float, float, str]]:
    """Phone segments from ``start_s end_s phone`` lines."""
    segs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 'start end phone'")
            segs.append((float(parts[0]), float(parts[1]), parts[2]))
    return segs


def frame_labels(
    segments: Sequence[tuple[float, float, str]],
    num_frames: int,
    phone_index: dict[str, int],
    cfg: FbankConfig = FbankConfig(),
) -> np.ndarray:
    """Label each frame with the phone covering its centre; -1 where none does."""
    centres = np.arange(num_frames) * cfg.hop_s + cfg.win_len_s / 2
    labels = np.full(num_frames, -1, dtype=np.int64)
    for start, end, phone in segments:
        if phone not in phone_index:
            raise ValidationError(f"phone {phone!r} not in the inventory")
        labels[(centres >= start) & (centres < end)] = phone_index[phone]
    return labels


def match_length(ssl: np.ndarray, num_frames: int) -> np.ndarray:
    """Nearest-frame resampling of an SSL sequence onto the FBank frame grid."""
    idx = np.minimum((np.arange(num_frames) * ssl.shape[0]) // num_frames, ssl.shape[0] - 1)
    return ssl[idx]


def phone_inventory(segment_lists: Iterable[Sequence[tuple[float, float, str]]]) -> list[str]:
    return sorted({p for segs in segment_lists for _, _, p in segs})


def build_train_utterances(
    manifest: CorpusManifest,
    *,
    features_dir: str | Path | None = None,
    loader: WaveLoader | None = None,
    fbank: FbankConfig = FbankConfig(),
    normalize: bool = True,
    phones: Sequence[str] | None = None,
    use_phones: bool = False,
    use_ssl: bool = False,
    alignments: dict[str, list] | None = None,
) -> list[TrainUtterance]:
    """Stage-1 inputs for every record.

    Features come from ``features_dir/<utt_id>.dafa`` when given (written by
    ``prepare``), otherwise they are computed from audio via ``loader``.
    Phone alignments are read from each record's ``phone_alignment_path``
    unless ``alignments`` supplies them in memory.
    """
    loader = loader or load_waveform
    phone_index = {p: i for i, p in enumerate(phones or [])}
    out = []
    for rec in manifest:
        if features_dir is not None:
            feats = read_dafa(archive_path(features_dir, rec.utt_id))
        else:
            feats = featurize(loader(rec), fbank, normalize).frames
        feats = np.asarray(feats, dtype=np.float32)
        labels = ssl = None
        if use_phones:
            if alignments is not None and rec.utt_id in alignments:
                segs = alignments[rec.utt_id]
            elif rec.phone_alignment_path:
                segs = read_alignment(rec.phone_alignment_path)
            else:
                raise ConfigError(f"{rec.utt_id}: phone supervision needs phone_alignment_path")
            labels = frame_labels(segs, feats.shape[0], phone_index, fbank)
        if use_ssl:
            if not rec.ssl_feature_path:
                raise ConfigError(f"{rec.utt_id}: SSL supervision needs ssl_feature_path")
            ssl_raw = read_dafa(rec.ssl_feature_path)
            if ssl_raw.shape[1] != 256:
                raise ValidationError(f"{rec.ssl_feature_path}: expected 256-dim SSL features")
            ssl = match_length(ssl_raw, feats.shape[0])
        out.append(TrainUtterance(rec.utt_id, rec.speaker_id, feats, labels, ssl))
    return out


def build_parallel_pairs(
    specs: Sequence[PairSpec],
    *,
    loader: WaveLoader | None = None,
    fbank: FbankConfig = FbankConfig(),
    normalize: bool = True,
) -> list[ParallelPair]:
    """Speed-perturb each control utterance onto its dysarthric partner and align.

    Factors outside the perturbation range are clipped; the resulting length
    gap is absorbed by truncation and counted in the log.
    """
    loader = loader or load_waveform
    dys_cache: dict[str, FeatureSequence] = {}
    pairs, clipped, warned = [], 0, 0
    for spec in specs:
        factor = clip_speed_factor(spec.factor)
        clipped += factor != spec.factor
        ctrl = featurize(loader(spec.ctrl_utt), fbank, normalize, speed=factor)
        if spec.dys_utt.utt_id not in dys_cache:
            dys_cache[spec.dys_utt.utt_id] = featurize(loader(spec.dys_utt), fbank, normalize)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", AlignmentWarning)
            pair = align_pair(
                ctrl,
                dys_cache[spec.dys_utt.utt_id],
                spec.target_speaker_id,
                spec.ctrl_utt.utt_id,
                spec.dys_utt.utt_id,
            )
        warned += bool(caught)
        pairs.append(pair)
    if clipped or warned:
        logger.info("%d pair factor(s) clipped, %d pair(s) beyond the alignment threshold", clipped, warned)
    return pairs


def write_features(
    manifest: CorpusManifest,
    out_dir: str | Path,
    loader: WaveLoader | None = None,
    fbank: FbankConfig = FbankConfig(),
    normalize: bool = True,
) -> int:
    loader = loader or load_waveform
    n = 0
    for rec in manifest:
        write_dafa(archive_path(out_dir, rec.utt_id), featurize(loader(rec), fbank, normalize).frames)
        n += 1
    return n
