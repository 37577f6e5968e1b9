"""Waveform perturbation, log-mel filterbank extraction and pair alignment."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy import signal
from scipy.io import wavfile

from dysaug.errors import DomainError, ShapeError, TooShortError, ValidationError

if TYPE_CHECKING:
    from dysaug.corpus import UtteranceRecord

logger = logging.getLogger(__name__)

FEATURE_WIDTHS = {"fbank40": 40, "ssl256": 256}
SPEED_RANGE = (0.5, 2.0)
# Length mismatch (frames) above which align_pair flags a data-quality problem.
ALIGN_WARN_FRAMES = 2


class AlignmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray
    frame_shift_s: float = 0.01
    feature_kind: str = "fbank40"

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if self.feature_kind not in FEATURE_WIDTHS:
            raise ValidationError(f"unknown feature kind {self.feature_kind!r}")
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ShapeError(f"expected a T x F matrix with T >= 1, got shape {frames.shape}")
        if frames.shape[1] != FEATURE_WIDTHS[self.feature_kind]:
            raise ShapeError(
                f"{self.feature_kind} needs width {FEATURE_WIDTHS[self.feature_kind]}, "
                f"got {frames.shape[1]}"
            )
        if not np.all(np.isfinite(frames)):
            raise ValidationError("feature matrix contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_s(self) -> float:
        return self.num_frames * self.frame_shift_s

    @classmethod
    def infer(cls, frames: np.ndarray, frame_shift_s: float = 0.01) -> "FeatureSequence":
        """Build a sequence, taking the feature kind from the matrix width."""
        frames = np.asarray(frames)
        kinds = {w: k for k, w in FEATURE_WIDTHS.items()}
        if frames.ndim != 2 or frames.shape[1] not in kinds:
            raise ShapeError(f"cannot infer feature kind from shape {frames.shape}")
        return cls(frames, frame_shift_s, kinds[frames.shape[1]])


@dataclass(frozen=True)
class FbankConfig:
    n_mels: int = 40
    win_len_s: float = 0.025
    hop_s: float = 0.010
    fmin_hz: float = 20.0
    fmax_hz: float = 7600.0
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    window: str = "hamming"

    def validate(self, sample_rate_hz: int) -> None:
        if not 0 < self.fmin_hz < self.fmax_hz <= sample_rate_hz / 2:
            raise ValidationError(
                f"need 0 < fmin < fmax <= {sample_rate_hz / 2} Hz, "
                f"got fmin={self.fmin_hz}, fmax={self.fmax_hz}"
            )
        if not 0 < self.hop_s <= self.win_len_s:
            raise ValidationError("hop must be positive and no longer than the window")
        if self.n_mels < 1:
            raise ValidationError("n_mels must be positive")


@dataclass(frozen=True)
class ParallelPair:
    target_speaker_id: str
    ctrl: FeatureSequence
    dys: FeatureSequence
    ctrl_utt_id: str = ""
    dys_utt_id: str = ""
    trimmed_frames: int = field(default=0, compare=False)

    @property
    def num_frames(self) -> int:
        return self.ctrl.num_frames


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Resample so that playback at the original rate runs ``factor`` times faster.

    Pitch and tempo scale together (SoX ``speed``).  The output has
    ``round(len / factor)`` samples; band limiting comes from the FFT
    resampler, which drops content above the new Nyquist.
    """
    lo, hi = SPEED_RANGE
    if not lo <= factor <= hi:
        raise DomainError(f"speed factor {factor} outside [{lo}, {hi}]")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    n_out = max(1, int(round(len(w) / factor)))
    out = signal.resample(w.samples, n_out)
    return Waveform(out, w.sample_rate_hz)


def clip_speed_factor(factor: float) -> float:
    lo, hi = SPEED_RANGE
    return min(max(factor, lo), hi)


def record_duration(rec: "UtteranceRecord") -> float:
    """Segment length if present, otherwise the length of the audio file."""
    if rec.segment is not None:
        return rec.segment.duration_s
    sr, data = wavfile.read(rec.audio_path, mmap=True)
    return data.shape[0] / sr


def compute_duration_factor(
    ctrl: "UtteranceRecord",
    dys: "UtteranceRecord",
    duration_fn: Callable[["UtteranceRecord"], float] | None = None,
) -> float:
    """ctrl duration / dys duration: the speed factor that stretches ctrl onto dys."""
    duration_fn = duration_fn or record_duration
    d_ctrl = duration_fn(ctrl)
    d_dys = duration_fn(dys)
    if d_ctrl <= 0 or d_dys <= 0:
        raise ValidationError(
            f"non-positive duration ({ctrl.utt_id}: {d_ctrl}, {dys.utt_id}: {d_dys})"
        )
    return d_ctrl / d_dys


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FbankConfig, sample_rate_hz: int, n_fft: int) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1) evaluated at the FFT bin frequencies."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_center_frequencies(cfg: FbankConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))
    return edges[1:-1]


def _frame_params(cfg: FbankConfig, sr: int) -> tuple[int, int, int]:
    win = int(round(cfg.win_len_s * sr))
    hop = int(round(cfg.hop_s * sr))
    n_fft = 1 << (win - 1).bit_length()
    return win, hop, n_fft


def compute_fbank(w: Waveform, cfg: FbankConfig = FbankConfig()) -> FeatureSequence:
    sr = w.sample_rate_hz
    cfg.validate(sr)
    if cfg.n_mels != FEATURE_WIDTHS["fbank40"]:
        raise ValidationError(f"only 40-band FBank is supported, got n_mels={cfg.n_mels}")
    win, hop, n_fft = _frame_params(cfg, sr)
    x = w.samples
    if x.size < win:
        raise TooShortError(f"waveform of {x.size} samples is shorter than one {win}-sample window")
    if cfg.preemphasis:
        x = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])
    n_frames = 1 + (x.size - win) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    frames = frames * signal.get_window(cfg.window, win, fftbins=False)
    power = np.abs(np.fft.rfft(frames, n_fft)) ** 2
    energies = power @ mel_filterbank(cfg, sr, n_fft).T
    feats = np.log(np.maximum(energies, cfg.log_floor))
    return FeatureSequence(feats, frame_shift_s=hop / sr, feature_kind="fbank40")


def mean_normalize(f: FeatureSequence) -> FeatureSequence:
    """Subtract the per-utterance mean of every coefficient."""
    frames = f.frames - f.frames.mean(axis=0, keepdims=True)
    return FeatureSequence(frames, f.frame_shift_s, f.feature_kind)


def align_pair(
    ctrl_feats: FeatureSequence,
    dys_feats: FeatureSequence,
    target_speaker_id: str = "",
    ctrl_utt_id: str = "",
    dys_utt_id: str = "",
) -> ParallelPair:
    """Truncate both sequences to the shorter length.

    A length gap above two frames usually means the duration factor was
    clipped or the segment boundaries are off, so it raises an
    ``AlignmentWarning`` (the pair is still returned).
    """
    if ctrl_feats.feature_kind != "fbank40" or dys_feats.feature_kind != "fbank40":
        raise TypeError(
            f"align_pair needs fbank40 inputs, got {ctrl_feats.feature_kind}/{dys_feats.feature_kind}"
        )
    if not np.isclose(ctrl_feats.frame_shift_s, dys_feats.frame_shift_s):
        raise ValidationError("frame shifts differ")
    t = min(ctrl_feats.num_frames, dys_feats.num_frames)
    gap = abs(ctrl_feats.num_frames - dys_feats.num_frames)
    if gap > ALIGN_WARN_FRAMES:
        warnings.warn(
            f"pair {ctrl_utt_id or '?'}/{dys_utt_id or '?'} differs by {gap} frames before truncation",
            AlignmentWarning,
            stacklevel=2,
        )
    ctrl = FeatureSequence(ctrl_feats.frames[:t], ctrl_feats.frame_shift_s, "fbank40")
    dys = FeatureSequence(dys_feats.frames[:t], dys_feats.frame_shift_s, "fbank40")
    return ParallelPair(target_speaker_id, ctrl, dys, ctrl_utt_id, dys_utt_id, gap)


def load_waveform(rec: "UtteranceRecord") -> Waveform:
    """Read a record's audio (PCM or float WAV), cut to its segment, scaled to [-1, 1]."""
    sr, data = wavfile.read(rec.audio_path)
    if sr != rec.sample_rate_hz:
        raise ValidationError(f"{rec.audio_path}: sample rate {sr} != manifest {rec.sample_rate_hz}")
    if data.ndim > 1:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    if rec.segment is not None:
        start = int(round(rec.segment.start_s * sr))
        end = int(round(rec.segment.end_s * sr))
        data = data[start:end]
    return Waveform(data, sr)


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), w.sample_rate_hz, pcm)
