"""Synthetic parallel corpus for desk-scale end-to-end runs.

Two control speakers read a small vocabulary of three-phone "words" built
from formant-shaped harmonic and noise segments.  Each pseudo-dysarthric
speaker is derived from one control voice: fresh renditions are slowed
1.8x by speed perturbation (which also lowers pitch and formants) and then
passed through a speaker-specific spectral tilt plus a little breath noise.

Every rendition carries its phone segmentation, so frame-level monophone
labels are exact.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from dysaug.corpus import CorpusManifest, Segment, UtteranceRecord, write_manifest
from dysaug.dsp import Waveform, speed_perturb, write_wav

SAMPLE_RATE = 16000
SLOWDOWN = 1.8
SILENCE_S = 0.03

# name -> (kind, formant centres in Hz); "noise" phones are band-limited noise
PHONES = {
    "sil": ("silence", ()),
    "iy": ("voiced", (300.0, 2300.0, 3000.0)),
    "aa": ("voiced", (750.0, 1150.0, 2500.0)),
    "uw": ("voiced", (320.0, 850.0, 2300.0)),
    "eh": ("voiced", (550.0, 1800.0, 2600.0)),
    "m": ("voiced", (250.0, 1000.0)),
    "s": ("noise", (4500.0, 7000.0)),
    "sh": ("noise", (2000.0, 3500.0)),
}
PHONE_LIST = list(PHONES)

WORDS = {
    "W01": ("s", "iy", "m"),
    "W02": ("m", "aa", "s"),
    "W03": ("sh", "uw", "m"),
    "W04": ("iy", "sh", "aa"),
    "W05": ("eh", "m", "iy"),
    "W06": ("s", "uw", "sh"),
    "W07": ("aa", "m", "eh"),
    "W08": ("sh", "eh", "s"),
    "W09": ("uw", "s", "aa"),
    "W10": ("m", "iy", "uw"),
}

# repetition index -> block: four training repetitions, one held-out (block 2)
REP_BLOCKS = (1, 3, 1, 3, 2)


@dataclass(frozen=True)
class Voice:
    f0_hz: float
    formant_scale: float


CONTROL_VOICES = {"CF01": Voice(190.0, 1.12), "CM01": Voice(110.0, 1.0)}
# dysarthric speaker -> (source control voice, tilt kind, intelligibility band)
DYSARTHRIC = {"F02": ("CF01", "lowpass", "L"), "M03": ("CM01", "highpass", "M")}


@dataclass
class SyntheticCorpus:
    manifest: CorpusManifest
    waveforms: dict[str, Waveform]
    phone_segments: dict[str, list[tuple[float, float, str]]]
    phones: list[str] = field(default_factory=lambda: list(PHONE_LIST))

    def load(self, rec: UtteranceRecord) -> Waveform:
        return self.waveforms[rec.utt_id]

    def duration(self, rec: UtteranceRecord) -> float:
        return self.waveforms[rec.utt_id].duration_s

    def write(self, root: str | Path) -> Path:
        """Dump WAVs, phone alignments and ``manifest.jsonl`` under ``root``."""
        root = Path(root)
        records = []
        for rec in self.manifest:
            wav = root / "audio" / rec.speaker_id / f"{rec.utt_id}.wav"
            ali = root / "align" / f"{rec.utt_id}.ali"
            wav.parent.mkdir(parents=True, exist_ok=True)
            ali.parent.mkdir(parents=True, exist_ok=True)
            write_wav(wav, self.waveforms[rec.utt_id])
            write_alignment(ali, self.phone_segments[rec.utt_id])
            records.append(
                UtteranceRecord(
                    rec.utt_id,
                    rec.speaker_id,
                    rec.speaker_kind,
                    rec.word_id,
                    rec.block,
                    str(wav),
                    rec.sample_rate_hz,
                    rec.segment,
                    str(ali),
                    None,
                    rec.intelligibility_band,
                )
            )
        write_manifest(records, root / "manifest.jsonl")
        (root / "phones.json").write_text(json.dumps(self.phones))
        return root / "manifest.jsonl"


def write_alignment(path: str | Path, segments) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for start, end, phone in segments:
            fh.write(f"{start:.6f} {end:.6f} {phone}\n")


def _rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng([seed] + [zlib.crc32(str(k).encode()) for k in keys])


def _render(word: str, voice: Voice, rng: np.random.Generator, sr: int = SAMPLE_RATE):
    """One rendition: waveform plus (start_s, end_s, phone) segments."""
    parts, segments = [], []
    t0 = 0.0

    def add(samples, phone):
        nonlocal t0
        parts.append(samples)
        dur = samples.size / sr
        segments.append((t0, t0 + dur, phone))
        t0 += dur

    add(rng.normal(0, 1e-3, int(SILENCE_S * sr)), "sil")
    f0 = voice.f0_hz * rng.uniform(0.95, 1.05)
    for phone in WORDS[word]:
        kind, formants = PHONES[phone]
        n = int(rng.uniform(0.11, 0.17) * sr)
        t = np.arange(n) / sr
        if kind == "voiced":
            f0_track = f0 * (1 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 6) * t))
            phase = 2 * np.pi * np.cumsum(f0_track) / sr
            x = np.zeros(n)
            for k in range(1, int(7000 / f0) + 1):
                fk = k * f0
                amp = sum(np.exp(-0.5 * ((fk - fm * voice.formant_scale) / 90.0) ** 2) for fm in formants)
                x += (amp + 0.02) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
            x /= np.max(np.abs(x)) + 1e-9
            x = 0.5 * x + rng.normal(0, 0.01, n)
        else:
            lo, hi = (f * voice.formant_scale for f in formants)
            sos = signal.butter(4, [lo, min(hi, 0.45 * sr)], btype="bandpass", fs=sr, output="sos")
            x = signal.sosfilt(sos, rng.normal(0, 1, n))
            x = 0.25 * x / (np.max(np.abs(x)) + 1e-9)
        ramp = min(int(0.01 * sr), n // 4)
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        add(x * env, phone)
    add(rng.normal(0, 1e-3, int(SILENCE_S * sr)), "sil")
    return np.concatenate(parts), segments


def _tilt(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "lowpass":
        y = signal.lfilter([0.25], [1.0, -0.75], x)
    else:
        y = signal.lfilter([1.0, -0.9], [1.0], x)
    return y * (np.max(np.abs(x)) / (np.max(np.abs(y)) + 1e-9))


def make_synthetic_corpus(seed: int = 0, words=None, repetitions: int = 5) -> SyntheticCorpus:
    """4 speakers x len(words) x repetitions utterances (200 with the defaults)."""
    words = list(WORDS) if words is None else list(words)
    records, waves, segs = [], {}, {}

    def add(utt_id, spk, kind, word, rep, x, segments, band):
        x = np.clip(x, -0.99, 0.99)
        waves[utt_id] = Waveform(x, SAMPLE_RATE)
        segs[utt_id] = segments
        records.append(
            UtteranceRecord(
                utt_id=utt_id,
                speaker_id=spk,
                speaker_kind=kind,
                word_id=word,
                block=REP_BLOCKS[rep % len(REP_BLOCKS)],
                audio_path=f"synthetic://{utt_id}",
                sample_rate_hz=SAMPLE_RATE,
                segment=Segment(0.0, x.size / SAMPLE_RATE),
                intelligibility_band=band,
            )
        )

    for spk, voice in CONTROL_VOICES.items():
        for word in words:
            for rep in range(repetitions):
                x, segments = _render(word, voice, _rng(seed, spk, word, rep))
                add(f"{spk}_{word}_R{rep}", spk, "control", word, rep, x, segments, "control")

    for spk, (source, tilt, band) in DYSARTHRIC.items():
        for word in words:
            for rep in range(repetitions):
                rng = _rng(seed, spk, word, rep)
                x, segments = _render(word, CONTROL_VOICES[source], rng)
                slow = speed_perturb(Waveform(x, SAMPLE_RATE), 1.0 / SLOWDOWN).samples
                y = _tilt(slow, tilt) + rng.normal(0, 0.01, slow.size)
                scale = slow.size / x.size
                segments = [(a * scale, b * scale, p) for a, b, p in segments]
                add(f"{spk}_{word}_R{rep}", spk, "dysarthric", word, rep, y, segments, band)

    return SyntheticCorpus(CorpusManifest.from_records(records), waves, segs)
