"""Corpus manifests, block partitioning and control/dysarthric pairing.

A manifest is a JSON-lines file with one utterance per line::

    {"utt_id": "CM01_B1_W1_M2", "speaker_id": "CM01", "speaker_kind": "control",
     "word_id": "W1", "block": 1, "audio_path": "audio/CM01/...wav",
     "sample_rate_hz": 16000, "segment": {"start_s": 0.12, "end_s": 0.98}}

Optional keys (``segment``, ``phone_alignment_path``, ``ssl_feature_path``,
``intelligibility_band``) are omitted rather than written as null.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from dysaug.errors import ManifestError, PairingError, RosterError, ValidationError

logger = logging.getLogger(__name__)

SPEAKER_KINDS = ("control", "dysarthric")
BANDS = ("VL", "L", "M", "H", "control")
REQUIRED_FIELDS = (
    "utt_id",
    "speaker_id",
    "speaker_kind",
    "word_id",
    "block",
    "audio_path",
    "sample_rate_hz",
)


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValidationError(
                f"segment end ({self.end_s}) must exceed start ({self.start_s})"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    speaker_kind: str
    word_id: str
    block: int
    audio_path: str
    sample_rate_hz: int
    segment: Segment | None = None
    phone_alignment_path: str | None = None
    ssl_feature_path: str | None = None
    intelligibility_band: str | None = None

    def __post_init__(self):
        if self.speaker_kind not in SPEAKER_KINDS:
            raise ValidationError(f"unknown speaker_kind {self.speaker_kind!r}")
        if self.block not in (1, 2, 3):
            raise ValidationError(f"block must be 1, 2 or 3, got {self.block!r}")
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.intelligibility_band is not None and self.intelligibility_band not in BANDS:
            raise ValidationError(f"unknown intelligibility_band {self.intelligibility_band!r}")

    @property
    def is_control(self) -> bool:
        return self.speaker_kind == "control"

    @classmethod
    def from_dict(cls, obj: dict) -> "UtteranceRecord":
        missing = [k for k in REQUIRED_FIELDS if k not in obj]
        if missing:
            raise ValidationError(f"missing field(s): {', '.join(missing)}")
        known = set(REQUIRED_FIELDS) | {
            "segment",
            "phone_alignment_path",
            "ssl_feature_path",
            "intelligibility_band",
        }
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValidationError(f"unknown field(s): {', '.join(unknown)}")
        seg = obj.get("segment")
        if seg is not None:
            try:
                seg = Segment(float(seg["start_s"]), float(seg["end_s"]))
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"bad segment {seg!r}") from exc
        block = obj["block"]
        if isinstance(block, bool) or not isinstance(block, int):
            raise ValidationError(f"block must be an integer, got {block!r}")
        return cls(
            utt_id=str(obj["utt_id"]),
            speaker_id=str(obj["speaker_id"]),
            speaker_kind=obj["speaker_kind"],
            word_id=str(obj["word_id"]),
            block=block,
            audio_path=str(obj["audio_path"]),
            sample_rate_hz=int(obj["sample_rate_hz"]),
            segment=seg,
            phone_alignment_path=obj.get("phone_alignment_path"),
            ssl_feature_path=obj.get("ssl_feature_path"),
            intelligibility_band=obj.get("intelligibility_band"),
        )

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in REQUIRED_FIELDS}
        if self.segment is not None:
            out["segment"] = {"start_s": self.segment.start_s, "end_s": self.segment.end_s}
        for key in ("phone_alignment_path", "ssl_feature_path", "intelligibility_band"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass(frozen=True)
class SpeakerInfo:
    speaker_id: str
    speaker_kind: str
    intelligibility_band: str | None


@dataclass(frozen=True)
class CorpusManifest:
    """Immutable set of utterance records plus the speaker roster.

    The roster order (controls first, then dysarthric speakers, each sorted
    by id) fixes the one-hot speaker index used by the generator.
    """

    records: tuple[UtteranceRecord, ...] = ()
    speakers: tuple[SpeakerInfo, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {s.speaker_id: i for i, s in enumerate(self.speakers)}
        for rec in self.records:
            if rec.speaker_id not in index:
                raise RosterError(f"speaker {rec.speaker_id!r} not in roster")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_records(
        cls,
        records: Iterable[UtteranceRecord],
        speakers: Sequence[SpeakerInfo] | None = None,
    ) -> "CorpusManifest":
        records = tuple(records)
        if speakers is None:
            speakers = derive_roster(records)
        return cls(records=records, speakers=tuple(speakers))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def speaker_ids(self) -> list[str]:
        return [s.speaker_id for s in self.speakers]

    def speaker(self, speaker_id: str) -> SpeakerInfo:
        return self.speakers[self.speaker_index(speaker_id)]

    def speaker_index(self, speaker_id: str) -> int:
        try:
            return self._index[speaker_id]
        except KeyError:
            raise RosterError(f"speaker {speaker_id!r} not in roster") from None

    def one_hot(self, speaker_id: str, dim: int | None = None) -> list[float]:
        """One-hot speaker vector; ``dim`` pads the roster to a fixed width."""
        dim = len(self.speakers) if dim is None else dim
        if dim < len(self.speakers):
            raise ValidationError(f"one-hot width {dim} smaller than roster {len(self.speakers)}")
        vec = [0.0] * dim
        vec[self.speaker_index(speaker_id)] = 1.0
        return vec

    def dysarthric_speakers(self) -> list[str]:
        return [s.speaker_id for s in self.speakers if s.speaker_kind == "dysarthric"]

    def control_speakers(self) -> list[str]:
        return [s.speaker_id for s in self.speakers if s.speaker_kind == "control"]

    def filter(self, predicate: Callable[[UtteranceRecord], bool]) -> "CorpusManifest":
        """Subset of records; the roster is kept so one-hot indices stay fixed."""
        return CorpusManifest(tuple(r for r in self.records if predicate(r)), self.speakers)

    def get(self, utt_id: str) -> UtteranceRecord:
        for rec in self.records:
            if rec.utt_id == utt_id:
                return rec
        raise KeyError(utt_id)

    def by_id(self) -> dict[str, UtteranceRecord]:
        return {r.utt_id: r for r in self.records}


def derive_roster(records: Sequence[UtteranceRecord]) -> list[SpeakerInfo]:
    kinds: dict[str, str] = {}
    bands: dict[str, str | None] = {}
    for rec in records:
        prev = kinds.setdefault(rec.speaker_id, rec.speaker_kind)
        if prev != rec.speaker_kind:
            raise ValidationError(
                f"speaker {rec.speaker_id!r} listed as both {prev} and {rec.speaker_kind}"
            )
        band = rec.intelligibility_band
        if band is not None:
            old = bands.get(rec.speaker_id)
            if old is not None and old != band:
                raise ValidationError(
                    f"speaker {rec.speaker_id!r} has conflicting bands {old} and {band}"
                )
            bands[rec.speaker_id] = band
    roster = []
    for kind in SPEAKER_KINDS:
        for spk in sorted(s for s, k in kinds.items() if k == kind):
            band = bands.get(spk, "control" if kind == "control" else None)
            roster.append(SpeakerInfo(spk, kind, band))
    return roster


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse and validate a JSON-lines manifest."""
    records = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed JSON ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise ManifestError("expected a JSON object", lineno)
            try:
                rec = UtteranceRecord.from_dict(obj)
            except ValidationError as exc:
                raise ManifestError(str(exc), lineno) from exc
            if rec.utt_id in seen:
                raise ManifestError(
                    f"duplicate utt_id {rec.utt_id!r} (first seen on line {seen[rec.utt_id]})",
                    lineno,
                )
            seen[rec.utt_id] = lineno
            records.append(rec)
    try:
        return CorpusManifest.from_records(records)
    except ValidationError as exc:
        raise ManifestError(str(exc)) from exc


def write_manifest(manifest: CorpusManifest | Iterable[UtteranceRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def split_blocks(manifest: CorpusManifest) -> tuple[CorpusManifest, CorpusManifest]:
    """Blocks 1 and 3 (every speaker) train; block 2 of dysarthric speakers tests."""
    train = manifest.filter(lambda r: r.block in (1, 3))
    test = manifest.filter(lambda r: r.block == 2 and not r.is_control)
    return train, test


@dataclass(frozen=True)
class PairSpec:
    target_speaker_id: str
    ctrl_utt: UtteranceRecord
    dys_utt: UtteranceRecord
    factor: float

    def to_dict(self) -> dict:
        return {
            "target_speaker_id": self.target_speaker_id,
            "ctrl_utt_id": self.ctrl_utt.utt_id,
            "dys_utt_id": self.dys_utt.utt_id,
            "factor": self.factor,
        }


PAIRING_POLICIES = ("round_robin", "cross")


def build_pair_index(
    manifest: CorpusManifest,
    target_speaker_id: str,
    *,
    policy: str = "round_robin",
    duration_fn: Callable[[UtteranceRecord], float] | None = None,
    report: dict | None = None,
) -> list[PairSpec]:
    """Pair control utterances with same-word utterances of one dysarthric target.

    With ``policy="round_robin"`` the i-th control utterance of a word (all
    control speakers, sorted by utt_id) is paired with target repetition
    ``i % n_target`` (also utt_id-sorted).  ``policy="cross"`` pairs every
    control utterance with every target repetition.

    Words without control/target overlap are skipped; if ``report`` is a dict
    it receives ``paired_words`` and ``skipped_words`` lists.
    """
    from dysaug.dsp import compute_duration_factor

    if policy not in PAIRING_POLICIES:
        raise ValidationError(f"unknown pairing policy {policy!r}")
    info = manifest.speaker(target_speaker_id)
    if info.speaker_kind != "dysarthric":
        raise PairingError(f"target {target_speaker_id!r} is not a dysarthric speaker")

    target_by_word: dict[str, list[UtteranceRecord]] = defaultdict(list)
    ctrl_by_word: dict[str, list[UtteranceRecord]] = defaultdict(list)
    for rec in manifest.records:
        if rec.speaker_id == target_speaker_id:
            target_by_word[rec.word_id].append(rec)
        elif rec.is_control:
            ctrl_by_word[rec.word_id].append(rec)
    if not target_by_word:
        raise PairingError(f"target {target_speaker_id!r} has no utterances")

    pairs = []
    paired, skipped = [], []
    for word in sorted(set(target_by_word) | set(ctrl_by_word)):
        ctrl = sorted(ctrl_by_word.get(word, []), key=lambda r: r.utt_id)
        dys = sorted(target_by_word.get(word, []), key=lambda r: r.utt_id)
        if not ctrl or not dys:
            skipped.append(word)
            continue
        paired.append(word)
        if policy == "round_robin":
            matches = [(c, dys[i % len(dys)]) for i, c in enumerate(ctrl)]
        else:
            matches = [(c, d) for c in ctrl for d in dys]
        for c, d in matches:
            factor = compute_duration_factor(c, d, duration_fn=duration_fn)
            pairs.append(PairSpec(target_speaker_id, c, d, factor))
    if skipped:
        logger.info(
            "%s: %d word(s) without control/target overlap skipped", target_speaker_id, len(skipped)
        )
    if report is not None:
        report["paired_words"] = paired
        report["skipped_words"] = skipped
    return pairs
