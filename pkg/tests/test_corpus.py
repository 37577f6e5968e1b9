import itertools
import json
import random

import pytest

from dysaug.corpus import (
    CorpusManifest,
    UtteranceRecord,
    build_pair_index,
    load_manifest,
    split_blocks,
    write_manifest,
)
from dysaug.errors import ManifestError, PairingError, RosterError, ValidationError


def rec(utt_id, spk, kind="dysarthric", word="W1", block=1, dur=1.0, **kw):
    return UtteranceRecord(
        utt_id=utt_id,
        speaker_id=spk,
        speaker_kind=kind,
        word_id=word,
        block=block,
        audio_path=f"/audio/{utt_id}.wav",
        sample_rate_hz=16000,
        segment=None if dur is None else _seg(dur),
        **kw,
    )


def _seg(dur):
    from dysaug.corpus import Segment

    return Segment(0.0, dur)


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return path


def test_load_round_trip(tmp_path):
    recs = [
        rec("a", "CM01", "control", "W1", 1),
        rec("b", "M01", "dysarthric", "W1", 2, intelligibility_band="VL"),
        rec("c", "F02", "dysarthric", "W2", 3, dur=None, phone_alignment_path="x.ali"),
    ]
    write_manifest(recs, tmp_path / "m.jsonl")
    m = load_manifest(tmp_path / "m.jsonl")
    assert m.records == tuple(recs)
    # optional fields are omitted, not null
    line = (tmp_path / "m.jsonl").read_text().splitlines()[2]
    assert "segment" not in json.loads(line) and "ssl_feature_path" not in json.loads(line)


def test_roster_controls_first_sorted(tmp_path):
    recs = [rec("1", "M05"), rec("2", "CM02", "control"), rec("3", "F02"), rec("4", "CF01", "control")]
    m = CorpusManifest.from_records(recs)
    assert m.speaker_ids == ["CF01", "CM02", "F02", "M05"]
    assert m.speaker("CF01").intelligibility_band == "control"


def test_empty_manifest(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    m = load_manifest(path)
    assert len(m) == 0 and m.speakers == ()


def test_duplicate_utt_id_reported(tmp_path):
    objs = [rec(u, "M01").to_dict() for u in ["u1", "u2", "u3", "u2"]]
    path = write_lines(tmp_path / "dup.jsonl", objs)
    # independent oracle: hash-set scan
    seen, dups = set(), []
    for o in objs:
        if o["utt_id"] in seen:
            dups.append(o["utt_id"])
        seen.add(o["utt_id"])
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert dups == ["u2"]
    assert "u2" in str(err.value) and err.value.line == 4


def test_malformed_line_has_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec("a", "M01").to_dict()) + "\n{not json\n")
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert err.value.line == 2


@pytest.mark.parametrize(
    "patch",
    [{"speaker_kind": "typical"}, {"block": 4}, {"segment": {"start_s": 1.0, "end_s": 0.5}}],
)
def test_invalid_records_rejected(tmp_path, patch):
    obj = rec("a", "M01").to_dict() | patch
    with pytest.raises(ManifestError):
        load_manifest(write_lines(tmp_path / "m.jsonl", [obj]))


def test_inconsistent_speaker_kind_rejected(tmp_path):
    objs = [rec("a", "M01").to_dict(), rec("b", "M01", "control").to_dict()]
    with pytest.raises(ManifestError):
        load_manifest(write_lines(tmp_path / "m.jsonl", objs))


def test_one_hot_uaspeech_roster():
    controls = [f"C{i:02d}" for i in range(13)]
    dys = [f"D{i:02d}" for i in range(16)]
    recs = [rec(s, s, "control") for s in controls] + [rec(s, s) for s in dys]
    m = CorpusManifest.from_records(recs)
    for spk in controls + dys:
        vec = m.one_hot(spk)
        assert len(vec) == 29 and sum(vec) == 1.0 and vec.count(1.0) == 1
    with pytest.raises(RosterError):
        m.one_hot("nobody")


def test_split_three_blocks():
    m = CorpusManifest.from_records([rec(f"u{b}", "M01", block=b) for b in (1, 2, 3)])
    train, test = split_blocks(m)
    assert sorted(r.block for r in train) == [1, 3]
    assert [r.block for r in test] == [2]


def test_split_all_control_has_empty_test():
    m = CorpusManifest.from_records([rec(f"u{b}", "C01", "control", block=b) for b in (1, 2, 3)])
    _, test = split_blocks(m)
    assert len(test) == 0


def test_split_matches_linear_scan():
    rng = random.Random(0)
    spks = [("C01", "control"), ("C02", "control"), ("M01", "dysarthric"), ("F03", "dysarthric")]
    recs = []
    for i in range(100):
        spk, kind = rng.choice(spks)
        recs.append(rec(f"u{i:03d}", spk, kind, f"W{rng.randint(1, 5)}", rng.randint(1, 3)))
    train, test = split_blocks(CorpusManifest.from_records(recs))
    exp_train = [r for r in recs if r.block != 2]
    exp_test = [r for r in recs if r.block == 2 and r.speaker_kind == "dysarthric"]
    assert list(train.records) == exp_train and list(test.records) == exp_test
    assert not set(r.utt_id for r in train) & set(r.utt_id for r in test)
    # roster is preserved so indices do not shift
    assert train.speakers == test.speakers


def test_two_controls_share_single_target():
    m = CorpusManifest.from_records(
        [
            rec("c1", "C01", "control", "about", dur=1.0),
            rec("c2", "C02", "control", "about", dur=0.5),
            rec("d1", "M01", "dysarthric", "about", dur=2.0),
        ]
    )
    pairs = build_pair_index(m, "M01")
    # oracle: exhaustive cross join filtered by word
    cross = [(c, d) for c in m if c.is_control for d in m if d.speaker_id == "M01" and d.word_id == c.word_id]
    assert [(p.ctrl_utt, p.dys_utt) for p in pairs] == cross
    assert {p.dys_utt.utt_id for p in pairs} == {"d1"}
    assert [p.factor for p in pairs] == [0.5, 0.25]


def test_disjoint_words_give_no_pairs():
    m = CorpusManifest.from_records(
        [rec("c1", "C01", "control", "W1"), rec("d1", "M01", "dysarthric", "W2")]
    )
    report = {}
    assert build_pair_index(m, "M01", report=report) == []
    assert report == {"paired_words": [], "skipped_words": ["W1", "W2"]}


def test_three_by_three_bijective_round_robin():
    recs = [rec(f"c{i}", f"C0{i}", "control", "W1") for i in (3, 1, 2)]
    recs += [rec(f"d{i}", "M01", "dysarthric", "W1") for i in (2, 3, 1)]
    pairs = build_pair_index(CorpusManifest.from_records(recs), "M01")
    assert [(p.ctrl_utt.utt_id, p.dys_utt.utt_id) for p in pairs] == [
        ("c1", "d1"),
        ("c2", "d2"),
        ("c3", "d3"),
    ]


def test_round_robin_against_oracle_and_deterministic():
    rng = random.Random(5)
    recs, n = [], 0
    for word in ["W1", "W2", "W3", "W4"]:
        for spk, kind in [("C01", "control"), ("C02", "control"), ("M01", "dysarthric"), ("F02", "dysarthric")]:
            for _ in range(rng.randint(0, 3)):
                recs.append(rec(f"u{n:03d}", spk, kind, word, dur=rng.uniform(0.5, 2.0)))
                n += 1
    m = CorpusManifest.from_records(recs)
    got = build_pair_index(m, "M01")
    assert got == build_pair_index(m, "M01")
    expected = []
    for word in sorted({r.word_id for r in recs}):
        ctrl = sorted((r for r in recs if r.word_id == word and r.is_control), key=lambda r: r.utt_id)
        dys = sorted((r for r in recs if r.word_id == word and r.speaker_id == "M01"), key=lambda r: r.utt_id)
        for i, c in enumerate(ctrl):
            if dys:
                expected.append((c.utt_id, dys[i % len(dys)].utt_id))
    assert [(p.ctrl_utt.utt_id, p.dys_utt.utt_id) for p in got] == expected
    for p in got:
        assert p.ctrl_utt.word_id == p.dys_utt.word_id
        assert p.factor == pytest.approx(p.ctrl_utt.segment.duration_s / p.dys_utt.segment.duration_s)


def test_cross_policy_is_full_join():
    recs = [rec(f"c{i}", "C01", "control", "W1") for i in range(2)]
    recs += [rec(f"d{i}", "M01", "dysarthric", "W1") for i in range(3)]
    pairs = build_pair_index(CorpusManifest.from_records(recs), "M01", policy="cross")
    assert len(pairs) == 6
    assert {(p.ctrl_utt.utt_id, p.dys_utt.utt_id) for p in pairs} == set(
        itertools.product(["c0", "c1"], ["d0", "d1", "d2"])
    )


def test_pairing_errors():
    m = CorpusManifest.from_records([rec("c1", "C01", "control"), rec("d1", "M01")])
    with pytest.raises(PairingError):
        build_pair_index(m.filter(lambda r: r.is_control), "M01")
    with pytest.raises(PairingError):
        build_pair_index(m, "C01")
    with pytest.raises(ValidationError):
        build_pair_index(m, "M01", policy="random")
