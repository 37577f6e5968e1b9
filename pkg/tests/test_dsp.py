import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dysaug.archive import decode_dafa, encode_dafa, read_dafa, read_features, write_dafa
from dysaug.corpus import Segment, UtteranceRecord
from dysaug.dsp import (
    AlignmentWarning,
    FbankConfig,
    FeatureSequence,
    Waveform,
    align_pair,
    compute_duration_factor,
    compute_fbank,
    load_waveform,
    mean_normalize,
    speed_perturb,
    write_wav,
)
from dysaug.errors import ArchiveError, DomainError, ShapeError, TooShortError, ValidationError

SR = 16000


def tone(freq, seconds=1.0, sr=SR, amp=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def seg_rec(utt_id, dur):
    return UtteranceRecord(utt_id, "S", "control", "W", 1, "x.wav", SR, Segment(1.0, 1.0 + dur))


# -- speed perturbation --------------------------------------------------


def test_speed_two_halves_length():
    out = speed_perturb(Waveform(np.random.default_rng(0).uniform(-1, 1, 16000), SR), 2.0)
    assert len(out) == 8000


def test_speed_identity_is_bit_exact():
    w = Waveform(np.random.default_rng(1).uniform(-1, 1, 1234), SR)
    out = speed_perturb(w, 1.0)
    assert np.array_equal(out.samples, w.samples)
    assert out.samples is not w.samples


def _dft_peak_hz(x, sr, candidates):
    # direct evaluation of the DFT magnitude at each candidate frequency
    n = np.arange(x.size)
    mags = [abs(np.dot(x, np.exp(-2j * np.pi * f * n / sr))) for f in candidates]
    return candidates[int(np.argmax(mags))]


def test_speed_half_halves_pitch():
    out = speed_perturb(tone(100.0), 0.5)
    assert len(out) == 32000
    assert _dft_peak_hz(out.samples, SR, np.arange(10.0, 200.0, 1.0)) == 50.0


@pytest.mark.parametrize("factor", [0.49, 2.01, 0.0, -1.0])
def test_speed_out_of_range(factor):
    with pytest.raises(DomainError):
        speed_perturb(tone(100.0, 0.1), factor)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(50, 5000), factor=st.floats(0.5, 2.0))
def test_speed_duration_round_trip(n, factor):
    w = Waveform(np.random.default_rng(n).uniform(-1, 1, n), SR)
    out = speed_perturb(w, factor)
    assert abs(out.duration_s * factor - w.duration_s) <= factor / SR + 1e-12


# -- duration factor -------------------------------------------------------


@pytest.mark.parametrize(
    "ctrl, dys, expected",
    [(1.0, 2.0, 0.5), (1.3, 1.3, 1.0), (0.9, 2.7, 0.9 / 2.7)],
)
def test_duration_factor(ctrl, dys, expected):
    assert compute_duration_factor(seg_rec("c", ctrl), seg_rec("d", dys)) == pytest.approx(expected, rel=1e-12)


def test_duration_factor_rejects_nonpositive():
    with pytest.raises(ValidationError):
        compute_duration_factor(seg_rec("c", 1.0), seg_rec("d", 1.0), duration_fn=lambda r: 0.0)


def test_duration_from_audio_file(tmp_path):
    path = tmp_path / "a.wav"
    write_wav(path, tone(200.0, 0.75))
    ctrl = UtteranceRecord("c", "S", "control", "W", 1, str(path), SR)
    assert compute_duration_factor(ctrl, seg_rec("d", 1.5)) == pytest.approx(0.5)


# -- fbank ----------------------------------------------------------------


def test_fbank_frame_count_one_second():
    feats = compute_fbank(tone(440.0, 1.0))
    # oracle: T = 1 + floor((len - win) / hop)
    assert feats.num_frames == 1 + math.floor((1.0 - 0.025) / 0.010 + 1e-9) == 98
    assert feats.frames.shape == (98, 40) and feats.feature_kind == "fbank40"


@pytest.mark.parametrize("n", [400, 401, 559, 560, 16123])
def test_fbank_frame_count_formula(n):
    feats = compute_fbank(Waveform(np.random.default_rng(n).normal(size=n) * 0.1, SR))
    assert feats.num_frames == 1 + (n - 400) // 160


def test_fbank_silence_is_log_floor():
    cfg = FbankConfig()
    feats = compute_fbank(Waveform(np.zeros(400), SR), cfg)
    assert feats.num_frames == 1
    assert np.all(feats.frames == np.log(cfg.log_floor))


def _oracle_fbank_frame(x, sr, cfg):
    """Log mel energies of one frame by direct DFT and per-filter triangle evaluation."""
    win = int(round(cfg.win_len_s * sr))
    n_fft = 512
    pre = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])[:win]
    ham = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(win) / (win - 1))
    frame = pre * ham
    n = np.arange(win)
    power = np.array(
        [abs(np.sum(frame * np.exp(-2j * np.pi * k * n / n_fft))) ** 2 for k in range(n_fft // 2 + 1)]
    )
    mel = lambda f: 1127.0 * math.log(1.0 + f / 700.0)  # noqa: E731  (same scale as 2595 log10)
    inv = lambda m: 700.0 * (math.exp(m / 1127.0) - 1.0)  # noqa: E731
    lo, hi = mel(cfg.fmin_hz), mel(cfg.fmax_hz)
    step = (hi - lo) / (cfg.n_mels + 1)
    out = []
    for j in range(cfg.n_mels):
        a, c, b = inv(lo + j * step), inv(lo + (j + 1) * step), inv(lo + (j + 2) * step)
        e = 0.0
        for k in range(n_fft // 2 + 1):
            f = k * sr / n_fft
            if a < f <= c:
                e += power[k] * (f - a) / (c - a)
            elif c < f < b:
                e += power[k] * (b - f) / (b - c)
        out.append(math.log(max(e, cfg.log_floor)))
    return np.array(out), [inv(lo + (j + 1) * step) for j in range(cfg.n_mels)]


def test_fbank_matches_direct_oracle():
    cfg = FbankConfig()
    x = np.random.default_rng(3).normal(size=400) * 0.1
    feats = compute_fbank(Waveform(x, SR), cfg)
    expected, _ = _oracle_fbank_frame(x, SR, cfg)
    np.testing.assert_allclose(feats.frames[0], expected, atol=1e-8)


@pytest.mark.parametrize("index", [8, 15, 20, 27, 33, 39])
def test_fbank_tone_peaks_at_its_filter(index):
    cfg = FbankConfig()
    _, centers = _oracle_fbank_frame(np.zeros(400), SR, cfg)
    w = tone(centers[index], 0.1)
    oracle, _ = _oracle_fbank_frame(w.samples, SR, cfg)
    assert int(np.argmax(oracle)) == index
    feats = compute_fbank(w, cfg)
    assert np.all(feats.frames.argmax(axis=1) == index)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.01, 50.0), seed=st.integers(0, 1000))
def test_fbank_scale_covariance(scale, seed):
    x = np.random.default_rng(seed).normal(size=2000) * 0.1
    base = compute_fbank(Waveform(x, SR)).frames
    scaled = compute_fbank(Waveform(x * scale, SR)).frames
    np.testing.assert_allclose(scaled - base, 2 * np.log(scale), atol=1e-6)


def test_fbank_deterministic():
    w = tone(300.0, 0.3)
    assert np.array_equal(compute_fbank(w).frames, compute_fbank(w).frames)


def test_fbank_too_short():
    with pytest.raises(TooShortError):
        compute_fbank(Waveform(np.ones(399), SR))


def test_fbank_config_validated():
    with pytest.raises(ValidationError):
        compute_fbank(tone(100.0, 0.1, sr=8000))  # fmax 7600 above Nyquist


def test_mean_normalize_zero_mean():
    f = mean_normalize(compute_fbank(tone(500.0, 0.5)))
    np.testing.assert_allclose(f.frames.mean(axis=0), 0.0, atol=1e-9)


# -- alignment -------------------------------------------------------------


def feats(t, seed=0, kind="fbank40"):
    width = 40 if kind == "fbank40" else 256
    return FeatureSequence(np.random.default_rng(seed).normal(size=(t, width)), 0.01, kind)


def test_align_equal_lengths():
    pair = align_pair(feats(100), feats(100, 1))
    assert pair.ctrl.num_frames == pair.dys.num_frames == 100


def test_align_truncates_to_min():
    a, b = feats(101), feats(100, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pair = align_pair(a, b)
    assert pair.ctrl.num_frames == pair.dys.num_frames == min(101, 100)
    assert np.array_equal(pair.ctrl.frames, a.frames[:100])
    assert np.array_equal(pair.dys.frames, b.frames)


def test_align_warns_on_large_gap():
    with pytest.warns(AlignmentWarning):
        pair = align_pair(feats(110), feats(100, 1))
    assert pair.trimmed_frames == 10


def test_align_rejects_ssl():
    with pytest.raises(TypeError):
        align_pair(feats(10), feats(10, kind="ssl256"))


def test_feature_sequence_width_checked():
    with pytest.raises(ShapeError):
        FeatureSequence(np.zeros((5, 39)))


# -- audio & archives -------------------------------------------------------


def test_load_waveform_segment(tmp_path):
    path = tmp_path / "a.wav"
    write_wav(path, tone(100.0, 1.0))
    r = UtteranceRecord("a", "S", "control", "W", 1, str(path), SR, Segment(0.25, 0.75))
    w = load_waveform(r)
    assert len(w) == 8000
    assert np.max(np.abs(w.samples - tone(100.0, 1.0).samples[4000:12000])) < 1e-4


def test_dafa_layout_and_round_trip(tmp_path):
    m = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    buf = encode_dafa(m)
    assert buf[:4] == b"DAFA"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert int.from_bytes(buf[8:12], "little") == 3
    assert int.from_bytes(buf[12:16], "little") == 4
    assert len(buf) == 16 + 4 * 12
    assert np.frombuffer(buf[16:], "<f4")[5] == np.float32(5 / 7)
    path = write_dafa(tmp_path / "u.dafa", m)
    assert np.array_equal(read_dafa(path), m)


def test_dafa_read_features_infers_kind(tmp_path):
    write_dafa(tmp_path / "s.dafa", np.zeros((7, 256)))
    assert read_features(tmp_path / "s.dafa").feature_kind == "ssl256"


def test_dafa_corruption_detected():
    buf = encode_dafa(np.zeros((2, 2)))
    with pytest.raises(ArchiveError):
        decode_dafa(b"XXXX" + buf[4:])
    with pytest.raises(ArchiveError):
        decode_dafa(buf[:-1])
