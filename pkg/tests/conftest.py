import pytest
import torch

from dysaug.corpus import build_pair_index, split_blocks
from dysaug.features import build_parallel_pairs, build_train_utterances
from dysaug.synthetic import make_synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth():
    return make_synthetic_corpus(seed=0)


@pytest.fixture(scope="session")
def small_synth():
    """Two words only: 40 utterances, for fast training tests."""
    return make_synthetic_corpus(seed=0, words=["W01", "W02"])


@pytest.fixture(scope="session")
def small_utts(small_synth):
    train, _ = split_blocks(small_synth.manifest)
    return build_train_utterances(
        train,
        loader=small_synth.load,
        phones=small_synth.phones,
        use_phones=True,
        alignments=small_synth.phone_segments,
    )


@pytest.fixture(scope="session")
def small_pairs(small_synth):
    train, _ = split_blocks(small_synth.manifest)
    specs = [
        p
        for s in small_synth.manifest.dysarthric_speakers()
        for p in build_pair_index(train, s, duration_fn=small_synth.duration)
    ]
    return build_parallel_pairs(specs, loader=small_synth.load)


@pytest.fixture(scope="session")
def trained_small(small_synth, small_utts):
    """Structured model after a short init on the two-word corpus (speaker codes assigned)."""
    from dysaug.models import GeneratorModel
    from dysaug.training import TrainConfig, train_init

    m = GeneratorModel("structured", small_synth.manifest.speaker_ids, n_phones=len(small_synth.phones), seed=0)
    cfg = TrainConfig(
        epochs=3,
        batch_size=8,
        lr_generator=1e-3,
        lr_codebook=1.0,
        weights={"beta": 1000.0},
        supervision_flags={"speaker": True},
    )
    train_init(m, small_utts, cfg)
    return m
