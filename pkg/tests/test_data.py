import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jvae.data import (
    MalformedHeaderError,
    NonNumericError,
    RowLengthError,
    SynthConfig,
    batch_iterator,
    convolve_channel,
    generate_corpus,
    generate_utterances,
    load_corpus,
    read_features,
    read_labels,
    read_manifest,
    rir_kernel,
    write_features,
)

# measured by tests/oracles/corpus_distance.py (seed 0, 100 utts, T in [20, 40])
MEAN_FRAME_DISTANCE = 0.901212283250


def test_identity_channel():
    cfg = SynthConfig(noise_std=0.0, rir_length=1, gain_range=(1.0, 1.0), seed=3)
    for u in generate_utterances(cfg, 5, (4, 9)):
        np.testing.assert_array_equal(u.far, u.close)


def test_absorbing_chain_gives_constant_labels():
    for u in generate_utterances(SynthConfig(stay_prob=1.0, seed=4), 6, (10, 20)):
        assert len(set(u.labels.tolist())) == 1


def test_alignment_and_lengths():
    utts = generate_utterances(SynthConfig(seed=5, feature_dim=3), 10, (7, 12))
    for u in utts:
        assert u.far.shape == u.close.shape == (len(u.labels), 3)
        assert 7 <= u.num_frames <= 12


def test_default_distortion_exceeds_noise_floor():
    cfg = SynthConfig(seed=0)
    utts = generate_utterances(cfg, 100, (20, 40))
    d = np.concatenate([np.linalg.norm(u.far - u.close, axis=1) for u in utts])
    assert d.mean() == pytest.approx(MEAN_FRAME_DISTANCE, abs=1e-9)
    assert d.mean() > 0.1 * np.sqrt(cfg.feature_dim)


def test_prefix_stability():
    cfg = SynthConfig(seed=9)
    a = generate_utterances(cfg, 3, (10, 15))
    b = generate_utterances(cfg, 6, (10, 15))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.far, v.far)


def test_channel_linearity():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(12, 4))
    k = rir_kernel(6, 0.6)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(convolve_channel(2 * y, k), 2 * convolve_channel(y, k))


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(noise_std=-1)
    with pytest.raises(ValueError):
        SynthConfig(stay_prob=1.5)
    with pytest.raises(ValueError):
        generate_utterances(SynthConfig(rir_length=6), 1, (5, 8))


def test_feature_round_trip(tmp_path):
    m = np.random.default_rng(1).normal(size=(5, 3)) * 1e3
    p = tmp_path / "a.fbt"
    write_features(p, m)
    assert np.array_equal(read_features(p), m)
    assert p.read_text().splitlines()[0] == "FBT1 5 3"


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 4), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip_any_finite(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("rt") / "m.fbt"
    write_features(p, m)
    got = read_features(p)
    assert got.shape == m.shape and np.array_equal(got, m)


def test_empty_matrix_accepted(tmp_path):
    p = tmp_path / "e.fbt"
    p.write_text("FBT1 0 3\n")
    assert read_features(p).shape == (0, 3)


@pytest.mark.parametrize("text, exc, line", [
    ("FBT1 5 3\n" + "1 2 3\n" * 4, RowLengthError, 6),
    ("FBX 1 2\n1 2\n", MalformedHeaderError, 1),
    ("FBT1 two 2\n1 2\n", MalformedHeaderError, 1),
    ("", MalformedHeaderError, 1),
    ("FBT1 2 2\n1 2\n3\n", RowLengthError, 3),
    ("FBT1 2 2\n1 2\n3 x\n", NonNumericError, 3),
    ("FBT1 1 2\n1 2\n3 4\n", RowLengthError, 3),
])
def test_malformed_files(tmp_path, text, exc, line):
    p = tmp_path / "bad.fbt"
    p.write_text(text)
    with pytest.raises(exc) as info:
        read_features(p)
    assert info.value.line == line
    assert f":{line}:" in str(info.value)


def test_write_rejects_non_finite(tmp_path):
    with pytest.raises(ValueError):
        write_features(tmp_path / "n.fbt", np.array([[np.nan]]))


def test_generate_corpus_files(tmp_path):
    cfg = SynthConfig(seed=7, feature_dim=4)
    man = generate_corpus(cfg, 4, (10, 10), tmp_path / "c")
    again = read_manifest(man.path)
    assert [e.id for e in again.entries] == [e.id for e in man.entries]
    assert again.feature_dim == 4
    for e in again.entries:
        assert e.num_frames == 10
        assert len(read_labels(e.label_path)) == 10
    utts = load_corpus(man.path)
    ref = generate_utterances(cfg, 4, (10, 10))
    for u, v in zip(utts, ref):
        np.testing.assert_array_equal(u.far, v.far)
        np.testing.assert_array_equal(u.labels, v.labels)
    line = man.path.read_text().splitlines()[0].split("\t")
    assert len(line) == 5 and line[4] == "10"


def test_generate_corpus_deterministic(tmp_path):
    cfg = SynthConfig(seed=8, feature_dim=2)
    a = generate_corpus(cfg, 3, (6, 9), tmp_path / "a")
    b = generate_corpus(cfg, 3, (6, 9), tmp_path / "b")
    for ea, eb in zip(a.entries, b.entries):
        assert ea.x_path.read_bytes() == eb.x_path.read_bytes()


def test_batch_iterator_order_and_padding():
    utts = generate_utterances(SynthConfig(seed=1, feature_dim=2), 5, (6, 12))
    ids1 = [b.ids[0] for b in batch_iterator(utts, 1, 42)]
    expected = [utts[i].id for i in np.random.default_rng([42, 0]).permutation(5)]
    assert ids1 == expected
    ids2 = [b.ids[0] for b in batch_iterator(utts, 1, 42)]
    assert ids1 == ids2
    batches = list(batch_iterator(utts, 2, None))
    assert [b.size for b in batches] == [2, 2, 1]
    b = batches[0]
    n0 = utts[0].num_frames
    np.testing.assert_array_equal(b.far[0, :n0], utts[0].far)
    assert b.far.shape[1] == max(utts[0].num_frames, utts[1].num_frames)
    with pytest.raises(ValueError):
        list(batch_iterator([], 1, 0))
    with pytest.raises(ValueError):
        list(batch_iterator(utts, 0, 0))
