import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signtok.corpus import (
    CONTENT_TAGS,
    PAD_ID,
    BOS_ID,
    EOS_ID,
    UNK_ID,
    FrameSequence,
    GroundTruth,
    SyntheticSpec,
    TaggedSentence,
    Vocabulary,
    build_vocabulary,
    extract_pseudo_gloss,
    generate_synthetic,
    load_corpus,
    load_frame_sequences,
    read_frame_file,
    save_corpus,
    sign_word,
    write_frame_file,
)
from signtok.errors import DataError


def test_frame_file_roundtrip(tmp_path):
    frames = np.arange(40, dtype=np.float32).reshape(10, 4)
    path = tmp_path / "v.sgf"
    write_frame_file(path, frames)
    back = read_frame_file(path, "v")
    assert back.shape == (10, 4)
    assert np.array_equal(back, frames)


def test_frame_file_length_mismatch(tmp_path):
    frames = np.zeros((10, 4), dtype=np.float32)
    path = tmp_path / "v.sgf"
    write_frame_file(path, frames)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])  # drop one float -> 39 under a 10x4 header
    with pytest.raises(DataError, match="length mismatch"):
        read_frame_file(path, "vid7")
    with pytest.raises(DataError, match="vid7"):
        read_frame_file(path, "vid7")


def test_manifest_order_preserved(tmp_path):
    a = np.ones((3, 2), dtype=np.float32)
    b = 2 * np.ones((4, 2), dtype=np.float32)
    save_corpus(tmp_path,
                [FrameSequence("v1", a), FrameSequence("v0", b)],
                [TaggedSentence("v1", [("x", "NOUN")]),
                 TaggedSentence("v0", [("y", "NOUN")])],
                [GroundTruth("v1", [(0, 3)], [0]),
                 GroundTruth("v0", [(0, 4)], [1])])
    loaded = load_frame_sequences(tmp_path / "manifest.jsonl")
    assert [f.video_id for f in loaded] == ["v1", "v0"]
    assert loaded[0].frames.shape == (3, 2)


def test_missing_frame_file(tmp_path):
    (tmp_path / "manifest.jsonl").write_text(
        '{"video_id": "v9", "path": "nope.sgf"}\n')
    with pytest.raises(DataError, match="v9"):
        load_frame_sequences(tmp_path / "manifest.jsonl")


def test_non_finite_rejected(tmp_path):
    frames = np.zeros((2, 2), dtype=np.float32)
    frames[0, 0] = np.nan
    path = tmp_path / "v.sgf"
    with open(path, "wb") as fh:
        fh.write(b"SGF1")
        import struct
        fh.write(struct.pack("<III", 1, 2, 2))
        fh.write(frames.tobytes())
    with pytest.raises(DataError, match="non-finite"):
        read_frame_file(path, "v")


def test_pseudo_gloss_keeps_content_tags():
    sent = TaggedSentence("v", [("the", "DET"), ("wind", "NOUN"),
                                ("blows", "VERB"), ("strongly", "ADV")])
    gloss = extract_pseudo_gloss(sent)
    assert gloss.words == ["wind", "blows", "strongly"]
    assert gloss.source_indices == [1, 2, 3]


def test_pseudo_gloss_num_pron_kept_adp_dropped():
    sent = TaggedSentence("v", [("seven", "NUM"), ("of", "ADP"), ("them", "PRON")])
    assert extract_pseudo_gloss(sent).words == ["seven", "them"]


def test_pseudo_gloss_empty_flagged():
    sent = TaggedSentence("v", [("the", "DET"), ("a", "DET")])
    gloss = extract_pseudo_gloss(sent)
    assert gloss.is_empty
    assert gloss.words == []


_tag = st.sampled_from(sorted(CONTENT_TAGS) + ["DET", "ADP", "PART", "CONJ"])
_word = st.text(alphabet="abcdef", min_size=1, max_size=4)


@given(st.lists(st.tuples(_word, _tag), min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_pseudo_gloss_idempotent_and_order_preserving(words):
    sent = TaggedSentence("v", words)
    gloss = extract_pseudo_gloss(sent)
    # order preserved
    assert gloss.source_indices == sorted(gloss.source_indices)
    assert all(words[i][0] == w for i, w in zip(gloss.source_indices, gloss.words))
    # idempotent: re-extracting from the retained words changes nothing
    retained = TaggedSentence("v", [words[i] for i in gloss.source_indices]) \
        if gloss.words else None
    if retained is not None:
        again = extract_pseudo_gloss(retained)
        assert again.words == gloss.words
    # removing a non-kept word never changes retained tokens
    drop = [i for i in range(len(words)) if i not in gloss.source_indices]
    if drop:
        reduced = [w for i, w in enumerate(words) if i != drop[0]]
        if reduced:
            assert extract_pseudo_gloss(TaggedSentence("v", reduced)).words == gloss.words


def test_vocabulary_build_and_threshold():
    corpus = [TaggedSentence("v", [("a", "NOUN"), ("a", "NOUN"), ("b", "NOUN")])]
    v1 = build_vocabulary(corpus, min_count=1)
    assert v1.size == 6
    assert v1.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert v1.id_of("a") == 4 and v1.id_of("b") == 5
    v2 = build_vocabulary(corpus, min_count=2)
    assert v2.size == 5
    assert v2.id_of("b") == UNK_ID


def test_vocabulary_deterministic_and_bijective():
    corpus = [TaggedSentence("v", [("z", "NOUN"), ("m", "NOUN"), ("z", "VERB")])]
    a = build_vocabulary(corpus)
    b = build_vocabulary(corpus)
    assert a.tokens == b.tokens
    for i in range(a.size):
        assert a.id_of(a.token_of(i)) == i
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)


def test_synthetic_determinism():
    spec = SyntheticSpec(seed=5)
    a = generate_synthetic(spec, 4)
    b = generate_synthetic(spec, 4)
    for fa, fb in zip(a[0], b[0]):
        assert np.array_equal(fa.frames, fb.frames)
    assert [s.words for s in a[1]] == [s.words for s in b[1]]
    assert [t.spans for t in a[2]] == [t.spans for t in b[2]]


def test_synthetic_noise_free_sentence_matches_gloss_order():
    spec = SyntheticSpec(filler_prob=0.0, swap_prob=0.0, seed=2)
    frames, sents, truths = generate_synthetic(spec, 6)
    for s, t in zip(sents, truths):
        assert [w for w, _ in s.words] == [sign_word(g) for g in t.sign_ids]


def test_synthetic_fixed_duration_arithmetic():
    spec = SyntheticSpec(duration_range=(8, 8), sentence_length_range=(5, 5), seed=1)
    frames, _, truths = generate_synthetic(spec, 5)
    for f, t in zip(frames, truths):
        assert f.num_frames == 40
        assert all(e - s == 8 for s, e in t.spans)
        assert len(t.spans) == 5


def test_ground_truth_partitions():
    spec = SyntheticSpec(seed=9)
    frames, _, truths = generate_synthetic(spec, 8)
    for f, t in zip(frames, truths):
        pos = 0
        for s, e in t.spans:
            assert s == pos
            pos = e
        assert pos == f.num_frames


def test_save_load_corpus_roundtrip(tmp_path):
    spec = SyntheticSpec(seed=3)
    frames, sents, truths = generate_synthetic(spec, 3)
    save_corpus(tmp_path, frames, sents, truths)
    f2, s2, t2 = load_corpus(tmp_path)
    assert [f.video_id for f in f2] == [f.video_id for f in frames]
    assert np.array_equal(f2[0].frames, frames[0].frames)
    assert [s.words for s in s2] == [s.words for s in sents]
    assert [t.sign_ids for t in t2] == [t.sign_ids for t in truths]


def test_invalid_specs_rejected():
    with pytest.raises(DataError):
        SyntheticSpec(duration_range=(3, 8))
    with pytest.raises(DataError):
        SyntheticSpec(filler_prob=1.5)
    with pytest.raises(DataError):
        TaggedSentence("v", [("x", "BADTAG")])
    with pytest.raises(DataError):
        Vocabulary(["a", "b"])
