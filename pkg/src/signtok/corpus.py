"""Corpus data model, file I/O, vocabulary, and synthetic corpus generation.

The synthetic corpus stands in for a real signing corpus at desk scale: each
video is a concatenation of per-sign feature renderings (a fixed unit
prototype per sign, amplitude-modulated by a raised-cosine envelope, plus
Gaussian noise), paired with a POS-tagged spoken sentence whose content words
name the signs in order, optionally perturbed by filler insertion and
adjacent-word swaps.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

# Closed UPOS-style tag set accepted on input.
POS_TAGS = frozenset({
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "NUM", "PROPN",
    "DET", "ADP", "PART", "CONJ", "X",
})

# Content tags retained by pseudo-gloss extraction.
CONTENT_TAGS = frozenset({"NOUN", "VERB", "ADJ", "NUM", "ADV", "PRON", "PROPN"})

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

FRAME_FILE_MAGIC = b"SGF1"
FRAME_FILE_VERSION = 1

FILLER_WORDS = (("the", "DET"), ("a", "DET"), ("so", "PART"), ("to", "PART"))


@dataclass
class FrameSequence:
    """Per-video sequence of frame feature vectors, shape (T, c_in)."""

    video_id: str
    frames: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise DataError(f"{self.video_id}: frames must be a (T>=1, c>=1) matrix, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise DataError(f"{self.video_id}: non-finite frame features")
        if self.fps <= 0:
            raise DataError(f"{self.video_id}: fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class TaggedSentence:
    """POS-tagged spoken sentence: ordered (text, tag) pairs."""

    video_id: str
    words: list[tuple[str, str]]

    def __post_init__(self):
        if len(self.words) < 1:
            raise DataError(f"{self.video_id}: sentence must contain at least one word")
        for text, pos in self.words:
            if pos not in POS_TAGS:
                raise DataError(f"{self.video_id}: unknown POS tag {pos!r} on word {text!r}")

    @property
    def texts(self) -> list[str]:
        return [w for w, _ in self.words]


@dataclass
class PseudoGlossSequence:
    """Content words filtered from a sentence, in spoken order."""

    video_id: str
    words: list[str]
    source_indices: list[int]

    @property
    def is_empty(self) -> bool:
        return len(self.words) == 0


@dataclass
class GroundTruth:
    """Oracle segment boundaries and per-segment sign ids for one video."""

    video_id: str
    spans: list[tuple[int, int]]
    sign_ids: list[int]

    def __post_init__(self):
        if len(self.spans) != len(self.sign_ids):
            raise DataError(f"{self.video_id}: spans/sign_ids length mismatch")
        pos = 0
        for start, end in self.spans:
            if start != pos or end <= start:
                raise DataError(f"{self.video_id}: spans must partition [0, T) in order")
            pos = end

    @property
    def num_frames(self) -> int:
        return self.spans[-1][1]


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic corpus generator."""

    sign_vocab_size: int = 40
    prototype_dim: int = 16
    duration_range: tuple[int, int] = (5, 9)
    sentence_length_range: tuple[int, int] = (4, 8)
    noise_sigma: float = 0.02
    filler_prob: float = 0.2
    swap_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        d_min, d_max = self.duration_range
        if d_min < 5 or d_max < d_min:
            raise DataError("duration_range must satisfy 5 <= d_min <= d_max")
        l_min, l_max = self.sentence_length_range
        if l_min < 1 or l_max < l_min:
            raise DataError("sentence_length_range must satisfy 1 <= l_min <= l_max")
        for name in ("filler_prob", "swap_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DataError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")
        if self.sign_vocab_size < 1 or self.prototype_dim < 1:
            raise DataError("sign_vocab_size and prototype_dim must be positive")


class Vocabulary:
    """Bijective token<->id map with fixed reserved ids 0..3."""

    def __init__(self, tokens: list[str]):
        if list(tokens[:4]) != list(RESERVED_TOKENS):
            raise DataError("vocabulary must start with the reserved tokens")
        self._id_to_token = list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def encode(self, words: list[str]) -> list[int]:
        return [self.id_of(w) for w in words]

    def decode(self, ids: list[int]) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)


def extract_pseudo_gloss(sentence: TaggedSentence, keep_tags=None) -> PseudoGlossSequence:
    """Filter a tagged sentence down to its content words, preserving order.

    Returns an empty (flagged, non-fatal) sequence when no word carries a
    kept tag; callers decide whether to skip such samples.
    """
    tags = CONTENT_TAGS if keep_tags is None else frozenset(keep_tags)
    words, idxs = [], []
    for i, (text, pos) in enumerate(sentence.words):
        if pos in tags:
            words.append(text)
            idxs.append(i)
    return PseudoGlossSequence(sentence.video_id, words, idxs)


def build_vocabulary(corpus: list[TaggedSentence], min_count: int = 1) -> Vocabulary:
    """Frequency-descending vocabulary over training words, ties broken lexicographically."""
    if not corpus:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for sent in corpus:
        for text, _ in sent.words:
            counts[text] = counts.get(text, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(list(RESERVED_TOKENS) + kept)


# ---------------------------------------------------------------------------
# Frame feature files and line-delimited record files


def write_frame_file(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2:
        raise DataError(f"frame payload must be 2-D, got shape {frames.shape}")
    t, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_FILE_MAGIC)
        fh.write(struct.pack("<III", FRAME_FILE_VERSION, t, c))
        fh.write(frames.astype("<f4").tobytes())


def read_frame_file(path, video_id: str = "") -> np.ndarray:
    label = video_id or str(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{label}: cannot read frame file {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != FRAME_FILE_MAGIC:
        raise DataError(f"{label}: bad frame file magic in {path}")
    version, t, c = struct.unpack("<III", raw[4:16])
    if version != FRAME_FILE_VERSION:
        raise DataError(f"{label}: unsupported frame file version {version}")
    payload = raw[16:]
    expected = 4 * t * c
    if len(payload) != expected:
        raise DataError(
            f"{label}: frame payload length mismatch, header says {t}x{c} "
            f"({expected} bytes) but file carries {len(payload)} bytes"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, c)
    if not np.isfinite(frames).all():
        raise DataError(f"{label}: non-finite values in frame file")
    return frames.astype(np.float32)


def _read_jsonl(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    records = []
    for ln, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{ln}: bad record: {exc}") from exc
    return records


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_frame_sequences(manifest_path) -> list[FrameSequence]:
    """Load all frame sequences referenced by a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out = []
    for rec in _read_jsonl(manifest_path):
        vid = rec.get("video_id")
        rel = rec.get("path")
        if not vid or not rel:
            raise DataError(f"{manifest_path}: manifest record needs video_id and path: {rec}")
        frames = read_frame_file(base / rel, video_id=vid)
        out.append(FrameSequence(vid, frames, fps=float(rec.get("fps", 25.0))))
    return out


def load_transcripts(path) -> list[TaggedSentence]:
    out = []
    for rec in _read_jsonl(path):
        words = [(w["text"], w["pos"]) for w in rec["words"]]
        out.append(TaggedSentence(rec["video_id"], words))
    return out


def load_ground_truth(path) -> list[GroundTruth]:
    out = []
    for rec in _read_jsonl(path):
        spans = [(int(s), int(e)) for s, e in rec["spans"]]
        out.append(GroundTruth(rec["video_id"], spans, [int(i) for i in rec["sign_ids"]]))
    return out


def save_corpus(out_dir, frames: list[FrameSequence], sentences: list[TaggedSentence],
                truths: list[GroundTruth]) -> None:
    """Write manifest.jsonl, transcripts.jsonl, ground_truth.jsonl and features/*.sgf."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for fs in frames:
        rel = f"features/{fs.video_id}.sgf"
        write_frame_file(out_dir / rel, fs.frames)
        manifest.append({"video_id": fs.video_id, "path": rel, "fps": fs.fps})
    _write_jsonl(out_dir / "manifest.jsonl", manifest)
    _write_jsonl(out_dir / "transcripts.jsonl", [
        {"video_id": s.video_id, "words": [{"text": t, "pos": p} for t, p in s.words]}
        for s in sentences
    ])
    _write_jsonl(out_dir / "ground_truth.jsonl", [
        {"video_id": g.video_id, "spans": [[s, e] for s, e in g.spans], "sign_ids": g.sign_ids}
        for g in truths
    ])


def load_corpus(data_dir):
    """Load (frames, sentences, truths) from a directory written by save_corpus."""
    data_dir = Path(data_dir)
    frames = load_frame_sequences(data_dir / "manifest.jsonl")
    sentences = load_transcripts(data_dir / "transcripts.jsonl")
    truths = load_ground_truth(data_dir / "ground_truth.jsonl")
    return frames, sentences, truths


# ---------------------------------------------------------------------------
# Synthetic generation


def sign_word(sign_id: int) -> str:
    return f"sign{sign_id:03d}"


def _raised_cosine(duration: int) -> np.ndarray:
    # Hann arch: zero at both segment edges so motion energy dips at boundaries.
    i = np.arange(duration, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * math.pi * i / (duration - 1)))


def _render_sign(prototype: np.ndarray, duration: int, sigma: float, rng) -> np.ndarray:
    env = _raised_cosine(duration)
    frames = env[:, None] * prototype[None, :]
    if sigma > 0:
        frames = frames + sigma * rng.standard_normal(frames.shape)
    return frames


def generate_synthetic(spec: SyntheticSpec, num_videos: int):
    """Generate a seeded synthetic corpus.

    Returns (frame_sequences, tagged_sentences, ground_truths), all fully
    determined by (spec, num_videos). The spoken sentence lists the sign
    names in signing order, then applies adjacent content-word swaps with
    probability swap_prob per pair and inserts filler words with probability
    filler_prob per gap.
    """
    rng = np.random.default_rng(spec.seed)
    protos = rng.standard_normal((spec.sign_vocab_size, spec.prototype_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    d_min, d_max = spec.duration_range
    l_min, l_max = spec.sentence_length_range
    frames_out, sents_out, truths_out = [], [], []
    for v in range(num_videos):
        vid = f"vid{v:05d}"
        length = int(rng.integers(l_min, l_max + 1))
        sign_ids = [int(rng.integers(0, spec.sign_vocab_size)) for _ in range(length)]

        chunks, spans, pos = [], [], 0
        for g in sign_ids:
            d = int(rng.integers(d_min, d_max + 1))
            chunks.append(_render_sign(protos[g], d, spec.noise_sigma, rng))
            spans.append((pos, pos + d))
            pos += d
        frames = np.concatenate(chunks, axis=0).astype(np.float32)

        # Spoken word order: signing order, with adjacent swaps.
        order = list(range(length))
        i = 0
        while i < length - 1:
            if rng.random() < spec.swap_prob:
                order[i], order[i + 1] = order[i + 1], order[i]
                i += 2
            else:
                i += 1
        content = [(sign_word(sign_ids[j]), "NOUN") for j in order]

        words: list[tuple[str, str]] = []
        for k in range(length + 1):
            if rng.random() < spec.filler_prob:
                words.append(FILLER_WORDS[int(rng.integers(0, len(FILLER_WORDS)))])
            if k < length:
                words.append(content[k])

        frames_out.append(FrameSequence(vid, frames))
        sents_out.append(TaggedSentence(vid, words))
        truths_out.append(GroundTruth(vid, spans, sign_ids))
    return frames_out, sents_out, truths_out
