"""Architecture components.

Visual side: a learned frame adapter projects raw frame features to an
intermediate width, a temporal conv (valid padding, odd kernel) with masked
batch norm and ReLU up-projects to model width, and average pooling over the
remaining time steps yields one token per segment. A context transformer
contextualizes token sequences. Language side: an embedding table provides
lexical-identity vectors and a transformer encoder provides contextual hidden
states. A three-block feedforward mapper bridges visual tokens into the
language embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import FrameSequence
from .errors import DataError, ShapeError
from .nncore import layers as L
from .nncore import tensor as T
from .nncore.layers import Module, Parameter, RngBox
from .nncore.tensor import Tensor
from .segmenter import SegmentSet


@dataclass
class VisualEncoderConfig:
    c_in: int
    frame_dim: int = 512
    model_dim: int = 1024
    conv_kernel: int = 5
    context_layers: int = 3
    context_heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.conv_kernel % 2 == 0:
            raise DataError("conv_kernel must be odd")
        if min(self.c_in, self.frame_dim, self.model_dim) < 1:
            raise DataError("dimensions must be positive")


@dataclass
class LanguageEncoderConfig:
    vocab_size: int
    model_dim: int = 1024
    encoder_layers: int = 3
    heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.vocab_size, self.model_dim) < 1:
            raise DataError("dimensions must be positive")


@dataclass
class MapperConfig:
    blocks: int = 3
    in_dim: int = 1024
    out_dim: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if self.blocks != 3:
            raise DataError("mapper uses a fixed stack of three blocks")


@dataclass
class SegmentBatch:
    """Padded per-segment frame arrays plus bookkeeping for regrouping."""

    x: np.ndarray            # (S, n_max, c_in)
    conv_mask: np.ndarray    # (S, n_max - k + 1) validity of conv outputs
    counts: list[int]        # segments per video
    scatter: np.ndarray      # (B * N_max, S) 0/1 regrouping matrix
    token_mask: np.ndarray   # (B, N_max)


def pack_segments(frames_list: list[np.ndarray], spans_list, kernel: int,
                  dtype) -> SegmentBatch:
    """Slice, pad, and batch all segments of a video batch.

    Segments shorter than the kernel are padded by repeating their final
    frame, preserving the out_len = n - k + 1 contract with minimal
    distortion.
    """
    if any(not spans for spans in spans_list):
        raise DataError("empty segment set")
    segs = []
    counts = []
    for frames, spans in zip(frames_list, spans_list):
        counts.append(len(spans))
        for sp in spans:
            chunk = np.asarray(frames[sp.start:sp.end], dtype=dtype)
            if chunk.shape[0] < kernel:
                pad = np.repeat(chunk[-1:], kernel - chunk.shape[0], axis=0)
                chunk = np.concatenate([chunk, pad], axis=0)
            segs.append(chunk)
    n_max = max(c.shape[0] for c in segs)
    c_in = segs[0].shape[1]
    s_total = len(segs)
    x = np.zeros((s_total, n_max, c_in), dtype=dtype)
    lo_max = n_max - kernel + 1
    conv_mask = np.zeros((s_total, lo_max), dtype=dtype)
    for i, chunk in enumerate(segs):
        x[i, :chunk.shape[0]] = chunk
        conv_mask[i, :chunk.shape[0] - kernel + 1] = 1.0

    b = len(frames_list)
    n_tok_max = max(counts)
    scatter = np.zeros((b * n_tok_max, s_total), dtype=dtype)
    token_mask = np.zeros((b, n_tok_max), dtype=dtype)
    s = 0
    for i, cnt in enumerate(counts):
        for j in range(cnt):
            scatter[i * n_tok_max + j, s] = 1.0
            s += 1
        token_mask[i, :cnt] = 1.0
    return SegmentBatch(x, conv_mask, counts, scatter, token_mask)


class TemporalConv(Module):
    """Conv1d(kernel k, valid) + masked BatchNorm + ReLU."""

    def __init__(self, in_dim: int, out_dim: int, kernel: int, rng, dtype=np.float32):
        super().__init__()
        self.kernel = kernel
        self.conv = L.Conv1d(in_dim, out_dim, kernel, rng, dtype)
        self.bn = L.BatchNorm1d(out_dim, dtype=dtype)

    def __call__(self, x, valid_mask):
        return T.relu(self.bn(self.conv(x), valid_mask))


class ContextTransformer(Module):
    """Positional encoding + transformer encoder over token sequences."""

    def __init__(self, dim: int, layers: int, heads: int, ff_mult: int,
                 dropout: float, rngbox: RngBox, rng, dtype=np.float32):
        super().__init__()
        self.encoder = L.TransformerEncoder(layers, dim, heads, dim * ff_mult,
                                            dropout, rngbox, rng, dtype)

    def __call__(self, x, mask: np.ndarray):
        return self.encoder(L.add_positional_encoding(x), mask)


class Mapper(Module):
    """Stack of three feedforward blocks (layernorm, linear, GeLU, dropout).

    Applied per token: no cross-token mixing.
    """

    def __init__(self, cfg: MapperConfig, rngbox: RngBox, rng, dtype=np.float32):
        super().__init__()
        self.norms = [L.LayerNorm(cfg.in_dim if i == 0 else cfg.out_dim, dtype=dtype)
                      for i in range(cfg.blocks)]
        self.linears = [
            L.Linear(cfg.in_dim if i == 0 else cfg.out_dim, cfg.out_dim, rng, dtype)
            for i in range(cfg.blocks)
        ]
        self.drop = L.Dropout(cfg.dropout, rngbox)

    def __call__(self, x):
        for norm, lin in zip(self.norms, self.linears):
            x = self.drop(T.gelu(lin(norm(x))))
        return x


class LanguageEmbedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng, dtype=np.float32):
        super().__init__()
        self.emb = L.Embedding(vocab_size, dim, rng, dtype)

    def __call__(self, ids: np.ndarray):
        return self.emb(ids)


class Temperature(Module):
    """Learnable contrastive temperature, exp-parameterized for positivity."""

    def __init__(self, init: float = 0.07, dtype=np.float32):
        super().__init__()
        self.log_tau = Parameter(np.array(np.log(init), dtype=dtype))

    def value(self):
        return T.exp(self.log_tau)


class PretrainModel(Module):
    """Stage-1 bundle: visual tokenizer, mapper, context transformer,
    language embedding/encoder, and the shared temperature."""

    def __init__(self, vis_cfg: VisualEncoderConfig, lang_cfg: LanguageEncoderConfig,
                 map_cfg: MapperConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        if vis_cfg.model_dim != lang_cfg.model_dim:
            raise ShapeError("visual and language model dims must match for alignment")
        rng = np.random.default_rng(seed)
        self.rngbox = RngBox(seed + 1)
        self.vis_cfg = vis_cfg
        self.lang_cfg = lang_cfg
        self.dtype = dtype
        self.frame_adapter = L.Linear(vis_cfg.c_in, vis_cfg.frame_dim, rng, dtype)
        self.temporal_conv = TemporalConv(vis_cfg.frame_dim, vis_cfg.model_dim,
                                          vis_cfg.conv_kernel, rng, dtype)
        self.mapper = Mapper(map_cfg, self.rngbox, rng, dtype)
        self.context_transformer = ContextTransformer(
            vis_cfg.model_dim, vis_cfg.context_layers, vis_cfg.context_heads,
            vis_cfg.ff_mult, vis_cfg.dropout, self.rngbox, rng, dtype)
        self.language_embedding = LanguageEmbedding(lang_cfg.vocab_size,
                                                    lang_cfg.model_dim, rng, dtype)
        self.language_encoder = ContextTransformer(
            lang_cfg.model_dim, lang_cfg.encoder_layers, lang_cfg.heads,
            lang_cfg.ff_mult, lang_cfg.dropout, self.rngbox, rng, dtype)
        self.temperature = Temperature(dtype=dtype)

    def components(self) -> dict[str, Module]:
        return {
            "frame_adapter": self.frame_adapter,
            "temporal_conv": self.temporal_conv,
            "mapper": self.mapper,
            "context_transformer": self.context_transformer,
            "language_embedding": self.language_embedding,
            "language_encoder": self.language_encoder,
            "temperature": self.temperature,
        }

    def tokenize(self, frames_list, segsets):
        """Segment batch -> (tokens (B, N_max, D), token mask (B, N_max))."""
        return visual_tokens(self.frame_adapter, self.temporal_conv,
                             frames_list, segsets, self.dtype)

    def encode_text(self, ids_pad: np.ndarray, tmask: np.ndarray):
        """Padded gloss ids -> (embedding-level T_E, contextual T_H)."""
        te = self.language_embedding(ids_pad)
        th = self.language_encoder(te, tmask)
        return te, th


def visual_tokens(frame_adapter: L.Linear, temporal_conv: TemporalConv,
                  frames_list, segsets, dtype):
    """Shared visual front end: frames -> one token per segment, padded per video."""
    batch = pack_segments(frames_list, [s.spans for s in segsets],
                          temporal_conv.kernel, dtype)
    h = frame_adapter(Tensor(batch.x))
    h = temporal_conv(h, batch.conv_mask)
    tokens_flat = L.mean_pool_time(h, batch.conv_mask)          # (S, D)
    padded = T.matmul(Tensor(batch.scatter), tokens_flat)        # (B*N_max, D)
    b, n_max = batch.token_mask.shape
    tokens = T.reshape(padded, (b, n_max, tokens_flat.shape[-1]))
    return tokens, batch.token_mask


def encode_segments(model: PretrainModel, video: FrameSequence, segset: SegmentSet,
                    through_mapper: bool = False):
    """Single-video encoding: (per-segment tokens (N, D), contextual states (N, D)).

    With through_mapper=True the context transformer consumes mapped tokens,
    mirroring how the pretraining objective wires the two levels.
    """
    tokens, mask = model.tokenize([video.frames], [segset])
    ctx_in = model.mapper(tokens) if through_mapper else tokens
    ctx = model.context_transformer(ctx_in, mask)
    n = segset.num_tokens
    return tokens[0, :n], ctx[0, :n]


def segment_temporal_features(model: PretrainModel, video: FrameSequence,
                              segset: SegmentSet):
    """Per-segment conv feature maps (before pooling), for length-contract checks."""
    out = []
    k = model.temporal_conv.kernel
    for sp in segset.spans:
        batch = pack_segments([video.frames], [[sp]], k, model.dtype)
        h = model.frame_adapter(Tensor(batch.x))
        h = model.temporal_conv(h, batch.conv_mask)
        valid = int(batch.conv_mask[0].sum())
        out.append(h[0, :valid])
    return out
