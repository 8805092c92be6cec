"""Sequence-to-sequence translation over mapped visual tokens.

The translation encoder consumes mapper outputs (plus positional encodings);
an autoregressive decoder with causal self-attention and cross-attention
generates the spoken sentence. Decoding supports greedy search and beam
search with length-normalized scoring. Stage-1 weights can be transferred
into the visual front end (and optionally into the translation encoder)
before fine-tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .errors import CheckpointError, DataError
from .losses import lm_loss
from .model import ContextTransformer, Mapper, MapperConfig, TemporalConv, visual_tokens
from .nncore import layers as L
from .nncore import tensor as T
from .nncore.checkpoint import Checkpoint, load_checkpoint
from .nncore.layers import Module, RngBox
from .nncore.tensor import Tensor

TRANSFER_POLICIES = ("none", "vle", "vle_plus_te")

# Stage-1 components copied by the "vle" transfer policy.
VLE_TAGS = ("frame_adapter", "temporal_conv", "mapper")


@dataclass
class TranslatorConfig:
    encoder_layers: int = 3
    decoder_layers: int = 3
    heads: int = 8
    model_dim: int = 1024
    ff_mult: int = 4
    dropout: float = 0.1
    max_decode_len: int = 150
    beam_width: int = 4
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.beam_width < 1 or self.max_decode_len < 1:
            raise DataError("beam_width and max_decode_len must be >= 1")


@dataclass
class Hypothesis:
    """A (partial or finalized) decode: BOS-prefixed ids and running score."""

    tokens: list[int]
    log_prob: float
    length_penalty: float = 1.0
    finished: bool = False

    @property
    def generated(self) -> list[int]:
        ids = self.tokens[1:]
        return ids[:-1] if ids and ids[-1] == EOS_ID else ids

    @property
    def normalized_score(self) -> float:
        n = max(len(self.tokens) - 1, 1)
        return self.log_prob / (n ** self.length_penalty)


class DecoderStack(Module):
    """Token embedding + transformer decoder + vocabulary projection."""

    def __init__(self, vocab_size: int, dim: int, layers: int, heads: int,
                 ff_hidden: int, dropout: float, rngbox: RngBox, rng, dtype):
        super().__init__()
        self.emb = L.Embedding(vocab_size, dim, rng, dtype)
        self.decoder = L.TransformerDecoder(layers, dim, heads, ff_hidden,
                                            dropout, rngbox, rng, dtype)
        self.out = L.Linear(dim, vocab_size, rng, dtype)
        # small output init keeps the initial predictive near-uniform
        self.out.w.data = (0.02 * rng.standard_normal(self.out.w.data.shape)
                           ).astype(dtype)

    def __call__(self, tgt_ids: np.ndarray, memory, memory_mask):
        x = L.add_positional_encoding(self.emb(tgt_ids))
        h = self.decoder(x, memory, memory_mask)
        return self.out(h)


@dataclass
class VisualFrontEndConfig:
    c_in: int
    frame_dim: int = 512
    conv_kernel: int = 5


class TranslationModel(Module):
    """Stage-2 bundle: visual front end + mapper + encoder-decoder."""

    def __init__(self, front_cfg: VisualFrontEndConfig, cfg: TranslatorConfig,
                 vocab_size: int, seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.rngbox = RngBox(seed + 1)
        self.cfg = cfg
        self.dtype = dtype
        d = cfg.model_dim
        self.frame_adapter = L.Linear(front_cfg.c_in, front_cfg.frame_dim, rng, dtype)
        self.temporal_conv = TemporalConv(front_cfg.frame_dim, d,
                                          front_cfg.conv_kernel, rng, dtype)
        self.mapper = Mapper(MapperConfig(in_dim=d, out_dim=d, dropout=cfg.dropout),
                             self.rngbox, rng, dtype)
        self.translation_encoder = ContextTransformer(
            d, cfg.encoder_layers, cfg.heads, cfg.ff_mult, cfg.dropout,
            self.rngbox, rng, dtype)
        self.translation_decoder = DecoderStack(
            vocab_size, d, cfg.decoder_layers, cfg.heads, d * cfg.ff_mult,
            cfg.dropout, self.rngbox, rng, dtype)

    def components(self) -> dict[str, Module]:
        return {
            "frame_adapter": self.frame_adapter,
            "temporal_conv": self.temporal_conv,
            "mapper": self.mapper,
            "translation_encoder": self.translation_encoder,
            "translation_decoder": self.translation_decoder,
        }

    def encode_memory(self, frames_list, segsets):
        tokens, vmask = visual_tokens(self.frame_adapter, self.temporal_conv,
                                      frames_list, segsets, self.dtype)
        mapped = self.mapper(tokens)
        return self.translation_encoder(mapped, vmask), vmask


def translate_forward(model: TranslationModel, frames_list, segsets,
                      dec_in: np.ndarray, dec_tgt: np.ndarray,
                      smoothing: float = 0.2):
    """Teacher-forced forward pass: returns (per-step logits, LM loss)."""
    if dec_in.size == 0:
        raise DataError("empty decoder target")
    memory, vmask = model.encode_memory(frames_list, segsets)
    logits = model.translation_decoder(dec_in, memory, vmask)
    return logits, lm_loss(logits, dec_tgt, smoothing=smoothing, pad_id=PAD_ID)


def frame_targets(token_ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """BOS/EOS framing for teacher forcing: (decoder input, prediction target)."""
    return (np.array([BOS_ID] + token_ids, dtype=np.int64),
            np.array(token_ids + [EOS_ID], dtype=np.int64))


def pad_target_batch(targets: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    rows = [frame_targets(t) for t in targets]
    lmax = max(r[0].shape[0] for r in rows)
    dec_in = np.full((len(rows), lmax), PAD_ID, dtype=np.int64)
    dec_tgt = np.full((len(rows), lmax), PAD_ID, dtype=np.int64)
    for i, (di, dt) in enumerate(rows):
        dec_in[i, :di.shape[0]] = di
        dec_tgt[i, :dt.shape[0]] = dt
    return dec_in, dec_tgt


def _step_log_probs(model, prefixes: np.ndarray, memory, vmask) -> np.ndarray:
    """Next-token log-probabilities for a batch of equal-length prefixes."""
    logits = model.translation_decoder(prefixes, memory, vmask)
    last = logits.data[:, -1, :].astype(np.float64)
    last[:, PAD_ID] = -np.inf
    last[:, BOS_ID] = -np.inf
    shifted = last - last.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def greedy_decode(model: TranslationModel, frames, segset,
                  max_len: int | None = None) -> list[int]:
    """Argmax decoding until EOS or the length cap; returns word ids only."""
    cfg = model.cfg
    cap = cfg.max_decode_len if max_len is None else max_len
    with T.no_grad():
        memory, vmask = model.encode_memory([frames], [segset])
        ids = [BOS_ID]
        for _ in range(cap):
            lp = _step_log_probs(model, np.array([ids]), memory, vmask)[0]
            nxt = int(lp.argmax())
            ids.append(nxt)
            if nxt == EOS_ID:
                break
    return [i for i in ids[1:] if i != EOS_ID]


def beam_decode(model: TranslationModel, frames, segset,
                beam_width: int | None = None, max_len: int | None = None,
                length_penalty: float | None = None):
    """Beam search; returns (best Hypothesis, all finalized Hypotheses)."""
    cfg = model.cfg
    width = cfg.beam_width if beam_width is None else beam_width
    cap = cfg.max_decode_len if max_len is None else max_len
    lp_exp = cfg.length_penalty if length_penalty is None else length_penalty
    with T.no_grad():
        memory, vmask = model.encode_memory([frames], [segset])
        active = [Hypothesis([BOS_ID], 0.0, lp_exp)]
        finished: list[Hypothesis] = []
        for _ in range(cap):
            if not active:
                break
            prefixes = np.array([h.tokens for h in active])
            lp = _step_log_probs(model, prefixes, memory, vmask)
            scores = np.array([h.log_prob for h in active])[:, None] + lp
            flat = scores.reshape(-1)
            order = np.argsort(-flat, kind="stable")[:width]
            nxt_active = []
            vocab = lp.shape[1]
            for idx in order:
                i, tok = divmod(int(idx), vocab)
                hyp = Hypothesis(active[i].tokens + [tok], float(flat[idx]), lp_exp)
                if tok == EOS_ID:
                    hyp.finished = True
                    finished.append(hyp)
                else:
                    nxt_active.append(hyp)
            active = nxt_active
        for hyp in active:  # length-capped, no EOS
            finished.append(hyp)
    if not finished:
        return Hypothesis([BOS_ID], 0.0, lp_exp), []
    best = max(finished, key=lambda h: (h.normalized_score, -len(h.tokens)))
    return best, finished


def decode(model: TranslationModel, frames, segset, mode: str = "beam",
           **kwargs) -> list[int]:
    """Decode one video to word ids (PAD/BOS/EOS stripped)."""
    if mode == "greedy":
        return greedy_decode(model, frames, segset, kwargs.get("max_len"))
    if mode == "beam":
        best, _ = beam_decode(model, frames, segset, **kwargs)
        return best.generated
    raise DataError(f"unknown decode mode {mode!r}")


# ---------------------------------------------------------------------------
# Stage-1 weight transfer


def _assign_component(module: Module, ckpt: Checkpoint, src_tag: str, dst_tag: str):
    params = dict(module.named_parameters())
    prefix = src_tag + "/"
    found = {n[len(prefix):]: a for n, a in ckpt.params.items() if n.startswith(prefix)}
    if set(found) != set(params):
        raise CheckpointError(
            f"checkpoint component {src_tag!r} does not match target {dst_tag!r}: "
            f"have {sorted(found)}, need {sorted(params)}"
        )
    for name, arr in found.items():
        p = params[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"{src_tag}/{name}: shape {arr.shape} does not match {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype).copy()
    bufs = {n[len(prefix):]: a for n, a in ckpt.buffers.items() if n.startswith(prefix)}
    module.load_buffer_state(bufs)


def load_stage1(model: TranslationModel, checkpoint, policy: str = "vle"):
    """Initialize stage-2 components from a pretraining checkpoint.

    none: everything stays freshly initialized. vle: frame adapter, temporal
    conv, and mapper are loaded; any pretraining context transformer is
    discarded. vle_plus_te: additionally loads the pretraining context
    transformer as the translation encoder initialization.
    """
    if policy not in TRANSFER_POLICIES:
        raise DataError(f"unknown transfer policy {policy!r}")
    if policy == "none":
        return model
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    for tag in VLE_TAGS:
        if not ckpt.has_tag(tag):
            raise CheckpointError(f"checkpoint lacks component {tag!r} required by policy {policy!r}")
        _assign_component(model.components()[tag], ckpt, tag, tag)
    if policy == "vle_plus_te":
        if not ckpt.has_tag("context_transformer"):
            raise CheckpointError("checkpoint lacks component 'context_transformer' "
                                  "required by policy 'vle_plus_te'")
        _assign_component(model.translation_encoder, ckpt,
                          "context_transformer", "translation_encoder")
    return model
