"""Two-stage training orchestration.

Stage 1 pretrains the visual tokenizer, mapper, context transformer, and
language encoder with the token-level contrastive objective (optionally the
CLIP-style global baseline, with or without dual-level supervision). Stage 2
transfers weights by policy and fine-tunes the encoder-decoder translator
with label-smoothed cross-entropy, validating by greedy decode every few
epochs and keeping the best checkpoint by validation BLEU-4. Runs are
deterministic given (seed, config): checkpoints are byte-stable and the
epoch log file contains no timing fields (wall times go to a sidecar file).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as LS
from .corpus import (
    FrameSequence,
    GroundTruth,
    TaggedSentence,
    Vocabulary,
    build_vocabulary,
    extract_pseudo_gloss,
    sign_word,
)
from .errors import DataError
from .metrics import EvalReport, evaluate_corpus, alignment_accuracy
from .model import (
    LanguageEncoderConfig,
    MapperConfig,
    PretrainModel,
    VisualEncoderConfig,
)
from .nncore import tensor as T
from .nncore.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .nncore.layers import Module, mean_pool_time
from .nncore.optim import SGD
from .segmenter import (
    SegmentSet,
    segment_motion_energy,
    segment_oracle,
    segment_uniform,
)
from .translate import (
    TranslationModel,
    TranslatorConfig,
    VisualFrontEndConfig,
    beam_decode,
    greedy_decode,
    load_stage1,
    pad_target_batch,
    translate_forward,
)

SEGMENTER_CHOICES = ("oracle", "energy", "uniform")
LOSS_MODES = ("clcl", "clip")


@dataclass
class RunConfig:
    """Experiment configuration; stage-specific optimizer defaults built in."""

    stage: str
    batch_size: int
    lr: float
    weight_decay: float
    grad_clip: float
    momentum: float = 0.9
    epochs: int = 80
    dropout: float = 0.1
    label_smoothing: float = 0.2
    alpha: float = 0.5
    beta: float = 0.6
    seed: int = 0
    segmenter: str = "oracle"
    uniform_factor: int = 4
    smooth_window: int = 3
    min_seg_len: int = 5
    loss_mode: str = "clcl"
    dual_supervision: bool = True
    feature_noise_sigma: float = 0.0
    val_every: int = 5
    min_count: int = 1
    # model dimensions
    frame_dim: int = 512
    model_dim: int = 1024
    context_layers: int = 3
    context_heads: int = 8
    lang_layers: int = 3
    enc_layers: int = 3
    dec_layers: int = 3
    heads: int = 8
    ff_mult: int = 4
    max_decode_len: int = 150
    beam_width: int = 4
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise DataError(f"unknown stage {self.stage!r}")
        if self.segmenter not in SEGMENTER_CHOICES:
            raise DataError(f"unknown segmenter {self.segmenter!r}")
        if self.loss_mode not in LOSS_MODES:
            raise DataError(f"unknown loss mode {self.loss_mode!r}")
        LS.LossWeights(self.alpha, self.beta, self.label_smoothing)

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "RunConfig":
        base = dict(stage="pretrain", batch_size=16, lr=0.03, weight_decay=0.0,
                    grad_clip=1.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def finetune_defaults(cls, **overrides) -> "RunConfig":
        base = dict(stage="finetune", batch_size=8, lr=0.004, weight_decay=0.001,
                    grad_clip=5.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class EpochLog:
    epoch: int
    losses: dict[str, float]
    lr: float
    wall_time: float
    val: EvalReport | None = None

    def record(self) -> dict:
        # The deterministic part; wall_time is serialized separately.
        return {
            "epoch": self.epoch,
            "losses": {k: self.losses[k] for k in sorted(self.losses)},
            "lr": self.lr,
            "val": self.val.to_dict() if self.val is not None else None,
        }


@dataclass
class Sample:
    video_id: str
    frames: np.ndarray
    segset: SegmentSet
    gloss_words: list[str]
    gloss_ids: list[int]
    target_ids: list[int]
    target_words: list[str]
    token_truth_ids: list[int] | None = None  # per-segment sign word ids (oracle only)


@dataclass
class PreparedData:
    samples: list[Sample]
    vocab: Vocabulary
    c_in: int
    empty_gloss_ids: list[str] = field(default_factory=list)

    def contrastive_samples(self) -> list[Sample]:
        return [s for s in self.samples if s.gloss_ids]


def make_segset(cfg: RunConfig, video: FrameSequence, truth: GroundTruth | None) -> SegmentSet:
    if cfg.segmenter == "oracle":
        if truth is None:
            raise DataError(f"{video.video_id}: oracle segmentation needs ground truth")
        return segment_oracle(truth)
    if cfg.segmenter == "energy":
        return segment_motion_energy(video, cfg.smooth_window, cfg.min_seg_len)
    return segment_uniform(video, factor=cfg.uniform_factor)


def prepare_data(frames: list[FrameSequence], sentences: list[TaggedSentence],
                 truths: list[GroundTruth] | None, cfg: RunConfig,
                 vocab: Vocabulary | None = None) -> PreparedData:
    """Pair videos with sentences, segment, extract glosses, and encode ids."""
    sent_by_id = {s.video_id: s for s in sentences}
    truth_by_id = {t.video_id: t for t in truths} if truths else {}
    if vocab is None:
        vocab = build_vocabulary(sentences, min_count=cfg.min_count)
    samples, empty = [], []
    for fs in frames:
        sent = sent_by_id.get(fs.video_id)
        if sent is None:
            raise DataError(f"{fs.video_id}: no transcript")
        truth = truth_by_id.get(fs.video_id)
        segset = make_segset(cfg, fs, truth)
        gloss = extract_pseudo_gloss(sent)
        if gloss.is_empty:
            empty.append(fs.video_id)
        token_truth = None
        if truth is not None and cfg.segmenter == "oracle":
            token_truth = [vocab.id_of(sign_word(g)) for g in truth.sign_ids]
        samples.append(Sample(
            video_id=fs.video_id,
            frames=fs.frames,
            segset=segset,
            gloss_words=gloss.words,
            gloss_ids=vocab.encode(gloss.words),
            target_ids=vocab.encode(sent.texts),
            target_words=sent.texts,
            token_truth_ids=token_truth,
        ))
    return PreparedData(samples, vocab, frames[0].feature_dim if frames else 0, empty)


# ---------------------------------------------------------------------------
# Model construction and checkpoint plumbing


def build_pretrain_model(cfg: RunConfig, c_in: int, vocab_size: int,
                         dtype=np.float32) -> PretrainModel:
    vis = VisualEncoderConfig(c_in=c_in, frame_dim=cfg.frame_dim,
                              model_dim=cfg.model_dim,
                              context_layers=cfg.context_layers,
                              context_heads=cfg.context_heads,
                              ff_mult=cfg.ff_mult, dropout=cfg.dropout)
    lang = LanguageEncoderConfig(vocab_size=vocab_size, model_dim=cfg.model_dim,
                                 encoder_layers=cfg.lang_layers, heads=cfg.heads,
                                 ff_mult=cfg.ff_mult, dropout=cfg.dropout)
    mapper = MapperConfig(in_dim=cfg.model_dim, out_dim=cfg.model_dim,
                          dropout=cfg.dropout)
    return PretrainModel(vis, lang, mapper, seed=cfg.seed, dtype=dtype)


def build_translation_model(cfg: RunConfig, c_in: int, vocab_size: int,
                            dtype=np.float32) -> TranslationModel:
    front = VisualFrontEndConfig(c_in=c_in, frame_dim=cfg.frame_dim)
    tcfg = TranslatorConfig(encoder_layers=cfg.enc_layers,
                            decoder_layers=cfg.dec_layers, heads=cfg.heads,
                            model_dim=cfg.model_dim, ff_mult=cfg.ff_mult,
                            dropout=cfg.dropout,
                            max_decode_len=cfg.max_decode_len,
                            beam_width=cfg.beam_width,
                            length_penalty=cfg.length_penalty)
    return TranslationModel(front, tcfg, vocab_size, seed=cfg.seed, dtype=dtype)


def tagged_named_parameters(components: dict[str, Module]):
    for tag, mod in components.items():
        for name, p in mod.named_parameters():
            yield f"{tag}/{name}", p


def build_checkpoint(components: dict[str, Module], optimizer: SGD | None = None,
                     rng: dict | None = None, meta: dict | None = None) -> Checkpoint:
    ckpt = Checkpoint(meta=meta or {}, rng=rng)
    for tag, mod in components.items():
        for name, p in mod.named_parameters():
            full = f"{tag}/{name}"
            ckpt.params[full] = p.data.copy()
            ckpt.tags[full] = tag
        for name, arr in mod.named_buffers():
            ckpt.buffers[f"{tag}/{name}"] = arr.copy()
    if optimizer is not None:
        ckpt.optimizer = optimizer.state_dict()
    return ckpt


def restore_components(components: dict[str, Module], ckpt: Checkpoint):
    params = dict(tagged_named_parameters(components))
    for name, arr in ckpt.params.items():
        if name not in params:
            continue
        p = params[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise DataError(f"checkpoint param {name}: shape {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype).copy()
    for tag, mod in components.items():
        prefix = f"{tag}/"
        bufs = {n[len(prefix):]: a for n, a in ckpt.buffers.items() if n.startswith(prefix)}
        mod.load_buffer_state(bufs)


# ---------------------------------------------------------------------------
# Stage-1 loss assembly


def pretrain_loss_terms(model: PretrainModel, samples: list[Sample],
                        cfg: RunConfig, keep_grids: bool = False) -> dict:
    """Compute the active contrastive loss terms for one batch.

    Returns a dict with 'total' plus the per-level terms that were computed
    ('ce' at the embedding level, 'hs' at the hidden-state level). Without
    dual supervision only the hidden-state level is active.
    """
    frames_list = [s.frames for s in samples]
    segsets = [s.segset for s in samples]
    id_rows = [s.gloss_ids for s in samples]
    if any(not ids for ids in id_rows):
        raise DataError("contrastive batch contains an empty pseudo-gloss sample")
    m_max = max(len(ids) for ids in id_rows)
    ids_pad = np.zeros((len(id_rows), m_max), dtype=np.int64)
    tmask = np.zeros((len(id_rows), m_max), dtype=np.float64)
    for i, ids in enumerate(id_rows):
        ids_pad[i, :len(ids)] = ids
        tmask[i, :len(ids)] = 1.0

    tokens, vmask = model.tokenize(frames_list, segsets)
    mapped = model.mapper(tokens)
    te, th = model.encode_text(ids_pad, tmask)
    tau = model.temperature.value()

    terms: dict = {}
    sim_ce = None
    if cfg.loss_mode == "clcl":
        hv = model.context_transformer(mapped, vmask)
        if cfg.dual_supervision:
            sim_ce = LS.token_similarity_aggregate(mapped, vmask, te, tmask, tau,
                                                   keep_grids=keep_grids)
            terms["ce"] = LS.clcl_loss(sim_ce, cfg.alpha)
        sim_hs = LS.token_similarity_aggregate(hv, vmask, th, tmask, tau)
        terms["hs"] = LS.clcl_loss(sim_hs, cfg.alpha)
    else:
        hv = model.context_transformer(mapped, vmask)
        if cfg.dual_supervision:
            terms["ce"] = LS.clip_global_loss(mean_pool_time(mapped, vmask),
                                              mean_pool_time(te, tmask), tau)
        terms["hs"] = LS.clip_global_loss(mean_pool_time(hv, vmask),
                                          mean_pool_time(th, tmask), tau)
    if cfg.dual_supervision:
        terms["total"] = LS.dual_level_loss(terms["ce"], terms["hs"], cfg.beta)
    else:
        terms["total"] = terms["hs"]
    if keep_grids and sim_ce is not None:
        terms["grids"] = sim_ce.grids
    return terms


def _batched(indices: np.ndarray, batch_size: int, drop_last: bool):
    n = len(indices)
    end = (n // batch_size) * batch_size if drop_last else n
    for a in range(0, end, batch_size):
        yield indices[a:min(a + batch_size, n)]


def _apply_feature_noise(samples: list[Sample], sigma: float, rng) -> list[Sample]:
    if sigma <= 0:
        return samples
    noisy = []
    for s in samples:
        jitter = (sigma * rng.standard_normal(s.frames.shape)).astype(s.frames.dtype)
        noisy.append(replace(s, frames=s.frames + jitter))
    return noisy


class RunDir:
    """Run directory layout: config snapshot first, then checkpoints/logs/reports."""

    def __init__(self, path, config_snapshot: dict):
        self.path = Path(path)
        (self.path / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.path / "logs").mkdir(exist_ok=True)
        (self.path / "reports").mkdir(exist_ok=True)
        (self.path / "config.snapshot").write_text(
            json.dumps(config_snapshot, sort_keys=True, indent=2) + "\n")
        self._epoch_log = self.path / "logs" / "epochs.jsonl"
        self._timing_log = self.path / "logs" / "timings.jsonl"

    def checkpoint_path(self, name: str) -> Path:
        return self.path / "checkpoints" / f"{name}.ckpt"

    def append_log(self, log: EpochLog):
        with open(self._epoch_log, "a") as fh:
            fh.write(json.dumps(log.record(), sort_keys=True) + "\n")
        with open(self._timing_log, "a") as fh:
            fh.write(json.dumps({"epoch": log.epoch, "wall_time": log.wall_time}) + "\n")

    @property
    def epoch_log_path(self) -> Path:
        return self._epoch_log


@dataclass
class StageResult:
    checkpoint: Path
    last_checkpoint: Path
    logs: list[EpochLog]
    best_bleu4: float | None = None


def _rng_bundle_state(model, shuffle_rng, noise_rng) -> dict:
    return {
        "dropout": model.rngbox.get_state(),
        "shuffle": shuffle_rng.bit_generator.state,
        "noise": noise_rng.bit_generator.state,
    }


def pretrain(cfg: RunConfig, data: PreparedData, out_dir,
             resume_from=None, stop_after: int | None = None) -> StageResult:
    """Stage-1 contrastive pretraining; returns the final checkpoint.

    stop_after simulates an interruption after that many epochs; resuming
    from the state checkpoint then reproduces the uninterrupted run exactly.
    """
    if cfg.stage != "pretrain":
        raise DataError("pretrain() needs a pretrain-stage config")
    if cfg.batch_size < 2:
        raise DataError("contrastive pretraining needs batch_size >= 2 for negatives")
    samples = data.contrastive_samples()
    if len(samples) < cfg.batch_size:
        raise DataError("not enough non-empty-gloss samples for one batch")

    run = RunDir(out_dir, {"config": cfg.to_dict(), "vocab_size": data.vocab.size,
                           "c_in": data.c_in, "kind": "pretrain"})
    model = build_pretrain_model(cfg, data.c_in, data.vocab.size)
    params = list(tagged_named_parameters(model.components()))
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip,
              total_epochs=cfg.epochs)
    shuffle_rng = np.random.default_rng(cfg.seed + 101)
    noise_rng = np.random.default_rng(cfg.seed + 202)
    start_epoch = 0
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        restore_components(model.components(), state)
        opt.load_state_dict(state.optimizer)
        model.rngbox.set_state(state.rng["dropout"])
        shuffle_rng.bit_generator.state = state.rng["shuffle"]
        noise_rng.bit_generator.state = state.rng["noise"]
        start_epoch = state.meta["epoch"] + 1

    logs = []
    model.train()
    meta = {"stage": "pretrain", "config": cfg.to_dict(), "c_in": data.c_in,
            "vocab": data.vocab.tokens}
    end_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start_epoch, end_epoch):
        t0 = time.perf_counter()
        opt.set_epoch(epoch)
        order = shuffle_rng.permutation(len(samples))
        sums: dict[str, float] = {}
        nb = 0
        for batch_idx in _batched(order, cfg.batch_size, drop_last=True):
            batch = _apply_feature_noise([samples[i] for i in batch_idx],
                                         cfg.feature_noise_sigma, noise_rng)
            terms = pretrain_loss_terms(model, batch, cfg)
            opt.zero_grad()
            terms["total"].backward()
            opt.step()
            for k in ("total", "ce", "hs"):
                if k in terms:
                    sums[k] = sums.get(k, 0.0) + float(terms[k].data)
            nb += 1
        log = EpochLog(epoch, {k: v / nb for k, v in sums.items()}, opt.lr,
                       time.perf_counter() - t0)
        logs.append(log)
        run.append_log(log)
        state = build_checkpoint(model.components(), opt,
                                 _rng_bundle_state(model, shuffle_rng, noise_rng),
                                 {**meta, "epoch": epoch})
        save_checkpoint(run.checkpoint_path("state"), state)

    final = build_checkpoint(model.components(), opt,
                             _rng_bundle_state(model, shuffle_rng, noise_rng),
                             {**meta, "epoch": end_epoch - 1})
    path = run.checkpoint_path("stage1")
    save_checkpoint(path, final)
    return StageResult(path, run.checkpoint_path("state"), logs)


def decode_corpus(model: TranslationModel, samples: list[Sample], vocab: Vocabulary,
                  mode: str = "greedy", beam_width: int | None = None,
                  max_len: int | None = None):
    """Decode every sample; returns (hypothesis word lists, reference word lists)."""
    was_training = model.training
    model.eval()
    hyps, refs = [], []
    for s in samples:
        if mode == "beam":
            best, _ = beam_decode(model, s.frames, s.segset, beam_width=beam_width,
                                  max_len=max_len)
            ids = best.generated
        else:
            ids = greedy_decode(model, s.frames, s.segset, max_len=max_len)
        hyps.append(vocab.decode(ids))
        refs.append(list(s.target_words))
    if was_training:
        model.train()
    return hyps, refs


def finetune(cfg: RunConfig, data: PreparedData, out_dir,
             stage1_checkpoint=None, policy: str = "vle",
             val_data: PreparedData | None = None,
             resume_from=None, stop_after: int | None = None) -> StageResult:
    """Stage-2 translation fine-tuning with periodic validation decoding."""
    if cfg.stage != "finetune":
        raise DataError("finetune() needs a finetune-stage config")
    samples = data.samples
    run = RunDir(out_dir, {"config": cfg.to_dict(), "vocab_size": data.vocab.size,
                           "c_in": data.c_in, "policy": policy, "kind": "finetune"})
    model = build_translation_model(cfg, data.c_in, data.vocab.size)
    if policy != "none":
        if stage1_checkpoint is None:
            raise DataError(f"policy {policy!r} needs a stage-1 checkpoint")
        load_stage1(model, stage1_checkpoint, policy)
    params = list(tagged_named_parameters(model.components()))
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip,
              total_epochs=cfg.epochs)
    shuffle_rng = np.random.default_rng(cfg.seed + 101)
    noise_rng = np.random.default_rng(cfg.seed + 202)
    start_epoch = 0
    best_bleu4 = -1.0
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        restore_components(model.components(), state)
        opt.load_state_dict(state.optimizer)
        model.rngbox.set_state(state.rng["dropout"])
        shuffle_rng.bit_generator.state = state.rng["shuffle"]
        noise_rng.bit_generator.state = state.rng["noise"]
        start_epoch = state.meta["epoch"] + 1
        best_bleu4 = state.meta.get("best_bleu4", -1.0)

    logs = []
    meta = {"stage": "finetune", "config": cfg.to_dict(), "c_in": data.c_in,
            "vocab": data.vocab.tokens, "policy": policy}
    best_path = run.checkpoint_path("best")
    model.train()
    end_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start_epoch, end_epoch):
        t0 = time.perf_counter()
        opt.set_epoch(epoch)
        order = shuffle_rng.permutation(len(samples))
        total = 0.0
        nb = 0
        for batch_idx in _batched(order, cfg.batch_size, drop_last=False):
            batch = _apply_feature_noise([samples[i] for i in batch_idx],
                                         cfg.feature_noise_sigma, noise_rng)
            dec_in, dec_tgt = pad_target_batch([s.target_ids for s in batch])
            _, loss = translate_forward(model, [s.frames for s in batch],
                                        [s.segset for s in batch], dec_in, dec_tgt,
                                        smoothing=cfg.label_smoothing)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data)
            nb += 1
        val_report = None
        if val_data is not None and ((epoch + 1) % cfg.val_every == 0
                                     or epoch == cfg.epochs - 1):
            hyps, refs = decode_corpus(model, val_data.samples, data.vocab, "greedy",
                                       max_len=cfg.max_decode_len)
            val_report = evaluate_corpus(hyps, refs)
            if val_report.bleu4 > best_bleu4:
                best_bleu4 = val_report.bleu4
                save_checkpoint(best_path, build_checkpoint(
                    model.components(), None, None,
                    {**meta, "epoch": epoch, "best_bleu4": best_bleu4}))
        log = EpochLog(epoch, {"lm": total / nb}, opt.lr,
                       time.perf_counter() - t0, val_report)
        logs.append(log)
        run.append_log(log)
        state = build_checkpoint(model.components(), opt,
                                 _rng_bundle_state(model, shuffle_rng, noise_rng),
                                 {**meta, "epoch": epoch, "best_bleu4": best_bleu4})
        save_checkpoint(run.checkpoint_path("state"), state)

    last = build_checkpoint(model.components(), opt,
                            _rng_bundle_state(model, shuffle_rng, noise_rng),
                            {**meta, "epoch": end_epoch - 1, "best_bleu4": best_bleu4})
    last_path = run.checkpoint_path("stage2")
    save_checkpoint(last_path, last)
    if best_bleu4 < 0:  # no validation ran; the last state is the best we know
        save_checkpoint(best_path, last)
        return StageResult(best_path, last_path, logs, None)
    return StageResult(best_path, last_path, logs, best_bleu4)


def load_translation_model(checkpoint_path) -> tuple[TranslationModel, Vocabulary]:
    """Rebuild a translation model and vocabulary from a stage-2 checkpoint."""
    ckpt = load_checkpoint(checkpoint_path)
    cfg = RunConfig.from_dict(ckpt.meta["config"])
    vocab = Vocabulary(ckpt.meta["vocab"])
    model = build_translation_model(cfg, ckpt.meta["c_in"], vocab.size)
    restore_components(model.components(), ckpt)
    model.eval()
    return model, vocab


def load_pretrain_model(checkpoint_path) -> tuple[PretrainModel, Vocabulary]:
    ckpt = load_checkpoint(checkpoint_path)
    cfg = RunConfig.from_dict(ckpt.meta["config"])
    vocab = Vocabulary(ckpt.meta["vocab"])
    model = build_pretrain_model(cfg, ckpt.meta["c_in"], vocab.size)
    restore_components(model.components(), ckpt)
    model.eval()
    return model, vocab


# ---------------------------------------------------------------------------
# Alignment inspection


def alignment_grids(model: PretrainModel, samples: list[Sample]):
    """Embedding-level similarity grids of each video against its own glosses.

    Returns (grids, gloss_id_rows, token_truth_rows) restricted to samples
    with glosses and oracle token truths.
    """
    grids, gloss_rows, truth_rows = [], [], []
    was_training = model.training
    model.eval()
    with T.no_grad():
        for s in samples:
            if not s.gloss_ids or s.token_truth_ids is None:
                continue
            tokens, vmask = model.tokenize([s.frames], [s.segset])
            mapped = model.mapper(tokens)
            te = model.language_embedding(np.asarray([s.gloss_ids]))
            nv = T.l2_normalize(mapped).data[0]
            nt = T.l2_normalize(te).data[0]
            grids.append(nv @ nt.T)
            gloss_rows.append(list(s.gloss_ids))
            truth_rows.append(list(s.token_truth_ids))
    if was_training:
        model.train()
    return grids, gloss_rows, truth_rows


def alignment_eval(model: PretrainModel, data: PreparedData) -> float:
    grids, gloss_rows, truth_rows = alignment_grids(model, data.samples)
    return alignment_accuracy(grids, gloss_rows, truth_rows)


def export_similarity(model: PretrainModel, data: PreparedData, out_dir,
                      limit: int = 16) -> dict:
    """Write per-pair token similarity grids and batch Z matrices as CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = [s for s in data.samples if s.gloss_ids][:limit]
    if len(samples) < 1:
        raise DataError("no samples with pseudo-glosses to export")
    grids, gloss_rows, truth_rows = alignment_grids(model, samples)
    paths = []
    for s, grid in zip(samples, grids):
        path = out_dir / f"grid_{s.video_id}.csv"
        header = "token_index,span_start,span_end," + ",".join(s.gloss_words)
        lines = [header]
        for a, sp in enumerate(s.segset.spans):
            vals = ",".join(f"{v:.6f}" for v in grid[a])
            lines.append(f"{a},{sp.start},{sp.end},{vals}")
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)

    was_training = model.training
    model.eval()
    with T.no_grad():
        frames_list = [s.frames for s in samples]
        segsets = [s.segset for s in samples]
        tokens, vmask = model.tokenize(frames_list, segsets)
        mapped = model.mapper(tokens)
        m_max = max(len(s.gloss_ids) for s in samples)
        ids_pad = np.zeros((len(samples), m_max), dtype=np.int64)
        tmask = np.zeros((len(samples), m_max))
        for i, s in enumerate(samples):
            ids_pad[i, :len(s.gloss_ids)] = s.gloss_ids
            tmask[i, :len(s.gloss_ids)] = 1.0
        te = model.language_embedding(ids_pad)
        sim = LS.token_similarity_aggregate(mapped, vmask, te, tmask,
                                            model.temperature.value())
    if was_training:
        model.train()
    ids = [s.video_id for s in samples]
    for name, z in (("z_v2t", sim.z_v2t.data), ("z_t2v", sim.z_t2v.data)):
        path = out_dir / f"{name}.csv"
        lines = ["video_id," + ",".join(ids)]
        for vid, row in zip(ids, z):
            lines.append(vid + "," + ",".join(f"{v:.6f}" for v in row))
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return {"paths": paths, "grids": grids, "gloss_rows": gloss_rows,
            "truth_rows": truth_rows}


# ---------------------------------------------------------------------------
# Gradient verification harness

GRADCHECK_LOSSES = ("ce", "hs", "total", "clcl", "clip", "lm")


def _gradcheck_data(batch_size: int, seed: int) -> PreparedData:
    from .corpus import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(sign_vocab_size=6, prototype_dim=5, duration_range=(5, 7),
                         sentence_length_range=(2, 4), noise_sigma=0.05,
                         filler_prob=0.2, swap_prob=0.2, seed=seed)
    frames, sents, truths = generate_synthetic(spec, batch_size)
    cfg = RunConfig.pretrain_defaults(seed=seed, segmenter="oracle")
    return prepare_data(frames, sents, truths, cfg)


def _gradcheck_cfg(loss_name: str, seed: int) -> RunConfig:
    mode = "clip" if loss_name == "clip" else "clcl"
    return RunConfig.pretrain_defaults(
        seed=seed, loss_mode=mode, dual_supervision=True, beta=0.6, alpha=0.5,
        dropout=0.0, model_dim=16, frame_dim=8, context_layers=1, context_heads=2,
        lang_layers=1, enc_layers=1, dec_layers=1, heads=2, ff_mult=2)


def gradcheck_loss(loss_name: str, batch_size: int = 3, seed: int = 0,
                   eps: float = 1e-5, max_coords: int = 8) -> float:
    """Finite-difference check of one training loss at 64-bit precision.

    Builds a small random batch (token and gloss counts <= 5) and a small
    model, then compares reverse-mode gradients of the selected loss against
    central differences over sampled coordinates of every parameter.
    """
    from .nncore.gradcheck import grad_check

    if loss_name not in GRADCHECK_LOSSES:
        raise DataError(f"unknown gradcheck loss {loss_name!r}; "
                        f"choose from {GRADCHECK_LOSSES}")
    data = _gradcheck_data(batch_size, seed)
    cfg = _gradcheck_cfg(loss_name, seed)
    samples = data.contrastive_samples()[:batch_size]
    coord_rng = np.random.default_rng(seed + 17)

    if loss_name == "lm":
        model = build_translation_model(cfg, data.c_in, data.vocab.size,
                                        dtype=np.float64)
        model.train()
        dec_in, dec_tgt = pad_target_batch([s.target_ids for s in samples])

        def f():
            _, loss = translate_forward(model, [s.frames for s in samples],
                                        [s.segset for s in samples],
                                        dec_in, dec_tgt, smoothing=0.2)
            return loss
        params = list(tagged_named_parameters(model.components()))
    else:
        model = build_pretrain_model(cfg, data.c_in, data.vocab.size,
                                     dtype=np.float64)
        model.train()
        term = "total" if loss_name in ("total", "clcl", "clip") else loss_name

        def f():
            return pretrain_loss_terms(model, samples, cfg)[term]
        params = list(tagged_named_parameters(model.components()))
    return grad_check(f, params, eps=eps, max_coords=max_coords, rng=coord_rng)


# ---------------------------------------------------------------------------
# Ablation grid


ABLATION_CSV_HEADER = "config_hash,axis,value,bleu1,bleu2,bleu3,bleu4,rouge_l_f1"


def run_ablation_grid(pre_cfg: RunConfig, fin_cfg: RunConfig, axis: str, values,
                      train_data: PreparedData, val_data: PreparedData,
                      out_dir) -> Path:
    """One full pretrain+finetune per axis value; writes one CSV row per cell."""
    if axis not in ("beta", "loss_mode", "policy"):
        raise DataError(f"unknown ablation axis {axis!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [ABLATION_CSV_HEADER]
    for value in values:
        cell_pre, cell_policy = pre_cfg, "vle"
        if axis == "beta":
            cell_pre = replace(pre_cfg, beta=float(value))
        elif axis == "loss_mode":
            cell_pre = replace(pre_cfg, loss_mode=str(value))
        else:
            cell_policy = str(value)
        cell_dir = out_dir / f"cell_{axis}_{value}"
        stage1 = None
        if cell_policy != "none":
            stage1 = pretrain(cell_pre, train_data, cell_dir / "pretrain").checkpoint
        result = finetune(fin_cfg, train_data, cell_dir / "finetune",
                          stage1_checkpoint=stage1, policy=cell_policy,
                          val_data=val_data)
        model, vocab = load_translation_model(result.checkpoint)
        hyps, refs = decode_corpus(model, val_data.samples, vocab, "beam",
                                   beam_width=fin_cfg.beam_width)
        report = evaluate_corpus(hyps, refs)
        scores = ",".join(f"{v:.6f}" for v in (report.bleu1, report.bleu2,
                                               report.bleu3, report.bleu4,
                                               report.rouge_l_f1))
        rows.append(f"{cell_pre.config_hash()},{axis},{value},{scores}")
    csv_path = out_dir / "ablation.csv"
    csv_path.write_text("\n".join(rows) + "\n")
    return csv_path
