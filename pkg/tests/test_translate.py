import numpy as np
import pytest

from signtok.corpus import BOS_ID, EOS_ID, PAD_ID, SyntheticSpec, generate_synthetic
from signtok.errors import CheckpointError, DataError
from signtok.nncore.checkpoint import load_checkpoint, save_checkpoint
from signtok import pipeline as P
from signtok.translate import (
    Hypothesis,
    beam_decode,
    decode,
    frame_targets,
    greedy_decode,
    load_stage1,
    pad_target_batch,
    translate_forward,
)

DIMS = dict(model_dim=32, frame_dim=16, context_layers=1, context_heads=2,
            lang_layers=1, enc_layers=1, dec_layers=1, heads=2, ff_mult=2)


@pytest.fixture(scope="module")
def tiny():
    spec = SyntheticSpec(sign_vocab_size=8, prototype_dim=6, duration_range=(5, 8),
                         sentence_length_range=(3, 5), noise_sigma=0.02,
                         filler_prob=0.1, swap_prob=0.0, seed=21)
    frames, sents, truths = generate_synthetic(spec, 24)
    cfg = P.RunConfig.finetune_defaults(seed=3, epochs=1, dropout=0.0, **DIMS)
    data = P.prepare_data(frames, sents, truths, cfg)
    model = P.build_translation_model(cfg, data.c_in, data.vocab.size)
    model.eval()
    return model, data


def test_frame_targets():
    dec_in, dec_tgt = frame_targets([5, 6, 7])
    assert list(dec_in) == [BOS_ID, 5, 6, 7]
    assert list(dec_tgt) == [5, 6, 7, EOS_ID]


def test_pad_target_batch():
    dec_in, dec_tgt = pad_target_batch([[5], [6, 7, 8]])
    assert dec_in.shape == (2, 4)
    assert list(dec_in[0]) == [BOS_ID, 5, PAD_ID, PAD_ID]
    assert list(dec_tgt[0]) == [5, EOS_ID, PAD_ID, PAD_ID]


def test_initial_loss_near_log_vocab(tiny):
    model, data = tiny
    batch = data.samples[:6]
    dec_in, dec_tgt = pad_target_batch([s.target_ids for s in batch])
    _, loss = translate_forward(model, [s.frames for s in batch],
                                [s.segset for s in batch], dec_in, dec_tgt,
                                smoothing=0.0)
    expected = np.log(data.vocab.size)
    assert abs(loss.item() - expected) / expected < 0.10


def test_single_step_target(tiny):
    model, data = tiny
    s = data.samples[0]
    dec_in, dec_tgt = pad_target_batch([[]])  # EOS-only target
    logits, loss = translate_forward(model, [s.frames], [s.segset], dec_in,
                                     dec_tgt, smoothing=0.0)
    assert logits.shape[1] == 1
    assert np.isfinite(loss.item())


def test_duplicated_batch_element_same_loss(tiny):
    model, data = tiny
    a, b = data.samples[0], data.samples[1]

    def loss_of(batch):
        dec_in, dec_tgt = pad_target_batch([s.target_ids for s in batch])
        _, loss = translate_forward(model, [s.frames for s in batch],
                                    [s.segset for s in batch], dec_in, dec_tgt,
                                    smoothing=0.2)
        return loss.item()

    la = loss_of([a])
    lb = loss_of([b])
    # per-sample losses are length-weighted means of step losses
    na = len(a.target_ids) + 1
    nb = len(b.target_ids) + 1
    combined = loss_of([a, b])
    assert combined == pytest.approx((la * na + lb * nb) / (na + nb), rel=1e-5)
    # duplicating an element in eval mode reproduces its loss exactly
    assert loss_of([a, a]) == pytest.approx(la, rel=1e-6)


def test_beam1_equals_greedy_on_random_models(tiny):
    model, data = tiny
    for s in data.samples[:20]:
        g = greedy_decode(model, s.frames, s.segset, max_len=12)
        best, _ = beam_decode(model, s.frames, s.segset, beam_width=1, max_len=12)
        assert g == best.generated


def test_decode_respects_cap_and_no_specials(tiny):
    model, data = tiny
    for s in data.samples[:8]:
        for mode in ("greedy", "beam"):
            ids = decode(model, s.frames, s.segset, mode, max_len=7)
            assert len(ids) <= 7
            assert PAD_ID not in ids and BOS_ID not in ids and EOS_ID not in ids


def test_beam_retained_hypothesis_invariant(tiny):
    model, data = tiny
    for s in data.samples[:10]:
        best, finished = beam_decode(model, s.frames, s.segset, beam_width=4,
                                     max_len=10)
        assert finished
        assert best.normalized_score == pytest.approx(
            max(h.normalized_score for h in finished))


def test_beam_scores_are_true_log_probs(tiny):
    # the running log-prob of the best hypothesis equals a teacher-forced rescore
    model, data = tiny
    s = data.samples[0]
    best, _ = beam_decode(model, s.frames, s.segset, beam_width=4, max_len=10)
    ids = best.tokens[1:]
    dec_in = np.array([[BOS_ID] + ids[:-1]])
    memory, vmask = model.encode_memory([s.frames], [s.segset])
    logits = model.translation_decoder(dec_in, memory, vmask).data[0].astype(np.float64)
    logits[:, PAD_ID] = -np.inf
    logits[:, BOS_ID] = -np.inf
    lp = logits - logits.max(-1, keepdims=True)
    lp = lp - np.log(np.exp(lp).sum(-1, keepdims=True))
    total = sum(lp[t, tok] for t, tok in enumerate(ids))
    assert best.log_prob == pytest.approx(total, abs=1e-6)


def test_hypothesis_scoring():
    h = Hypothesis([BOS_ID, 5, 6, EOS_ID], -1.5, length_penalty=1.0, finished=True)
    assert h.generated == [5, 6]
    assert h.normalized_score == pytest.approx(-0.5)
    h2 = Hypothesis([BOS_ID, 5, 6, EOS_ID], -1.5, length_penalty=0.5)
    assert h2.normalized_score == pytest.approx(-1.5 / np.sqrt(3))


def test_empty_target_rejected(tiny):
    model, data = tiny
    s = data.samples[0]
    with pytest.raises(DataError):
        translate_forward(model, [s.frames], [s.segset], np.array([]),
                          np.array([]), 0.0)


# -- stage-1 transfer ------------------------------------------------------------


@pytest.fixture(scope="module")
def stage1_ckpt(tmp_path_factory):
    spec = SyntheticSpec(sign_vocab_size=8, prototype_dim=6, duration_range=(5, 8),
                         sentence_length_range=(3, 5), noise_sigma=0.02,
                         filler_prob=0.1, swap_prob=0.0, seed=21)
    frames, sents, truths = generate_synthetic(spec, 24)
    cfg = P.RunConfig.pretrain_defaults(seed=3, epochs=1, batch_size=8,
                                        dropout=0.0, **DIMS)
    data = P.prepare_data(frames, sents, truths, cfg)
    out = tmp_path_factory.mktemp("stage1")
    result = P.pretrain(cfg, data, out)
    return result.checkpoint, cfg, data


def test_load_stage1_policies(stage1_ckpt):
    path, cfg, data = stage1_ckpt
    ckpt = load_checkpoint(path)
    fin = P.RunConfig.finetune_defaults(seed=9, **DIMS)

    fresh = P.build_translation_model(fin, data.c_in, data.vocab.size)
    fresh_mapper = fresh.mapper.linears[0].w.data.copy()
    fresh_enc = fresh.translation_encoder.encoder.layers[0].attn.wq.w.data.copy()

    m = P.build_translation_model(fin, data.c_in, data.vocab.size)
    load_stage1(m, ckpt, "none")
    assert np.array_equal(m.mapper.linears[0].w.data, fresh_mapper)

    m = P.build_translation_model(fin, data.c_in, data.vocab.size)
    load_stage1(m, ckpt, "vle")
    assert np.array_equal(m.mapper.linears[0].w.data,
                          ckpt.params["mapper/linears.0.w"])
    assert np.array_equal(m.temporal_conv.bn.running_mean,
                          ckpt.buffers["temporal_conv/bn.running_mean"])
    # context transformer weights are NOT applied under vle
    assert np.array_equal(m.translation_encoder.encoder.layers[0].attn.wq.w.data,
                          fresh_enc)

    m = P.build_translation_model(fin, data.c_in, data.vocab.size)
    load_stage1(m, ckpt, "vle_plus_te")
    assert np.array_equal(m.translation_encoder.encoder.layers[0].attn.wq.w.data,
                          ckpt.params["context_transformer/encoder.layers.0.attn.wq.w"])


def test_load_stage1_missing_component(stage1_ckpt, tmp_path):
    path, cfg, data = stage1_ckpt
    ckpt = load_checkpoint(path)
    for name in list(ckpt.params):
        if name.startswith("mapper/"):
            del ckpt.params[name]
            del ckpt.tags[name]
    broken = tmp_path / "broken.ckpt"
    save_checkpoint(broken, ckpt)
    fin = P.RunConfig.finetune_defaults(seed=9, **DIMS)
    m = P.build_translation_model(fin, data.c_in, data.vocab.size)
    with pytest.raises(CheckpointError, match="mapper"):
        load_stage1(m, broken, "vle")
    with pytest.raises(DataError):
        load_stage1(m, path, "sideways")


def test_checkpoint_roundtrip_preserves_forward(stage1_ckpt, tmp_path):
    path, cfg, data = stage1_ckpt
    fin = P.RunConfig.finetune_defaults(seed=4, dropout=0.0, **DIMS)
    model = P.build_translation_model(fin, data.c_in, data.vocab.size)
    load_stage1(model, path, "vle")
    model.eval()
    s = data.samples[0]
    dec_in, dec_tgt = pad_target_batch([s.target_ids])
    logits1, _ = translate_forward(model, [s.frames], [s.segset], dec_in, dec_tgt)

    ck = P.build_checkpoint(model.components(), None, None,
                            {"stage": "finetune", "config": fin.to_dict(),
                             "c_in": data.c_in, "vocab": data.vocab.tokens})
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, ck)
    model2, vocab2 = P.load_translation_model(p)
    logits2, _ = translate_forward(model2, [s.frames], [s.segset], dec_in, dec_tgt)
    assert np.array_equal(logits1.data, logits2.data)
