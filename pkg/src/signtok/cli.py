"""Batch command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical-check
failure. Every run command writes its effective config snapshot into the run
directory before any other artifact. Flags override config-file values,
which override stage defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import metrics as M
from . import pipeline as P
from .corpus import (
    SyntheticSpec,
    generate_synthetic,
    load_corpus,
    save_corpus,
)
from .errors import CheckpointError, DataError, NumericalError, SignTokError
from .segmenter import (
    reduction_report,
    segment_motion_energy,
    segment_oracle,
    segment_uniform,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_FIELDS = {f.name for f in fields(P.RunConfig)} - {"stage"}


def _add_run_flags(sp):
    sp.add_argument("--config", help="JSON config file; flags override its values")
    for name, typ in (
        ("epochs", int), ("batch-size", int), ("lr", float), ("momentum", float),
        ("weight-decay", float), ("grad-clip", float), ("dropout", float),
        ("label-smoothing", float), ("alpha", float), ("beta", float),
        ("seed", int), ("uniform-factor", int), ("smooth-window", int),
        ("min-seg-len", int), ("feature-noise-sigma", float), ("val-every", int),
        ("min-count", int), ("frame-dim", int), ("model-dim", int),
        ("context-layers", int), ("context-heads", int), ("lang-layers", int),
        ("enc-layers", int), ("dec-layers", int), ("heads", int),
        ("ff-mult", int), ("max-decode-len", int), ("beam-width", int),
        ("length-penalty", float),
    ):
        sp.add_argument(f"--{name}", type=typ, default=None)
    sp.add_argument("--segmenter", choices=P.SEGMENTER_CHOICES, default=None)
    sp.add_argument("--loss-mode", choices=P.LOSS_MODES, default=None)
    sp.add_argument("--dual", dest="dual_supervision", action="store_true",
                    default=None)
    sp.add_argument("--no-dual", dest="dual_supervision", action="store_false",
                    default=None)


def _merge_run_config(args, stage: str) -> P.RunConfig:
    overrides: dict = {}
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        overrides.update({k: v for k, v in loaded.items() if k in _CONFIG_FIELDS})
    for key in _CONFIG_FIELDS:
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    maker = (P.RunConfig.pretrain_defaults if stage == "pretrain"
             else P.RunConfig.finetune_defaults)
    return maker(**overrides)


def _load_split(data_dir, cfg: P.RunConfig, val_count: int):
    frames, sents, truths = load_corpus(data_dir)
    if val_count >= len(frames):
        raise DataError(f"val-count {val_count} leaves no training videos")
    if val_count > 0:
        train = P.prepare_data(frames[:-val_count], sents[:-val_count],
                               truths[:-val_count], cfg)
        val = P.prepare_data(frames[-val_count:], sents[-val_count:],
                             truths[-val_count:], cfg, vocab=train.vocab)
    else:
        train = P.prepare_data(frames, sents, truths, cfg)
        val = None
    return train, val


# ---------------------------------------------------------------------------
# Commands


def cmd_generate_synth(args) -> int:
    spec = SyntheticSpec(
        sign_vocab_size=args.signs, prototype_dim=args.proto_dim,
        duration_range=(args.dmin, args.dmax),
        sentence_length_range=(args.sent_min, args.sent_max),
        noise_sigma=args.noise, filler_prob=args.filler_prob,
        swap_prob=args.swap_prob, seed=args.seed)
    frames, sents, truths = generate_synthetic(spec, args.videos)
    save_corpus(args.out, frames, sents, truths)
    total = sum(f.num_frames for f in frames)
    print(f"wrote {args.videos} videos ({total} frames, c_in={spec.prototype_dim}) "
          f"to {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    frames, _, truths = load_corpus(args.data)
    truth_by_id = {t.video_id: t for t in truths}
    segsets = []
    for fs in frames:
        if args.method == "oracle":
            segsets.append(segment_oracle(truth_by_id[fs.video_id]))
        elif args.method == "energy":
            segsets.append(segment_motion_energy(fs, args.smooth_window,
                                                 args.min_len))
        else:
            segsets.append(segment_uniform(fs, factor=args.factor))
    out = Path(args.out) if args.out else Path(args.data) / "segments.jsonl"
    with open(out, "w") as fh:
        for ss in segsets:
            rec = {"video_id": ss.video_id,
                   "spans": [[sp.start, sp.end] for sp in ss.spans],
                   "source": ss.source}
            if args.method == "oracle":
                rec["sign_ids"] = truth_by_id[ss.video_id].sign_ids
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    rep = reduction_report(segsets)
    print(f"segmented {len(segsets)} videos with {args.method}: "
          f"{rep.total_tokens}/{rep.total_frames} tokens/frames "
          f"(ratio {rep.ratio:.4f}) -> {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _merge_run_config(args, "pretrain")
    train, _ = _load_split(args.data, cfg, args.val_count)
    result = P.pretrain(cfg, train, args.out)
    final = result.logs[-1].losses if result.logs else {}
    print(f"pretrained {cfg.epochs} epochs -> {result.checkpoint} "
          f"(final losses {json.dumps(final, sort_keys=True)})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _merge_run_config(args, "finetune")
    train, val = _load_split(args.data, cfg, args.val_count)
    result = P.finetune(cfg, train, args.out, stage1_checkpoint=args.stage1,
                        policy=args.policy, val_data=val)
    best = f"{result.best_bleu4:.4f}" if result.best_bleu4 is not None else "n/a"
    print(f"finetuned {cfg.epochs} epochs (policy={args.policy}) -> "
          f"{result.checkpoint} (best val BLEU-4 {best})")
    return EXIT_OK


def cmd_translate(args) -> int:
    model, vocab = P.load_translation_model(args.checkpoint)
    cfg = P.RunConfig.finetune_defaults(segmenter=args.segmenter)
    frames, sents, truths = load_corpus(args.data)
    if args.split == "val" and args.val_count > 0:
        frames, sents, truths = (frames[-args.val_count:], sents[-args.val_count:],
                                 truths[-args.val_count:])
    elif args.split == "train" and args.val_count > 0:
        frames, sents, truths = (frames[:-args.val_count], sents[:-args.val_count],
                                 truths[:-args.val_count])
    data = P.prepare_data(frames, sents, truths, cfg, vocab=vocab)
    mode = "greedy" if args.beam <= 1 else "beam"
    hyps, refs = P.decode_corpus(model, data.samples, vocab, mode,
                                 beam_width=args.beam, max_len=args.max_len)
    out = Path(args.out)
    with open(out, "w") as fh:
        for s, h, r in zip(data.samples, hyps, refs):
            fh.write(json.dumps({"video_id": s.video_id, "hypothesis": " ".join(h),
                                 "reference": " ".join(r)}, sort_keys=True) + "\n")
    print(f"translated {len(hyps)} videos (beam={args.beam}, "
          f"max_len={args.max_len}) -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    recs = [json.loads(line) for line in Path(args.pred).read_text().splitlines()
            if line.strip()]
    if not recs:
        raise DataError(f"{args.pred}: no prediction records")
    hyps = [r["hypothesis"].split() for r in recs]
    refs = [r["reference"].split() for r in recs]
    report = M.evaluate_corpus(hyps, refs)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.pred).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval_report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    (out_dir / "eval_report.csv").write_text(
        "bleu1,bleu2,bleu3,bleu4,rouge_l_f1,num_sentences\n" + report.csv_row() + "\n")
    print(f"bleu1={report.bleu1:.4f} bleu2={report.bleu2:.4f} "
          f"bleu3={report.bleu3:.4f} bleu4={report.bleu4:.4f} "
          f"rouge_l={report.rouge_l_f1:.4f} n={report.num_sentences}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = P.gradcheck_loss(args.loss, batch_size=args.batch, seed=args.seed,
                           eps=args.eps, max_coords=args.max_coords)
    status = "ok" if err <= args.threshold else "FAIL"
    print(f"gradcheck loss={args.loss} max_rel_err={err:.3e} "
          f"threshold={args.threshold:.1e} [{status}]")
    return EXIT_OK if err <= args.threshold else EXIT_NUMERIC


def cmd_bench_memory(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",") if x]
    if not lengths:
        raise DataError("no lengths given")
    rows = [M.MEMORY_CSV_HEADER]
    for length in lengths:
        prof = M.attention_memory_profile(length, args.layers, args.heads,
                                          args.batch, args.dim, args.ff_mult,
                                          measure=args.measure)
        rows.append(prof.csv_row())
        print(f"L={length}: score_elements/layer={prof.score_elements_per_layer} "
              f"bytes_fp32={prof.bytes_fp32}"
              + (f" measured_peak={prof.measured_peak_bytes}" if args.measure else ""))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(rows) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_export_similarity(args) -> int:
    model, vocab = P.load_pretrain_model(args.checkpoint)
    cfg = P.RunConfig.pretrain_defaults(segmenter=args.segmenter)
    frames, sents, truths = load_corpus(args.data)
    if args.val_count > 0:
        frames, sents, truths = (frames[-args.val_count:], sents[-args.val_count:],
                                 truths[-args.val_count:])
    data = P.prepare_data(frames, sents, truths, cfg, vocab=vocab)
    result = P.export_similarity(model, data, args.out, limit=args.limit)
    print(f"exported {len(result['paths'])} CSV files to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    pre_cfg = _merge_run_config(args, "pretrain")
    if args.pre_epochs is not None:
        pre_over = {k: v for k, v in pre_cfg.to_dict().items() if k != "stage"}
        pre_over["epochs"] = args.pre_epochs
        pre_cfg = P.RunConfig.pretrain_defaults(**pre_over)
    fin_overrides = {k: v for k, v in pre_cfg.to_dict().items()
                     if k not in ("stage", "batch_size", "lr", "weight_decay",
                                  "grad_clip", "epochs")}
    if args.fin_epochs is not None:
        fin_overrides["epochs"] = args.fin_epochs
    fin_cfg = P.RunConfig.finetune_defaults(**fin_overrides)
    train, val = _load_split(args.data, pre_cfg, args.val_count)
    if val is None:
        raise DataError("ablate needs --val-count > 0 for held-out scoring")
    values = [x for x in args.values.split(",") if x]
    if args.axis == "beta":
        values = [float(v) for v in values]
    csv_path = P.run_ablation_grid(pre_cfg, fin_cfg, args.axis, values, train,
                                   val, args.out)
    print(f"ablation over {args.axis} -> {csv_path}")
    print(csv_path.read_text().strip())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signtok",
        description="Segment-aware visual tokenization, contrastive pretraining, "
                    "and sign-to-text translation on synthetic corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate-synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--videos", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--signs", type=int, default=40)
    sp.add_argument("--proto-dim", type=int, default=16)
    sp.add_argument("--dmin", type=int, default=5)
    sp.add_argument("--dmax", type=int, default=9)
    sp.add_argument("--sent-min", type=int, default=4)
    sp.add_argument("--sent-max", type=int, default=8)
    sp.add_argument("--noise", type=float, default=0.02)
    sp.add_argument("--filler-prob", type=float, default=0.2)
    sp.add_argument("--swap-prob", type=float, default=0.1)
    sp.set_defaults(func=cmd_generate_synth)

    sp = sub.add_parser("segment", help="segment a corpus and report reduction")
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", choices=("oracle", "energy", "uniform"),
                    default="energy")
    sp.add_argument("--factor", type=int, default=4)
    sp.add_argument("--min-len", type=int, default=5)
    sp.add_argument("--smooth-window", type=int, default=3)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("pretrain", help="stage-1 contrastive pretraining")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--val-count", type=int, default=0)
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="stage-2 translation fine-tuning")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stage1", help="stage-1 checkpoint (for policy != none)")
    sp.add_argument("--policy", choices=("none", "vle", "vle_plus_te"),
                    default="vle")
    sp.add_argument("--val-count", type=int, default=0)
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("translate", help="decode a corpus with a trained model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--beam", type=int, default=4)
    sp.add_argument("--max-len", type=int, default=150)
    sp.add_argument("--split", choices=("all", "train", "val"), default="all")
    sp.add_argument("--val-count", type=int, default=0)
    sp.add_argument("--segmenter", choices=P.SEGMENTER_CHOICES, default="oracle")
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("evaluate", help="score a translation output file")
    sp.add_argument("--pred", required=True,
                    help="JSONL with hypothesis/reference fields")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sp.add_argument("--loss", choices=P.GRADCHECK_LOSSES, default="total")
    sp.add_argument("--batch", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--max-coords", type=int, default=8)
    sp.add_argument("--threshold", type=float, default=1e-5)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("bench-memory", help="attention memory accounting sweep")
    sp.add_argument("--lengths", default="8,16,32,64")
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--ff-mult", type=int, default=4)
    sp.add_argument("--measure", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench_memory)

    sp = sub.add_parser("export-similarity",
                        help="write token similarity grids and Z matrices as CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, default=16)
    sp.add_argument("--val-count", type=int, default=0)
    sp.add_argument("--segmenter", choices=P.SEGMENTER_CHOICES, default="oracle")
    sp.set_defaults(func=cmd_export_similarity)

    sp = sub.add_parser("ablate", help="pretraining ablation grid")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--axis", choices=("beta", "loss_mode", "policy"),
                    required=True)
    sp.add_argument("--values", required=True, help="comma-separated axis values")
    sp.add_argument("--val-count", type=int, required=True)
    sp.add_argument("--pre-epochs", type=int, default=None)
    sp.add_argument("--fin-epochs", type=int, default=None)
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, SignTokError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
