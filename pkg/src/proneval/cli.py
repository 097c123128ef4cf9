"""Command-line pipeline driver.

Subcommands cover the full chain: normalize, stats-fit, build-cn, align,
features, decode-wer, frame-gop, score, and a self-contained demo over the
bundled synthetic corpus. Every subcommand reads its constants from a
single JSON config (--config); outputs are sorted by utt_id so --jobs
never changes bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import pipeline
from .cn import PHONEME_LEVEL, WORD_LEVEL, build_word_cn, cn_decode, cn_from_record, cn_to_record, expand_to_phoneme_cn, wer
from .config import PipelineConfig
from .errors import ProneValError
from .features import DurationStats, FeatureMatrix, align_cn_to_canonical, fit_duration_stats
from .frame_gop import frame_features, load_phone_alignment, load_posterior_matrix
from .lexicon import load_lexicon
from .nbest import parse_nbest
from .scorer import AttentionMask, build_word_mask, expected_score, forward, init_weights, load_weights, save_weights


def _load_config(args) -> PipelineConfig:
    if args.config is None:
        return PipelineConfig()
    return PipelineConfig.load(args.config)


def _load_lexicon(config: PipelineConfig):
    if config.lexicon_main is None:
        raise ProneValError("config needs lexicon_main for this subcommand")
    return load_lexicon(
        config.lexicon_main,
        config.lexicon_supplement,
        use_priors=config.use_priors,
        max_variants=config.max_variants,
    )


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _read_stats(path: str) -> DurationStats:
    with open(path, encoding="utf-8") as f:
        rec = json.load(f)
    return DurationStats(rec["mu"], rec["sigma"], rec["count"])


def cmd_normalize(args) -> int:
    config = _load_config(args)
    with open(args.infile, encoding="utf-8") as f:
        parsed = parse_nbest(f)
    if not parsed:
        raise ProneValError(f"{args.infile}: no hypotheses")
    results = _map_jobs(
        lambda item: pipeline.normalize_utterance(item[0], item[1], config),
        parsed,
        args.jobs,
    )
    records = sorted((pipeline.nbest_to_record(n) for n in results), key=lambda r: r["utt_id"])
    pipeline.dump_jsonl(args.outfile, records)
    return 0


def cmd_stats_fit(args) -> int:
    config = _load_config(args)
    records = pipeline.load_jsonl(args.infile)
    durations: list[float] = []
    for rec in records:
        nbest = pipeline.nbest_from_record(rec)
        words = nbest.hyps[0].words or []
        durations.extend(w.duration for w in words)
    if not durations:
        raise ProneValError(f"{args.infile}: no word timings to fit")
    stats = fit_duration_stats(durations)
    out = args.outfile or config.stats_path
    if out is None:
        raise ProneValError("no output path: pass --out or set stats_path in the config")
    with open(out, "w", encoding="utf-8") as f:
        json.dump({"count": stats.count, "mu": stats.mu, "sigma": stats.sigma}, f, sort_keys=True)
        f.write("\n")
    return 0


def cmd_build_cn(args) -> int:
    config = _load_config(args)
    lex = _load_lexicon(config) if args.level in (PHONEME_LEVEL, "both") else None
    records = pipeline.load_jsonl(args.infile)

    def build(rec):
        nbest = pipeline.nbest_from_record(rec)
        out = []
        word_cn = build_word_cn(nbest)
        if args.level in (WORD_LEVEL, "both"):
            out.append(cn_to_record(word_cn))
        if args.level in (PHONEME_LEVEL, "both"):
            out.append(cn_to_record(expand_to_phoneme_cn(word_cn, lex, config.oov_policy)))
        return out

    built = _map_jobs(build, records, args.jobs)
    flat = [rec for group in built for rec in group]
    flat.sort(key=lambda r: (r["utt_id"], r["level"] != WORD_LEVEL))
    pipeline.dump_jsonl(args.outfile, flat)
    return 0


def cmd_align(args) -> int:
    config = _load_config(args)
    lex = _load_lexicon(config)
    transcripts = pipeline.load_transcripts(args.transcripts)
    records = [r for r in pipeline.load_jsonl(args.infile) if r["level"] == PHONEME_LEVEL]
    out_records = []
    for rec in records:
        cn = cn_from_record(rec)
        if cn.utt_id not in transcripts:
            raise ProneValError(f"no transcript for {cn.utt_id}")
        expansion = pipeline.canonical_expansion(transcripts[cn.utt_id], lex)
        canonical = [p for _, phones in expansion for p in phones]
        alignment = align_cn_to_canonical(
            cn, canonical, config.deletion_cost, lex.phoneme_inventory
        )
        out_records.append(
            {
                "utt_id": cn.utt_id,
                "cost": alignment.cost,
                "ops": [
                    {"kind": op.kind, "slot": op.slot_index, "canon": op.canon_index}
                    for op in alignment.ops
                ],
            }
        )
    out_records.sort(key=lambda r: r["utt_id"])
    pipeline.dump_jsonl(args.outfile, out_records)
    return 0


def cmd_features(args) -> int:
    config = _load_config(args)
    lex = _load_lexicon(config)
    transcripts = pipeline.load_transcripts(args.transcripts)
    stats_path = args.stats or config.stats_path
    if stats_path is None:
        raise ProneValError("no duration stats: pass --stats or set stats_path in the config")
    stats = _read_stats(stats_path)
    records = pipeline.load_jsonl(args.infile)

    def build(rec):
        nbest = pipeline.nbest_from_record(rec)
        if nbest.utt_id not in transcripts:
            raise ProneValError(f"no transcript for {nbest.utt_id}")
        matrix = pipeline.utterance_feature_matrix(
            nbest, transcripts[nbest.utt_id], lex, stats, config
        )
        return matrix.to_record()

    out_records = sorted(_map_jobs(build, records, args.jobs), key=lambda r: r["utt_id"])
    pipeline.dump_jsonl(args.outfile, out_records)
    return 0


def cmd_decode_wer(args) -> int:
    config = _load_config(args)
    transcripts = pipeline.load_transcripts(args.transcripts)
    records = pipeline.load_jsonl(args.infile)
    rows = []
    totals = {"one_best": [0, 0], "cn_decode": [0, 0]}
    for rec in sorted(records, key=lambda r: r["utt_id"]):
        nbest = pipeline.nbest_from_record(rec)
        if nbest.utt_id not in transcripts:
            raise ProneValError(f"no transcript for {nbest.utt_id}")
        ref = transcripts[nbest.utt_id]
        one_best = nbest.hyps[0].tokens
        consensus = cn_decode(build_word_cn(nbest))
        w_one = wer(one_best, ref)
        w_cn = wer(consensus, ref)
        totals["one_best"][0] += w_one.edits
        totals["one_best"][1] += len(ref)
        totals["cn_decode"][0] += w_cn.edits
        totals["cn_decode"][1] += len(ref)
        rows.append(
            {
                "utt_id": nbest.utt_id,
                "ref_len": len(ref),
                "one_best_edits": w_one.edits,
                "cn_edits": w_cn.edits,
            }
        )
    report = {
        "utterances": rows,
        "one_best_wer": totals["one_best"][0] / totals["one_best"][1],
        "cn_decode_wer": totals["cn_decode"][0] / totals["cn_decode"][1],
    }
    with open(args.outfile, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True)
        f.write("\n")
    table = _wer_table(report)
    print(table, end="")
    if args.table:
        with open(args.table, "w", encoding="utf-8") as f:
            f.write(table)
    return 0


def _wer_table(report: dict) -> str:
    lines = [f"{'decode':<12}{'WER':>8}"]
    lines.append(f"{'1-best':<12}{report['one_best_wer']:>8.4f}")
    lines.append(f"{'consensus':<12}{report['cn_decode_wer']:>8.4f}")
    return "\n".join(lines) + "\n"


def cmd_frame_gop(args) -> int:
    entries = []
    with open(args.manifest, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ProneValError(f"{args.manifest}:{lineno}: expected 'utt<TAB>matrix<TAB>align'")
            entries.append(parts)
    base = os.path.dirname(os.path.abspath(args.manifest))

    def resolve(path):
        return path if os.path.isabs(path) else os.path.join(base, path)

    loaded = [
        (utt, load_posterior_matrix(resolve(m)), load_phone_alignment(resolve(a)))
        for utt, m, a in entries
    ]
    durations = [
        seg.t_end - seg.t_start for _, _, align in loaded for seg in align.segments
    ]
    if len(durations) < 2:
        raise ProneValError("not enough segments to fit duration stats")
    stats = fit_duration_stats(durations)
    out_records = []
    for utt, matrix, align in sorted(loaded, key=lambda item: item[0]):
        rows = frame_features(matrix, align, stats)
        out_records.append(
            {
                "utt_id": utt,
                "inventory": matrix.inventory,
                "phones": [seg.phone for seg in align.segments],
                "rows": [
                    {
                        "gop": r.gop,
                        "gop_margin": r.gop_margin,
                        "lpp": r.lpp,
                        "lpr": r.lpr,
                        "sr": r.sr,
                        "nd": r.nd,
                    }
                    for r in rows
                ],
            }
        )
    pipeline.dump_jsonl(args.outfile, out_records)
    return 0


def cmd_score(args) -> int:
    config = _load_config(args)
    if config.model is None:
        raise ProneValError("config needs a model section for scoring")
    weights, w_config = load_weights(args.weights)
    if w_config.to_dict() != config.model.to_dict():
        raise ProneValError(f"{args.weights}: weights config differs from pipeline config")
    frame_paths = {}
    with open(args.frames, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ProneValError(f"{args.frames}:{lineno}: expected 'utt<TAB>path'")
            frame_paths[parts[0]] = parts[1]
    base = os.path.dirname(os.path.abspath(args.frames))
    out_records = []
    for rec in sorted(pipeline.load_jsonl(args.features), key=lambda r: r["utt_id"]):
        matrix = FeatureMatrix.from_record(rec)
        if matrix.utt_id not in frame_paths:
            raise ProneValError(f"no frame features for {matrix.utt_id}")
        path = frame_paths[matrix.utt_id]
        frames = pipeline.load_frame_features(path if os.path.isabs(path) else os.path.join(base, path))
        include_wgop = all(r.cn_wgop is not None for r in matrix.rows)
        dim = matrix.vector_dim(include_wgop)
        if dim != config.model.phoneme_feat_dim:
            raise ProneValError(
                f"{matrix.utt_id}: feature dim {dim} != model phoneme_feat_dim {config.model.phoneme_feat_dim}"
            )
        phoneme_feats = np.array(
            [matrix.row_vector(r, include_wgop) for r in matrix.rows], dtype=float
        )
        mask = _utterance_mask(matrix, frames.shape[0], config)
        dist = forward(phoneme_feats, frames, weights, mask, config.model)
        out_records.append(
            {
                "utt_id": matrix.utt_id,
                "expected_score": expected_score(dist, config.model.class_values),
                "class_probs": dist.probs,
            }
        )
    pipeline.dump_jsonl(args.outfile, out_records)
    return 0


def _utterance_mask(matrix, n_frames: int, config: PipelineConfig) -> AttentionMask:
    word_index = [r.word_index for r in matrix.rows]
    spans = matrix.word_spans
    if spans is None:
        spans = [None] * (max(word_index) + 1 if word_index else 0)
    spans = [None if s is None else (s[0], s[1]) for s in spans]
    return build_word_mask(word_index, spans, n_frames, config.mask_mode)


def cmd_demo(args) -> int:
    from importlib.resources import files

    data = files("proneval") / "data" / "demo"
    out = args.outdir
    os.makedirs(out, exist_ok=True)

    def path(name: str) -> str:
        return os.path.join(out, name)

    config_path = str(data / "config.json")
    config = PipelineConfig.load(config_path)

    ns = argparse.Namespace(config=config_path, jobs=args.jobs)

    ns_norm = argparse.Namespace(
        **vars(ns), infile=str(data / "nbest.jsonl"), outfile=path("nbest_norm.jsonl")
    )
    cmd_normalize(ns_norm)

    ns_stats = argparse.Namespace(
        **vars(ns), infile=path("nbest_norm.jsonl"), outfile=path("stats.json")
    )
    cmd_stats_fit(ns_stats)
    config.stats_path = path("stats.json")

    ns_cn = argparse.Namespace(
        **vars(ns), infile=path("nbest_norm.jsonl"), outfile=path("cn.jsonl"), level="both"
    )
    cmd_build_cn(ns_cn)

    transcripts = str(data / "transcripts.txt")
    ns_align = argparse.Namespace(
        **vars(ns), infile=path("cn.jsonl"), transcripts=transcripts, outfile=path("alignments.jsonl")
    )
    cmd_align(ns_align)

    ns_feat = argparse.Namespace(
        **vars(ns),
        infile=path("nbest_norm.jsonl"),
        transcripts=transcripts,
        stats=path("stats.json"),
        outfile=path("features.jsonl"),
    )
    cmd_features(ns_feat)

    ns_wer = argparse.Namespace(
        **vars(ns),
        infile=path("nbest_norm.jsonl"),
        transcripts=transcripts,
        outfile=path("wer_report.json"),
        table=path("wer_report.txt"),
    )
    cmd_decode_wer(ns_wer)

    _demo_frame_gop(data, out, ns)
    _demo_score(config, out, ns)
    print(f"demo artifacts written to {out}")
    return 0


def _utt_seed(utt_id: str) -> int:
    # zlib.crc32 is stable across processes, unlike hash() on strings.
    import zlib

    return zlib.crc32(utt_id.encode("utf-8"))


def _demo_frame_gop(data, out: str, ns) -> None:
    """Synthesize posterior matrices and alignments for the baseline path."""
    from .frame_gop import PosteriorMatrix, save_posterior_matrix
    from .lexicon import load_lexicon

    config = PipelineConfig.load(str(data / "config.json"))
    lex = load_lexicon(config.lexicon_main, config.lexicon_supplement)
    transcripts = pipeline.load_transcripts(str(data / "transcripts.txt"))
    inventory = lex.ordered_inventory()
    gop_dir = os.path.join(out, "frame_gop_inputs")
    os.makedirs(gop_dir, exist_ok=True)
    manifest_lines = []
    for utt_id in sorted(transcripts):
        rng = np.random.default_rng(_utt_seed(utt_id))
        expansion = pipeline.canonical_expansion(transcripts[utt_id], lex)
        phones = [p for _, ps in expansion for p in ps]
        segs = []
        t = 0
        for p in phones:
            dur = int(rng.integers(2, 6))
            segs.append((p, t, t + dur - 1))
            t += dur
        logits = rng.normal(0.0, 1.0, size=(t, len(inventory)))
        for p, t_s, t_e in segs:
            logits[t_s : t_e + 1, inventory.index(p)] += 3.0
        log_probs = logits - _logsumexp_rows(logits)
        matrix = PosteriorMatrix(inventory, log_probs, config.frame_rate)
        save_posterior_matrix(matrix, os.path.join(gop_dir, f"{utt_id}.post"))
        with open(os.path.join(gop_dir, f"{utt_id}.ali"), "w", encoding="utf-8") as f:
            for p, t_s, t_e in segs:
                f.write(f"{p} {t_s} {t_e}\n")
        # Manifest paths stay relative so runs into different directories
        # produce byte-identical artifacts.
        manifest_lines.append(
            f"{utt_id}\tframe_gop_inputs/{utt_id}.post\tframe_gop_inputs/{utt_id}.ali\n"
        )
    manifest = os.path.join(out, "frame_gop_manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as f:
        f.writelines(manifest_lines)
    ns_gop = argparse.Namespace(**vars(ns), manifest=manifest, outfile=os.path.join(out, "frame_gop.jsonl"))
    cmd_frame_gop(ns_gop)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))


def _demo_score(config: PipelineConfig, out: str, ns) -> None:
    """Seeded weights plus synthetic frame features drive the scorer."""
    if config.model is None:
        return
    weights = init_weights(config.model)
    weights_path = os.path.join(out, "weights.json")
    save_weights(weights_path, weights, config.model)
    frames_dir = os.path.join(out, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    manifest_lines = []
    for rec in pipeline.load_jsonl(os.path.join(out, "features.jsonl")):
        utt_id = rec["utt_id"]
        spans = rec.get("word_spans") or []
        t_max = max((s[1] for s in spans if s is not None), default=20) + 5
        rng = np.random.default_rng(_utt_seed(utt_id))
        feats = rng.normal(0.0, 1.0, size=(t_max, config.model.frame_feat_dim))
        pipeline.save_frame_features(os.path.join(frames_dir, f"{utt_id}.frames"), feats)
        manifest_lines.append(f"{utt_id}\tframes/{utt_id}.frames\n")
    manifest = os.path.join(out, "frames_manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as f:
        f.writelines(manifest_lines)
    ns_score = argparse.Namespace(
        **vars(ns),
        features=os.path.join(out, "features.jsonl"),
        frames=manifest,
        weights=weights_path,
        outfile=os.path.join(out, "scores.jsonl"),
    )
    cmd_score(ns_score)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proneval",
        description="Pronunciation-evaluation features from N-best lists via confusion networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="pipeline config JSON")
        p.add_argument("--jobs", type=int, default=1, help="utterance-level parallelism")

    p = sub.add_parser("normalize", help="normalize raw N-best records")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("stats-fit", help="fit word-duration statistics")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", default=None)
    p.set_defaults(func=cmd_stats_fit)

    p = sub.add_parser("build-cn", help="build confusion networks")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--level", choices=[WORD_LEVEL, PHONEME_LEVEL, "both"], default="both")
    p.set_defaults(func=cmd_build_cn)

    p = sub.add_parser("align", help="align phoneme networks to canonical phonemes")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--transcripts", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("features", help="compute per-phoneme feature matrices")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--transcripts", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("decode-wer", help="compare 1-best and consensus WER")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--transcripts", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--table", default=None, help="also write the table here")
    p.set_defaults(func=cmd_decode_wer)

    p = sub.add_parser("frame-gop", help="frame-synchronous baseline features")
    common(p)
    p.add_argument("--manifest", required=True, help="utt<TAB>matrix<TAB>align lines")
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_frame_gop)

    p = sub.add_parser("score", help="run the cross-attention scorer")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--frames", required=True, help="utt<TAB>frame-features-path lines")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("demo", help="run the whole chain on the bundled corpus")
    common(p)
    p.add_argument("--out", dest="outdir", required=True)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProneValError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
