"""Per-utterance glue between the stages, plus record serialization.

Every function here is pure given its inputs, so utterances can be
processed independently and in parallel; the CLI fixes output order by
sorting on utt_id.
"""

from __future__ import annotations

import json

from .cn import ConfusionNetwork, ConfusionSlot, WORD_LEVEL, build_word_cn, expand_to_phoneme_cn
from .config import PipelineConfig
from .errors import PipelineError
from .features import (
    CanonicalAlignment,
    DurationStats,
    FeatureMatrix,
    FeatureRow,
    align_cn_to_canonical,
    broadcast_word_features,
    compute_cn_features,
    compute_cn_wgop,
    word_sr_nd,
)
from .lexicon import Lexicon, lookup
from .nbest import (
    Hypothesis,
    NBestList,
    RawHypothesis,
    WordTiming,
    apply_script_policy,
    dedupe_and_posteriors,
    normalize_text,
)


def normalize_utterance(
    utt_id: str,
    raw_hyps: list[RawHypothesis],
    config: PipelineConfig,
) -> NBestList:
    """Steps 2-4 for one utterance: text normalization, script policy,
    de-duplication and posterior computation.

    Word timings must describe the same text as the hypothesis; if the
    script policy then drops tokens, the timings no longer line up with the
    token sequence and are discarded with a warning.
    """
    import warnings

    rules = config.rules()
    survivors: list[Hypothesis] = []
    for raw in raw_hyps:
        tokens = normalize_text(raw.text, rules)
        words = raw.words
        if words is not None:
            surface_tokens = normalize_text(" ".join(w.surface for w in words), rules)
            if surface_tokens != tokens:
                raise PipelineError(
                    f"{utt_id}: word timings do not match the hypothesis text "
                    f"({surface_tokens} vs {tokens})"
                )
        kept = apply_script_policy(
            tokens, config.script_policy, config.target_script, config.char_map or None
        )
        if kept is None:
            continue
        if words is not None and len(kept) != len(tokens):
            warnings.warn(f"{utt_id}: script policy dropped tokens; discarding word timings")
            words = None
        survivors.append(Hypothesis(kept, raw.log_score, words))
    if not survivors:
        raise PipelineError(f"{utt_id}: no hypotheses survive the script policy")
    return dedupe_and_posteriors(
        utt_id, survivors, config.temperature, config.length_normalize
    )


def nbest_to_record(nbest: NBestList) -> dict:
    return {
        "utt_id": nbest.utt_id,
        "hyps": [
            {
                "tokens": h.tokens,
                "log_score": h.log_score,
                "posterior": h.posterior,
                "words": None
                if h.words is None
                else [{"w": w.surface, "t_start": w.t_start, "t_end": w.t_end} for w in h.words],
            }
            for h in nbest.hyps
        ],
    }


def nbest_from_record(rec: dict) -> NBestList:
    hyps = []
    for h in rec["hyps"]:
        words = None
        if h.get("words") is not None:
            words = [WordTiming(w["w"], w["t_start"], w["t_end"]) for w in h["words"]]
        hyps.append(Hypothesis(list(h["tokens"]), h["log_score"], words, h["posterior"]))
    nbest = NBestList(rec["utt_id"], hyps)
    nbest.validate()
    return nbest


def canonical_expansion(words: list[str], lex: Lexicon) -> list[tuple[str, list[str]]]:
    """Canonical phoneme sequence: the first (file-order) pronunciation of
    each transcript word. The transcript must be fully in vocabulary."""
    out = []
    for word in words:
        prons = lookup(lex, word)
        if prons is None:
            raise PipelineError(f"transcript word {word!r} not in lexicon")
        out.append((word, list(prons[0].phones)))
    return out


def one_best_word_cn(tokens: list[str], utt_id: str = "") -> ConfusionNetwork:
    """Degenerate word network for a single hypothesis (one-hot slots)."""
    return ConfusionNetwork(utt_id, WORD_LEVEL, [ConfusionSlot({t: 1.0}) for t in tokens])


def utterance_feature_matrix(
    nbest: NBestList,
    canonical_words: list[str],
    lex: Lexicon,
    stats: DurationStats,
    config: PipelineConfig,
    word_cn: ConfusionNetwork | None = None,
    phoneme_cn: ConfusionNetwork | None = None,
) -> FeatureMatrix:
    """Full per-utterance feature matrix, one row per canonical phoneme."""
    expansion = canonical_expansion(canonical_words, lex)
    canonical_phones = [p for _, phones in expansion for p in phones]
    inventory = lex.ordered_inventory()

    if word_cn is None:
        word_cn = build_word_cn(nbest)
    if phoneme_cn is None:
        phoneme_cn = expand_to_phoneme_cn(word_cn, lex, config.oov_policy)

    alignment = align_cn_to_canonical(
        phoneme_cn, canonical_phones, config.deletion_cost, lex.phoneme_inventory
    )
    phone_feats = compute_cn_features(
        phoneme_cn, canonical_phones, alignment, inventory, config.log_floor
    )

    word_gops = compute_cn_wgop(
        word_cn, canonical_words, config.log_floor, config.deletion_cost
    )

    one_best = nbest.hyps[0]
    timings = one_best.words or []
    if len(timings) != len(one_best.tokens):
        # Timings index hypothesis words by position; a mismatch (e.g. one
        # surface form verbalized into several tokens) makes them unusable.
        timings = []
    tempo = word_sr_nd(timings, stats)
    word_alignment = align_cn_to_canonical(
        one_best_word_cn(one_best.tokens), canonical_words, config.deletion_cost
    )
    tempo_rows = broadcast_word_features(expansion, tempo, word_alignment, stats)
    word_spans = _canonical_word_spans(word_alignment, timings, len(canonical_words))

    rows = []
    for feats, tempo_row in zip(phone_feats, tempo_rows):
        wi = tempo_row["word_index"]
        rows.append(
            FeatureRow(
                word_index=wi,
                cn_gop=feats.cn_gop,
                cn_gop_margin=feats.cn_gop_margin,
                lpp=feats.lpp,
                lpr=feats.lpr,
                word_sr=tempo_row["sr"],
                word_nd=tempo_row["nd"],
                cn_wgop=word_gops[wi].cn_wgop,
                cn_wgop_margin=word_gops[wi].cn_wgop_margin,
            )
        )
    return FeatureMatrix(nbest.utt_id, inventory, canonical_phones, rows, word_spans)


def _canonical_word_spans(
    word_alignment: CanonicalAlignment,
    timings: list[WordTiming],
    n_words: int,
) -> list[list[int] | None]:
    """Frame span per canonical word from the matched hypothesis words."""
    spans: list[list[int] | None] = [None] * n_words
    for op in word_alignment.ops:
        if op.kind == "match" and op.slot_index < len(timings):
            timing = timings[op.slot_index]
            spans[op.canon_index] = [timing.t_start, timing.t_end]
    return spans


def load_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return records


def dump_jsonl(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_transcripts(path: str) -> dict[str, list[str]]:
    """Read 'utt_id<TAB>word word ...' canonical transcript lines."""
    transcripts = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise PipelineError(f"{path}:{lineno}: expected 'utt_id<TAB>words'")
            transcripts[parts[0]] = parts[1].split()
    return transcripts


def save_frame_features(path: str, values) -> None:
    """Frame feature file: JSON header line, then one row per frame."""
    import numpy as np

    arr = np.asarray(values, dtype=float)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"frames": arr.shape[0], "dim": arr.shape[1]}, sort_keys=True) + "\n")
        for row in arr:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_frame_features(path: str):
    import numpy as np

    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        rows = [[float(x) for x in line.split()] for line in f if line.strip()]
    arr = np.array(rows, dtype=float)
    if arr.shape != (header["frames"], header["dim"]):
        raise PipelineError(f"{path}: data shape {arr.shape} does not match header")
    return arr
