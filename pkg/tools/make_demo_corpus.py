#!/usr/bin/env python3
"""Generate the bundled synthetic demo corpus.

A seeded ensemble: each utterance has a true word sequence and 8 hypotheses
that corrupt words independently by substitution, so the consensus decode
can outperform the single best hypothesis. Every vocabulary word has exactly
three phonemes and corruption never inserts or deletes words, which keeps
the normalized-duration column exactly standardized over the corpus.

Run from the repository root:  python tools/make_demo_corpus.py
"""

from __future__ import annotations

import json
import os
import random

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "proneval", "data", "demo")
SEED = 20240917
N_UTTS = 20
N_HYPS = 8
CORRUPT_P = 0.18

MAIN_LEXICON = {
    "bake": [("B EY K", None)],
    "beam": [("B IY M", None)],
    "bite": [("B AY T", None)],
    "dime": [("D AY M", None)],
    "dome": [("D OW M", None)],
    "gate": [("G EY T", None)],
    "goat": [("G OW T", None)],
    "keel": [("K IY L", None)],
    "lake": [("L EY K", None)],
    "lime": [("L AY M", None)],
    "mane": [("M EY N", None)],
    "mite": [("M AY T", None)],
    "moat": [("M OW T", None)],
    "neat": [("N IY T", None)],
    "note": [("N OW T", None)],
    "tame": [("T EY M", 0.7), ("T OW M", 0.3)],
}

# Out-of-vocabulary words covered by the supplement, plus one conflicting
# entry for "note" that the main lexicon must win over.
SUPPLEMENT = {
    "dote": [("D OW T", None)],
    "kite": [("K AY T", None)],
    "note": [("N OW D", None)],
}

VOCAB = sorted(set(MAIN_LEXICON) | {"dote", "kite"})


def write_lexicon(path: str, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for word in sorted(entries):
            for phones, prior in entries[word]:
                if prior is None:
                    f.write(f"{word}\t{phones}\n")
                else:
                    f.write(f"{word}\t{prior}\t{phones}\n")


def main() -> None:
    rng = random.Random(SEED)
    os.makedirs(OUT_DIR, exist_ok=True)

    write_lexicon(os.path.join(OUT_DIR, "lexicon.txt"), MAIN_LEXICON)
    write_lexicon(os.path.join(OUT_DIR, "supplement.txt"), SUPPLEMENT)

    nbest_lines = []
    transcript_lines = []
    for u in range(1, N_UTTS + 1):
        utt_id = f"utt{u:03d}"
        n_words = rng.randint(4, 6)
        truth = [rng.choice(VOCAB) for _ in range(n_words)]
        transcript_lines.append(f"{utt_id}\t{' '.join(truth)}\n")

        spans = []
        t = 3
        for _ in truth:
            dur = rng.randint(8, 18)
            spans.append((t, t + dur))
            t += dur + 2

        for k in range(N_HYPS):
            words = [
                rng.choice([w for w in VOCAB if w != true_word])
                if rng.random() < CORRUPT_P
                else true_word
                for true_word in truth
            ]
            text = " ".join(words).capitalize() + ("." if k % 2 == 0 else ",")
            rec = {
                "utt_id": utt_id,
                "rank": k,
                "text": text,
                "log_score": round(-0.4 * k - 0.01 * u, 6),
                "words": [
                    {"w": w, "t_start": s, "t_end": e}
                    for w, (s, e) in zip(words, spans)
                ],
            }
            nbest_lines.append(json.dumps(rec, sort_keys=True) + "\n")

    with open(os.path.join(OUT_DIR, "nbest.jsonl"), "w", encoding="utf-8") as f:
        f.writelines(nbest_lines)
    with open(os.path.join(OUT_DIR, "transcripts.txt"), "w", encoding="utf-8") as f:
        f.writelines(transcript_lines)

    inventory_size = 13  # 12 phones + SIL
    config = {
        "language": "en",
        "script_policy": "romanize_basic",
        "target_script": "latin",
        "lexicon_main": "lexicon.txt",
        "lexicon_supplement": "supplement.txt",
        "use_priors": False,
        "oov_policy": "error",
        "max_variants": 6,
        "temperature": 1.0,
        "log_floor": -20.0,
        "deletion_cost": 0.95,
        "mask_mode": "restricted",
        "frame_rate": 100.0,
        "seed": 7,
        "model": {
            "phoneme_feat_dim": 4 + 2 * inventory_size + 2,
            "frame_feat_dim": 8,
            "n_classes": 11,
            "d_model": 24,
            "n_heads": 8,
            "n_decoder_layers": 1,
            "n_encoder_layers": 2,
            "seed": 7,
            "class_values": [float(v) for v in range(11)],
        },
    }
    with open(os.path.join(OUT_DIR, "config.json"), "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote demo corpus to {os.path.normpath(OUT_DIR)}")


if __name__ == "__main__":
    main()
