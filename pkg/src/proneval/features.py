"""Pronunciation features read off a confusion network.

The phoneme-level network is aligned to the canonical phoneme sequence by
minimum edit distance; matched slots supply the phoneme posterior directly,
deleted canonical phonemes put all probability on silence, and inserted
slots are ignored. Word-level speaking-rate and duration features are
broadcast to the phonemes of each canonical word.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cn import EPS, ConfusionNetwork
from .errors import AlignmentError
from .lexicon import SIL
from .nbest import WordTiming

MATCH = "match"
DELETE = "delete"
INSERT = "insert"

DEFAULT_LOG_FLOOR = -20.0
DEFAULT_DELETION_COST = 0.95


@dataclass(frozen=True)
class AlignOp:
    kind: str
    slot_index: int | None = None
    canon_index: int | None = None


@dataclass
class CanonicalAlignment:
    """Edit script mapping network slots to canonical positions."""

    ops: list[AlignOp]
    cost: float

    def validate(self, n_slots: int, n_canon: int) -> None:
        canon_seen = []
        slot_seen = []
        for op in self.ops:
            if op.canon_index is not None:
                canon_seen.append(op.canon_index)
            if op.slot_index is not None:
                slot_seen.append(op.slot_index)
        if sorted(canon_seen) != list(range(n_canon)):
            raise AlignmentError("canonical indices not covered exactly once")
        if canon_seen != sorted(canon_seen) or slot_seen != sorted(slot_seen):
            raise AlignmentError("alignment indices not increasing")
        if sorted(slot_seen) != list(range(n_slots)):
            raise AlignmentError("slot indices not covered exactly once")

    def op_for_canon(self, canon_index: int) -> AlignOp:
        for op in self.ops:
            if op.canon_index == canon_index:
                return op
        raise AlignmentError(f"no op for canonical index {canon_index}")


def align_cn_to_canonical(
    cn: ConfusionNetwork,
    canonical: list[str],
    deletion_cost: float = DEFAULT_DELETION_COST,
    inventory: set[str] | None = None,
) -> CanonicalAlignment:
    """Minimum edit distance alignment between network slots and canonical.

    Costs: matching slot j to canonical symbol p costs 1 - P_j(p); deleting
    a canonical symbol costs ``deletion_cost``; inserting (consuming) a slot
    costs 1 - P_j(eps). Ties prefer match over delete over insert, left to
    right.
    """
    if not canonical:
        raise AlignmentError("canonical sequence is empty")
    if inventory is not None:
        for sym in canonical:
            if sym not in inventory:
                raise AlignmentError(f"canonical symbol {sym!r} outside inventory")
    slots = cn.slots
    m, n = len(canonical), len(slots)
    match_cost = [[1.0 - slots[j].prob(canonical[i]) for j in range(n)] for i in range(m)]
    insert_cost = [1.0 - slots[j].prob(EPS) for j in range(n)]

    # suffix[i][j]: min cost aligning canonical[i:] with slots[j:]
    suffix = [[0.0] * (n + 1) for _ in range(m + 1)]
    for j in range(n - 1, -1, -1):
        suffix[m][j] = insert_cost[j] + suffix[m][j + 1]
    for i in range(m - 1, -1, -1):
        suffix[i][n] = deletion_cost + suffix[i + 1][n]
        for j in range(n - 1, -1, -1):
            suffix[i][j] = min(
                match_cost[i][j] + suffix[i + 1][j + 1],
                deletion_cost + suffix[i + 1][j],
                insert_cost[j] + suffix[i][j + 1],
            )

    ops: list[AlignOp] = []
    i = j = 0
    while i < m or j < n:
        cost = suffix[i][j]
        if i < m and j < n and _close(cost, match_cost[i][j] + suffix[i + 1][j + 1]):
            ops.append(AlignOp(MATCH, slot_index=j, canon_index=i))
            i, j = i + 1, j + 1
        elif i < m and _close(cost, deletion_cost + suffix[i + 1][j]):
            ops.append(AlignOp(DELETE, canon_index=i))
            i += 1
        else:
            ops.append(AlignOp(INSERT, slot_index=j))
            j += 1
    alignment = CanonicalAlignment(ops, suffix[0][0])
    alignment.validate(n, m)
    return alignment


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12


def floored_log(p: float, log_floor: float = DEFAULT_LOG_FLOOR) -> float:
    """Natural log clamped from below so every feature stays finite."""
    if p <= 0.0:
        return log_floor
    return max(math.log(p), log_floor)


@dataclass
class PhonemeFeatures:
    cn_gop: float
    cn_gop_margin: float
    lpp: list[float]
    lpr: list[float]


def compute_cn_features(
    cn: ConfusionNetwork,
    canonical: list[str],
    alignment: CanonicalAlignment,
    inventory: list[str],
    log_floor: float = DEFAULT_LOG_FLOOR,
) -> list[PhonemeFeatures]:
    """Per-canonical-phoneme posterior features from the aligned network.

    Matched slots give the phoneme distribution (absent symbols have zero
    probability); deletions put all probability on silence; inserted slots
    contribute nothing. The floor is applied before the margin max.
    """
    if SIL not in inventory:
        raise AlignmentError("inventory must contain the silence symbol")
    index_of = {sym: i for i, sym in enumerate(inventory)}
    rows = []
    for i, sym in enumerate(canonical):
        if sym not in index_of:
            raise AlignmentError(f"canonical symbol {sym!r} outside inventory")
        op = alignment.op_for_canon(i)
        if op.kind == MATCH:
            dist = cn.slots[op.slot_index].probs
            lpp = [floored_log(dist.get(p, 0.0), log_floor) for p in inventory]
        else:
            lpp = [floored_log(1.0 if p == SIL else 0.0, log_floor) for p in inventory]
        ref = lpp[index_of[sym]]
        rows.append(
            PhonemeFeatures(
                cn_gop=ref,
                cn_gop_margin=ref - max(lpp),
                lpp=lpp,
                lpr=[ref - v for v in lpp],
            )
        )
    return rows


@dataclass
class DurationStats:
    mu: float
    sigma: float
    count: int

    def nd(self, duration: float) -> float:
        return (duration - self.mu) / self.sigma


def fit_duration_stats(durations: list[float]) -> DurationStats:
    """Mean and population standard deviation of word durations."""
    if len(durations) < 2:
        raise ValueError("need at least 2 durations")
    mu = sum(durations) / len(durations)
    var = sum((d - mu) ** 2 for d in durations) / len(durations)
    if var == 0.0:
        raise ValueError("all durations equal: standard deviation is zero")
    return DurationStats(mu, math.sqrt(var), len(durations))


@dataclass
class WordTempo:
    sr: float
    nd: float


def word_sr_nd(word_timings: list[WordTiming], stats: DurationStats) -> list[WordTempo]:
    """Speaking rate 1/duration (clamped at 1 frame) and standardized duration."""
    out = []
    for timing in word_timings:
        dur = timing.duration
        out.append(WordTempo(sr=1.0 / max(1, dur), nd=stats.nd(dur)))
    return out


def broadcast_word_features(
    canonical_words: list[tuple[str, list[str]]],
    per_word: list[WordTempo],
    hyp_word_alignment: CanonicalAlignment,
    stats: DurationStats,
) -> list[dict]:
    """Assign each canonical phoneme the tempo of the word it belongs to.

    ``per_word`` is indexed by hypothesis word position (the slot index of
    the word-level alignment). Canonical words with no matched hypothesis
    word get sr = 0 and the standardized value of a zero duration.
    """
    matched: list[WordTempo | None] = [None] * len(canonical_words)
    for op in hyp_word_alignment.ops:
        if op.kind == MATCH and op.slot_index < len(per_word):
            matched[op.canon_index] = per_word[op.slot_index]
    default = WordTempo(sr=0.0, nd=stats.nd(0.0))
    rows = []
    for wi, (_, phones) in enumerate(canonical_words):
        tempo = matched[wi] if matched[wi] is not None else default
        for _ in phones:
            rows.append({"word_index": wi, "sr": tempo.sr, "nd": tempo.nd})
    return rows


@dataclass
class WordGop:
    cn_wgop: float
    cn_wgop_margin: float


def compute_cn_wgop(
    word_cn: ConfusionNetwork,
    canonical_words: list[str],
    log_floor: float = DEFAULT_LOG_FLOOR,
    deletion_cost: float = DEFAULT_DELETION_COST,
) -> list[WordGop]:
    """Word-level GOP analogue from the word network, per canonical word.

    Same rules as the phoneme features at word granularity: deletions leave
    all non-silence word probability at zero, insertions are ignored.
    """
    alignment = align_cn_to_canonical(word_cn, canonical_words, deletion_cost)
    out = []
    for i, word in enumerate(canonical_words):
        op = alignment.op_for_canon(i)
        if op.kind == MATCH:
            dist = word_cn.slots[op.slot_index].probs
            ref = floored_log(dist.get(word, 0.0), log_floor)
            competitors = [
                floored_log(p, log_floor) for sym, p in dist.items() if sym != EPS
            ]
            best = max(competitors) if competitors else log_floor
        else:
            # Deleted: silence carries all mass, so the margin is against log 1.
            ref = floored_log(0.0, log_floor)
            best = 0.0
        out.append(WordGop(cn_wgop=ref, cn_wgop_margin=min(ref - best, 0.0)))
    return out


@dataclass
class FeatureRow:
    word_index: int
    cn_gop: float
    cn_gop_margin: float
    lpp: list[float]
    lpr: list[float]
    word_sr: float
    word_nd: float
    cn_wgop: float | None = None
    cn_wgop_margin: float | None = None


@dataclass
class FeatureMatrix:
    utt_id: str
    inventory: list[str]
    canonical: list[str]
    rows: list[FeatureRow] = field(default_factory=list)
    # Frame span per canonical word (None when the word has no timing).
    word_spans: list[list[int] | None] | None = None

    def vector_dim(self, include_wgop: bool) -> int:
        return 4 + 2 * len(self.inventory) + (2 if include_wgop else 0)

    def row_vector(self, row: FeatureRow, include_wgop: bool) -> list[float]:
        vec = [row.cn_gop, row.cn_gop_margin, *row.lpp, *row.lpr, row.word_sr, row.word_nd]
        if include_wgop:
            if row.cn_wgop is None or row.cn_wgop_margin is None:
                raise ValueError(f"{self.utt_id}: row has no word-level GOP values")
            vec.extend([row.cn_wgop, row.cn_wgop_margin])
        return vec

    def to_record(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "inventory": self.inventory,
            "canonical": self.canonical,
            "word_spans": self.word_spans,
            "rows": [
                {
                    "word_index": r.word_index,
                    "cn_gop": r.cn_gop,
                    "cn_gop_margin": r.cn_gop_margin,
                    "lpp": r.lpp,
                    "lpr": r.lpr,
                    "word_sr": r.word_sr,
                    "word_nd": r.word_nd,
                    "cn_wgop": r.cn_wgop,
                    "cn_wgop_margin": r.cn_wgop_margin,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FeatureMatrix":
        rows = [
            FeatureRow(
                word_index=r["word_index"],
                cn_gop=r["cn_gop"],
                cn_gop_margin=r["cn_gop_margin"],
                lpp=list(r["lpp"]),
                lpr=list(r["lpr"]),
                word_sr=r["word_sr"],
                word_nd=r["word_nd"],
                cn_wgop=r.get("cn_wgop"),
                cn_wgop_margin=r.get("cn_wgop_margin"),
            )
            for r in rec["rows"]
        ]
        return cls(
            rec["utt_id"],
            list(rec["inventory"]),
            list(rec["canonical"]),
            rows,
            rec.get("word_spans"),
        )
