"""Confusion networks from N-best lists.

A confusion network is an ordered list of slots, each a categorical
distribution over symbols plus a reserved epsilon symbol meaning "nothing
uttered here". Construction is hierarchical: a word-level network is built
by posterior-weighted progressive alignment of the hypotheses (most
confident first), then each word slot is expanded into a run of phoneme
slots by merging the pronunciation variants the same way.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .errors import ProneValError
from .lexicon import Lexicon, OOV_ERROR, OOV_SKIP, lookup
from .nbest import NBestList

EPS = "<eps>"

WORD_LEVEL = "word"
PHONEME_LEVEL = "phoneme"

_OP_MATCH = "match"
_OP_SKIP = "skip"
_OP_INSERT = "insert"


@dataclass
class ConfusionSlot:
    """One slot: symbol -> probability, epsilon included."""

    probs: dict[str, float] = field(default_factory=dict)

    def prob(self, symbol: str) -> float:
        return self.probs.get(symbol, 0.0)

    def total(self) -> float:
        return sum(self.probs.values())

    def normalized(self) -> "ConfusionSlot":
        total = self.total()
        return ConfusionSlot({sym: p / total for sym, p in self.probs.items()})


@dataclass
class ConfusionNetwork:
    utt_id: str
    level: str
    slots: list[ConfusionSlot] = field(default_factory=list)
    # Phoneme-level only: originating word-slot index per slot.
    word_spans: list[int] | None = None

    def validate(self) -> None:
        for idx, slot in enumerate(self.slots):
            if any(p < 0 for p in slot.probs.values()):
                raise ValueError(f"{self.utt_id}: negative probability in slot {idx}")
            if abs(slot.total() - 1.0) > 1e-9:
                raise ValueError(f"{self.utt_id}: slot {idx} sums to {slot.total()}")
        if self.word_spans is not None:
            if len(self.word_spans) != len(self.slots):
                raise ValueError(f"{self.utt_id}: word_spans length mismatch")
            for a, b in zip(self.word_spans, self.word_spans[1:]):
                if b < a:
                    raise ValueError(f"{self.utt_id}: word_spans not monotone")


@dataclass
class WeightedSequence:
    symbols: list[str]
    weight: float


def _slot_eps_share(slot: ConfusionSlot) -> float:
    total = slot.total()
    if total <= 0:
        return 0.0
    return slot.prob(EPS) / total


def _align_into_slots(symbols: list[str], slots: list[ConfusionSlot]) -> list[tuple]:
    """Minimum-cost alignment of a symbol sequence against existing slots.

    Costs: aligning a symbol to a slot is free when the slot already carries
    it, else 1 (substitution); skipping a slot costs 1 - P(eps) of that slot;
    creating a new slot costs 1. Ties prefer match over skip over insert,
    resolved left to right, which makes the merge deterministic.
    """
    m, n = len(symbols), len(slots)
    match_cost = [
        [0.0 if slots[j].prob(symbols[i]) > 0 else 1.0 for j in range(n)]
        for i in range(m)
    ]
    skip_cost = [1.0 - _slot_eps_share(slots[j]) for j in range(n)]

    # suffix[i][j]: min cost aligning symbols[i:] with slots[j:]
    suffix = [[0.0] * (n + 1) for _ in range(m + 1)]
    for j in range(n - 1, -1, -1):
        suffix[m][j] = skip_cost[j] + suffix[m][j + 1]
    for i in range(m - 1, -1, -1):
        suffix[i][n] = 1.0 + suffix[i + 1][n]
        for j in range(n - 1, -1, -1):
            suffix[i][j] = min(
                match_cost[i][j] + suffix[i + 1][j + 1],
                skip_cost[j] + suffix[i][j + 1],
                1.0 + suffix[i + 1][j],
            )

    ops: list[tuple] = []
    i = j = 0
    while i < m or j < n:
        cost = suffix[i][j]
        if i < m and j < n and _close(cost, match_cost[i][j] + suffix[i + 1][j + 1]):
            ops.append((_OP_MATCH, i, j))
            i, j = i + 1, j + 1
        elif j < n and _close(cost, skip_cost[j] + suffix[i][j + 1]):
            ops.append((_OP_SKIP, j))
            j += 1
        else:
            ops.append((_OP_INSERT, i, j))
            i += 1
    return ops


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12


def _merge_sequence(
    slots: list[ConfusionSlot],
    seq: WeightedSequence,
    merged_mass: float,
) -> list[ConfusionSlot]:
    """Fold one weighted sequence into the slots via minimum-cost alignment.

    Matched symbols gain the sequence weight; skipped slots gain it on
    epsilon; new slots are backfilled with the previously merged mass on
    epsilon so every slot keeps the same total.
    """
    ops = _align_into_slots(seq.symbols, slots)
    result: list[ConfusionSlot] = []
    for op in ops:
        if op[0] == _OP_MATCH:
            _, i, j = op
            probs = dict(slots[j].probs)
            probs[seq.symbols[i]] = probs.get(seq.symbols[i], 0.0) + seq.weight
            result.append(ConfusionSlot(probs))
        elif op[0] == _OP_SKIP:
            _, j = op
            probs = dict(slots[j].probs)
            probs[EPS] = probs.get(EPS, 0.0) + seq.weight
            result.append(ConfusionSlot(probs))
        else:
            _, i, _ = op
            probs = {}
            if merged_mass > 0:
                probs[EPS] = merged_mass
            probs[seq.symbols[i]] = probs.get(seq.symbols[i], 0.0) + seq.weight
            result.append(ConfusionSlot(probs))
    return result


def _merge_all(sequences: list[WeightedSequence]) -> list[ConfusionSlot]:
    """Progressively merge sequences (given in merge order) into slots."""
    if not sequences:
        return []
    first = sequences[0]
    slots = [ConfusionSlot({sym: first.weight}) for sym in first.symbols]
    merged = first.weight
    for seq in sequences[1:]:
        slots = _merge_sequence(slots, seq, merged)
        merged += seq.weight
    return [slot.normalized() for slot in slots]


def build_word_cn(nbest: NBestList) -> ConfusionNetwork:
    """Word-level confusion network by progressive alignment.

    Hypotheses are merged in descending posterior order (ties keep list
    order), anchored on the most confident one.
    """
    if not nbest.hyps:
        raise ProneValError(f"{nbest.utt_id}: empty N-best list")
    sequences = [WeightedSequence(h.tokens, h.posterior) for h in nbest.hyps]
    cn = ConfusionNetwork(nbest.utt_id, WORD_LEVEL, _merge_all(sequences))
    cn.validate()
    return cn


def _word_slot_sequences(
    slot: ConfusionSlot,
    lex: Lexicon,
    oov_policy: str,
) -> list[WeightedSequence]:
    """Pronunciation sequences for one word slot, in merge order."""
    eps_weight = slot.prob(EPS)
    sequences: list[WeightedSequence] = []
    for symbol, prob in slot.probs.items():
        if symbol == EPS or prob <= 0:
            continue
        prons = lookup(lex, symbol)
        if prons is None:
            if oov_policy == OOV_ERROR:
                raise ProneValError(f"cannot expand out-of-vocabulary word {symbol!r}")
            if oov_policy != OOV_SKIP:
                raise ProneValError(f"unknown OOV policy {oov_policy!r}")
            warnings.warn(f"treating out-of-vocabulary word {symbol!r} as silence")
            eps_weight += prob
            continue
        for entry in prons:
            sequences.append(WeightedSequence(list(entry.phones), prob * entry.prior))
    if eps_weight > 0:
        sequences.append(WeightedSequence([], eps_weight))
    sequences.sort(key=lambda s: (-s.weight, tuple(s.symbols)))
    return sequences


def expand_to_phoneme_cn(
    word_cn: ConfusionNetwork,
    lex: Lexicon,
    oov_policy: str = OOV_ERROR,
) -> ConfusionNetwork:
    """Expand each word slot into a run of phoneme slots.

    Every word in a slot contributes one weighted phoneme sequence per
    pronunciation variant (weight = word probability x variant prior); the
    sequences are merged like hypotheses and the runs concatenated in slot
    order. word_spans records which word slot produced each phoneme slot.
    """
    if word_cn.level != WORD_LEVEL:
        raise ProneValError("expand_to_phoneme_cn needs a word-level network")
    slots: list[ConfusionSlot] = []
    spans: list[int] = []
    for wi, word_slot in enumerate(word_cn.slots):
        run = _merge_all(_word_slot_sequences(word_slot, lex, oov_policy))
        slots.extend(run)
        spans.extend([wi] * len(run))
    cn = ConfusionNetwork(word_cn.utt_id, PHONEME_LEVEL, slots, spans)
    cn.validate()
    return cn


def cn_decode(cn: ConfusionNetwork) -> list[str]:
    """Consensus sequence: per-slot argmax, epsilon winners omitted.

    Ties break toward the lexicographically smallest symbol.
    """
    out = []
    for slot in cn.slots:
        winner = min(slot.probs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if winner != EPS:
            out.append(winner)
    return out


@dataclass
class WerResult:
    substitutions: int
    insertions: int
    deletions: int
    rate: float

    @property
    def edits(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def wer(hyp: list[str], ref: list[str]) -> WerResult:
    """Word error rate via unit-cost Levenshtein alignment."""
    if not ref:
        raise ProneValError("empty reference")
    m, n = len(hyp), len(ref)
    # suffix[i][j]: edit distance between hyp[i:] and ref[j:]
    suffix = [[0] * (n + 1) for _ in range(m + 1)]
    for j in range(n - 1, -1, -1):
        suffix[m][j] = n - j
    for i in range(m - 1, -1, -1):
        suffix[i][n] = m - i
        for j in range(n - 1, -1, -1):
            sub = (0 if hyp[i] == ref[j] else 1) + suffix[i + 1][j + 1]
            suffix[i][j] = min(sub, 1 + suffix[i][j + 1], 1 + suffix[i + 1][j])
    subs = ins = dels = 0
    i = j = 0
    while i < m or j < n:
        cost = suffix[i][j]
        if i < m and j < n and cost == (0 if hyp[i] == ref[j] else 1) + suffix[i + 1][j + 1]:
            if hyp[i] != ref[j]:
                subs += 1
            i, j = i + 1, j + 1
        elif j < n and cost == 1 + suffix[i][j + 1]:
            dels += 1
            j += 1
        else:
            ins += 1
            i += 1
    return WerResult(subs, ins, dels, (subs + ins + dels) / n)


def cn_to_record(cn: ConfusionNetwork) -> dict:
    """JSON-serializable record; symbols sorted for stable output."""
    rec = {
        "utt_id": cn.utt_id,
        "level": cn.level,
        "slots": [
            [{"symbol": sym, "prob": slot.probs[sym]} for sym in sorted(slot.probs)]
            for slot in cn.slots
        ],
    }
    rec["word_spans"] = cn.word_spans
    return rec


def cn_from_record(rec: dict) -> ConfusionNetwork:
    slots = [
        ConfusionSlot({entry["symbol"]: float(entry["prob"]) for entry in slot})
        for slot in rec["slots"]
    ]
    cn = ConfusionNetwork(rec["utt_id"], rec["level"], slots, rec.get("word_spans"))
    cn.validate()
    return cn
