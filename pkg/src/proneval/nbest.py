"""N-best list ingestion: parsing, text normalization, script filtering,
de-duplication and posterior computation.

Input is one JSON record per line with fields ``utt_id``, ``rank``, ``text``,
``log_score`` and optional ``words`` (list of ``{w, t_start, t_end}`` with
frame indices). Normalization is deterministic and idempotent: lowercase,
strip punctuation, verbalize digit sequences, then apply the script policy.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field

from .errors import NormalizationError, ParseError

ROMANIZE_BASIC = "romanize_basic"
DROP_HYPOTHESIS = "drop_hypothesis"

# Character ranges accepted per target script, checked after normalization.
_SCRIPT_RANGES = {
    "latin": (("a", "z"),),
    "tamil": (("஀", "௿"),),
}

_ONES = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen",
]
_TENS = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]

MAX_VERBALIZED = 999999


@dataclass
class WordTiming:
    """Word-level time span in frame indices, end inclusive of the span."""

    surface: str
    t_start: int
    t_end: int

    def __post_init__(self) -> None:
        if self.t_start < 0 or self.t_end < self.t_start:
            raise ParseError(
                f"bad word timing for {self.surface!r}: [{self.t_start}, {self.t_end}]"
            )

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start


@dataclass
class RawHypothesis:
    """One display-formatted ASR hypothesis before normalization."""

    text: str
    log_score: float
    words: list[WordTiming] | None = None


@dataclass
class Hypothesis:
    """Normalized hypothesis; ``posterior`` is set by dedupe_and_posteriors."""

    tokens: list[str]
    log_score: float
    words: list[WordTiming] | None = None
    posterior: float = 0.0


@dataclass
class NBestList:
    utt_id: str
    hyps: list[Hypothesis] = field(default_factory=list)

    def validate(self) -> None:
        total = sum(h.posterior for h in self.hyps)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"{self.utt_id}: posteriors sum to {total}, not 1")
        seen = set()
        for h in self.hyps:
            key = tuple(h.tokens)
            if key in seen:
                raise ValueError(f"{self.utt_id}: duplicate hypothesis {h.tokens}")
            seen.add(key)
        for a, b in zip(self.hyps, self.hyps[1:]):
            if a.posterior < b.posterior:
                raise ValueError(f"{self.utt_id}: hypotheses not sorted by posterior")


@dataclass
class NormalizationRules:
    """Language rules for normalize_text.

    ``punctuation`` is the exact character set to strip; None strips every
    Unicode punctuation character. ``number_words`` maps digit strings to
    their spoken form and replaces the built-in English verbalizer.
    """

    punctuation: str | None = None
    number_words: dict[str, str] | None = None

    @classmethod
    def load(cls, path: str) -> "NormalizationRules":
        """Read a key = value plain-text rules file.

        Recognized keys: ``punctuation`` and ``number_map`` (path to a
        tab-separated digits-to-words file, relative to the rules file).
        """
        import os

        punctuation = None
        number_words = None
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParseError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                if key == "punctuation":
                    punctuation = value
                elif key == "number_map":
                    map_path = os.path.join(os.path.dirname(path), value)
                    number_words = _load_number_map(map_path)
                else:
                    raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
        return cls(punctuation=punctuation, number_words=number_words)


def _load_number_map(path: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].isdigit():
                raise ParseError(f"{path}:{lineno}: expected 'DIGITS<TAB>spoken form'")
            mapping[parts[0]] = parts[1]
    return mapping


def parse_nbest(lines) -> list[tuple[str, list[RawHypothesis]]]:
    """Parse line-delimited N-best records, grouped per utterance.

    Groups preserve order of first appearance; hypotheses keep line order.
    """
    by_utt: dict[str, list[RawHypothesis]] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise ParseError(f"line {lineno}: record is not an object")
        for key in ("utt_id", "rank", "text", "log_score"):
            if key not in rec:
                raise ParseError(f"line {lineno}: missing field {key!r}")
        utt_id = rec["utt_id"]
        if not isinstance(utt_id, str) or not utt_id:
            raise ParseError(f"line {lineno}: utt_id must be a non-empty string")
        if not isinstance(rec["rank"], int):
            raise ParseError(f"line {lineno}: rank must be an integer")
        if not isinstance(rec["text"], str):
            raise ParseError(f"line {lineno}: text must be a string")
        try:
            log_score = float(rec["log_score"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: log_score is not a number") from exc
        if not math.isfinite(log_score):
            raise ParseError(f"line {lineno}: log_score must be finite")
        words = None
        if rec.get("words") is not None:
            words = []
            prev_end = None
            for w in rec["words"]:
                try:
                    timing = WordTiming(str(w["w"]), int(w["t_start"]), int(w["t_end"]))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ParseError(f"line {lineno}: bad words entry {w!r}") from exc
                if prev_end is not None and timing.t_start < prev_end:
                    raise ParseError(f"line {lineno}: overlapping word timings")
                prev_end = timing.t_end
                words.append(timing)
        by_utt.setdefault(utt_id, []).append(RawHypothesis(rec["text"], log_score, words))
    return list(by_utt.items())


def _verbalize_en(token: str) -> list[str]:
    n = int(token)
    if n > MAX_VERBALIZED:
        raise NormalizationError(f"number {token!r} outside verbalizer range 0..{MAX_VERBALIZED}")
    return _int_words(n)


def _int_words(n: int) -> list[str]:
    if n < 20:
        return [_ONES[n]]
    if n < 100:
        words = [_TENS[n // 10 - 2]]
        if n % 10:
            words.append(_ONES[n % 10])
        return words
    if n < 1000:
        words = [_ONES[n // 100], "hundred"]
        if n % 100:
            words.extend(_int_words(n % 100))
        return words
    words = _int_words(n // 1000) + ["thousand"]
    if n % 1000:
        words.extend(_int_words(n % 1000))
    return words


def _is_punct(ch: str, rules: NormalizationRules) -> bool:
    if rules.punctuation is not None:
        return ch in rules.punctuation
    return unicodedata.category(ch).startswith("P")


def normalize_text(text: str, rules: NormalizationRules | None = None) -> list[str]:
    """Lowercase, strip punctuation, verbalize digit sequences, tokenize.

    Idempotent on its own output. Raises NormalizationError for a digit
    token the verbalizer cannot express.
    """
    rules = rules or NormalizationRules()
    lowered = text.lower()
    stripped = "".join(ch for ch in lowered if not _is_punct(ch, rules))
    tokens: list[str] = []
    for token in stripped.split():
        if token.isdigit():
            if rules.number_words is not None:
                if token not in rules.number_words:
                    raise NormalizationError(f"number {token!r} not in the number map")
                tokens.extend(rules.number_words[token].split())
            else:
                tokens.extend(_verbalize_en(token))
        else:
            tokens.append(token)
    return tokens


def _in_script(ch: str, target_script: str) -> bool:
    try:
        ranges = _SCRIPT_RANGES[target_script]
    except KeyError:
        raise NormalizationError(f"unknown target script {target_script!r}") from None
    return any(lo <= ch <= hi for lo, hi in ranges)


def _romanize_token(token: str, char_map: dict[str, str] | None) -> str:
    decomposed = unicodedata.normalize("NFKD", token)
    base = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    if char_map:
        base = "".join(char_map.get(ch, ch) for ch in base)
    return base.lower()


def apply_script_policy(
    tokens: list[str],
    policy: str,
    target_script: str,
    char_map: dict[str, str] | None = None,
) -> list[str] | None:
    """Enforce the target script on normalized tokens.

    romanize_basic: decompose, strip diacritics, apply the character map,
    then drop tokens that still contain out-of-script characters.
    drop_hypothesis: return None (reject) if any token has an
    out-of-script character; rejection is a normal outcome, not an error.
    """
    if policy == ROMANIZE_BASIC:
        kept = []
        for token in tokens:
            mapped = _romanize_token(token, char_map)
            if mapped and all(_in_script(ch, target_script) for ch in mapped):
                kept.append(mapped)
        return kept
    if policy == DROP_HYPOTHESIS:
        for token in tokens:
            if any(not _in_script(ch, target_script) for ch in token):
                return None
        return list(tokens)
    raise NormalizationError(f"unknown script policy {policy!r}")


def dedupe_and_posteriors(
    utt_id: str,
    hyps: list[Hypothesis],
    temperature: float = 1.0,
    length_normalize: bool = False,
) -> NBestList:
    """Merge duplicate token sequences (keep max log-score) and softmax.

    Posteriors are exp(score / temperature) normalized over the surviving
    unique hypotheses, computed stably by subtracting the max score first.
    With length_normalize, score = log_score / max(1, len(tokens)).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    best: dict[tuple[str, ...], Hypothesis] = {}
    for hyp in hyps:
        key = tuple(hyp.tokens)
        cur = best.get(key)
        if cur is None or hyp.log_score > cur.log_score:
            best[key] = hyp
    if not best:
        raise ValueError("no hypotheses")
    unique = list(best.values())
    scores = [h.log_score for h in unique]
    if length_normalize:
        scores = [s / max(1, len(h.tokens)) for s, h in zip(scores, unique)]
    top = max(scores)
    weights = [math.exp((s - top) / temperature) for s in scores]
    total = sum(weights)
    merged = [
        Hypothesis(h.tokens, h.log_score, h.words, posterior=w / total)
        for h, w in zip(unique, weights)
    ]
    merged.sort(key=lambda h: -h.posterior)
    result = NBestList(utt_id, merged)
    result.validate()
    return result
