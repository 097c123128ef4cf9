"""Word-to-phoneme lexicon with pronunciation variants and priors.

File format: one entry per line, ``WORD<TAB>prior<TAB>ph1 ph2 ...`` with the
prior field optional (defaults to 1.0 before per-word normalization). A
supplement file in the same format covers out-of-vocabulary words; the main
file wins when both define a word.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .errors import LexiconError

SIL = "SIL"

OOV_ERROR = "error"
OOV_SKIP = "skip_word"


@dataclass
class PronEntry:
    phones: list[str]
    prior: float

    def __post_init__(self) -> None:
        if not self.phones:
            raise LexiconError("pronunciation must be non-empty")
        if not 0.0 < self.prior <= 1.0 + 1e-12:
            raise LexiconError(f"prior {self.prior} outside (0, 1]")


@dataclass
class Lexicon:
    entries: dict[str, list[PronEntry]] = field(default_factory=dict)
    phoneme_inventory: set[str] = field(default_factory=lambda: {SIL})
    max_variants: int = 6

    def validate(self) -> None:
        for word, prons in self.entries.items():
            if len(prons) > self.max_variants:
                raise LexiconError(f"{word!r} has more than {self.max_variants} variants")
            total = sum(entry.prior for entry in prons)
            if abs(total - 1.0) > 1e-9:
                raise LexiconError(f"{word!r} priors sum to {total}, not 1")
            for entry in prons:
                unknown = set(entry.phones) - self.phoneme_inventory
                if unknown:
                    raise LexiconError(f"{word!r} uses unknown phonemes {sorted(unknown)}")

    def ordered_inventory(self) -> list[str]:
        return sorted(self.phoneme_inventory)


def _read_entries(path: str) -> dict[str, list[tuple[float, list[str], int]]]:
    """Read raw (prior, phones, lineno) entries keyed by lowercased word."""
    raw: dict[str, list[tuple[float, list[str], int]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                word, prior_s, phones_s = parts[0], "1.0", parts[1]
            elif len(parts) >= 3:
                word, prior_s, phones_s = parts[0], parts[1], parts[2]
            else:
                raise LexiconError(f"{path}:{lineno}: expected WORD<TAB>[prior<TAB>]phones")
            try:
                prior = float(prior_s)
            except ValueError:
                raise LexiconError(f"{path}:{lineno}: bad prior {prior_s!r}") from None
            if prior <= 0:
                raise LexiconError(f"{path}:{lineno}: prior must be positive")
            phones = phones_s.split()
            if not phones:
                raise LexiconError(f"{path}:{lineno}: empty pronunciation")
            raw.setdefault(word.lower(), []).append((prior, phones, lineno))
    return raw


def load_lexicon(
    main_file: str,
    supplement_file: str | None = None,
    use_priors: bool = False,
    max_variants: int = 6,
    inventory: set[str] | None = None,
) -> Lexicon:
    """Load and merge lexicon files into a validated Lexicon.

    The supplement plays the role of offline G2P output; main entries win on
    conflict. With use_priors off every variant of a word becomes equally
    likely; with it on, raw priors are renormalized per word. Words with more
    than max_variants entries keep the highest-prior ones, with a warning.
    If an inventory is given, unknown phonemes are a load error naming the
    line; otherwise the inventory is collected from the files. SIL is always
    injected.
    """
    raw = _read_entries(main_file)
    if supplement_file is not None:
        for word, entries in _read_entries(supplement_file).items():
            raw.setdefault(word, entries)

    inv = set(inventory) if inventory is not None else None
    lex = Lexicon(max_variants=max_variants)
    if inv is not None:
        lex.phoneme_inventory = inv | {SIL}

    for word, entries in raw.items():
        if inv is not None:
            for _, phones, lineno in entries:
                unknown = [p for p in phones if p not in lex.phoneme_inventory]
                if unknown:
                    raise LexiconError(
                        f"line {lineno}: {word!r} uses unknown phoneme {unknown[0]!r}"
                    )
        if len(entries) > max_variants:
            warnings.warn(
                f"{word!r}: keeping {max_variants} highest-prior of {len(entries)} variants"
            )
            entries = sorted(entries, key=lambda e: (-e[0], e[2]))[:max_variants]
        if use_priors:
            total = sum(prior for prior, _, _ in entries)
            prons = [PronEntry(phones, prior / total) for prior, phones, _ in entries]
        else:
            prons = [PronEntry(phones, 1.0 / len(entries)) for _, phones, _ in entries]
        lex.entries[word] = prons
        if inv is None:
            for entry in prons:
                lex.phoneme_inventory.update(entry.phones)

    lex.validate()
    return lex


def lookup(lex: Lexicon, word: str) -> list[PronEntry] | None:
    """Pronunciations for a normalized word, in file order; None when OOV."""
    return lex.entries.get(word)


def words_to_phoneme_expansions(
    words: list[str],
    lex: Lexicon,
    oov_policy: str = OOV_ERROR,
) -> list[list[PronEntry]]:
    """One pronunciation list per word; OOV handling per policy."""
    expansions = []
    for word in words:
        prons = lookup(lex, word)
        if prons is None:
            if oov_policy == OOV_ERROR:
                raise LexiconError(f"out-of-vocabulary word {word!r}")
            if oov_policy == OOV_SKIP:
                warnings.warn(f"skipping out-of-vocabulary word {word!r}")
                continue
            raise LexiconError(f"unknown OOV policy {oov_policy!r}")
        expansions.append(prons)
    return expansions
