"""Transcription backends.

WhisperBackend wraps the openai-whisper package when it is installed and a
model checkpoint is available locally. StubBackend synthesizes hypotheses
deterministically from the audio bytes; it exists so the export pipeline,
its wire format, and its consumers can be exercised end to end without a
model download.
"""

from __future__ import annotations

import random
import wave
import zlib
from dataclasses import dataclass
from pathlib import Path


class ExportError(Exception):
    """Unrecoverable exporter failure (model load, bad arguments)."""


@dataclass
class WordStamp:
    word: str
    start: float  # seconds
    end: float


@dataclass
class Candidate:
    text: str
    log_score: float
    words: list[WordStamp] | None = None


class WhisperBackend:
    """Real-model backend; requires openai-whisper and a local checkpoint.

    Whisper's transcribe API returns the single best hypothesis of the beam
    with word timestamps, so this backend emits one candidate per utterance
    regardless of beam size; the beam still widens the search.
    """

    def __init__(self, model_name: str = "large-v3"):
        try:
            import whisper
        except ImportError as exc:
            raise ExportError("the openai-whisper package is not installed") from exc
        try:
            self._model = whisper.load_model(model_name)
        except Exception as exc:
            raise ExportError(f"cannot load model {model_name!r}: {exc}") from exc

    def transcribe(
        self,
        audio_path: str,
        language: str | None,
        beam_size: int,
        prompt: str | None = None,
    ) -> list[Candidate]:
        result = self._model.transcribe(
            audio_path,
            language=language,
            beam_size=beam_size if beam_size > 1 else None,
            word_timestamps=True,
            initial_prompt=prompt,
        )
        words = []
        log_score = 0.0
        for segment in result.get("segments", []):
            n_tokens = max(1, len(segment.get("tokens", [])))
            log_score += segment.get("avg_logprob", 0.0) * n_tokens
            for w in segment.get("words", []):
                words.append(WordStamp(w["word"].strip(), w["start"], w["end"]))
        return [Candidate(result["text"].strip(), log_score, words or None)]


_VOCAB = [
    "amber", "basil", "cedar", "delta", "ember", "fable",
    "gable", "harbor", "ivory", "juniper", "kernel", "lantern",
]


class StubBackend:
    """Deterministic offline backend.

    The "truth" word sequence is seeded from the audio bytes; candidate k
    substitutes words at a fixed rate, scores decay with rank, and word
    stamps split the clip evenly. Candidates with repeated raw text are
    dropped, so an utterance yields up to beam_size unique hypotheses and
    beam size 1 is exactly the greedy output.
    """

    WORDS_PER_SECOND = 2.0
    SUBSTITUTION_RATE = 0.3

    def __init__(self, model_name: str = "stub"):
        self.model_name = model_name

    def transcribe(
        self,
        audio_path: str,
        language: str | None,
        beam_size: int,
        prompt: str | None = None,
    ) -> list[Candidate]:
        duration = _wav_duration(audio_path)
        rng = random.Random(zlib.crc32(Path(audio_path).read_bytes()))
        n_words = max(1, round(duration * self.WORDS_PER_SECOND))
        truth = [rng.choice(_VOCAB) for _ in range(n_words)]
        candidates: list[Candidate] = []
        seen_texts: set[str] = set()
        for k in range(beam_size):
            if k == 0:
                words = list(truth)
            else:
                words = [
                    rng.choice([v for v in _VOCAB if v != w])
                    if rng.random() < self.SUBSTITUTION_RATE
                    else w
                    for w in truth
                ]
            text = " ".join(words).capitalize() + "."
            if text in seen_texts:
                continue
            seen_texts.add(text)
            stamps = _even_stamps(words, duration)
            candidates.append(Candidate(text, -0.8 * len(candidates) - 0.1, stamps))
        return candidates


def _wav_duration(path: str) -> float:
    try:
        with wave.open(path, "rb") as wav:
            rate = wav.getframerate()
            if rate <= 0:
                raise ExportError(f"{path}: bad sample rate")
            return wav.getnframes() / rate
    except (wave.Error, EOFError, OSError) as exc:
        raise ExportError(f"cannot read audio {path}: {exc}") from exc


def _even_stamps(words: list[str], duration: float) -> list[WordStamp]:
    n = len(words)
    return [
        WordStamp(w, duration * i / n, duration * (i + 1) / n)
        for i, w in enumerate(words)
    ]
