"""Batch transcription exporter.

Drives a multilingual ASR model with beam search and writes one JSON record
per hypothesis: utt_id, rank, text, log_score and word-level frame spans.
The emitted text is raw and unnormalized; all text normalization belongs to
the consumer so language rules stay in one place.
"""

from .backends import Candidate, ExportError, StubBackend, WhisperBackend, WordStamp

__version__ = "0.1.0"
