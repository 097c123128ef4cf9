"""Export N-best records for every audio file in a directory.

One JSON record per line: utt_id, rank, text, log_score, and word spans as
frame indices at the declared frame rate. Unreadable audio files produce an
error record in a sidecar file and the job continues; only a model load
failure aborts the run. Output is sorted by utt_id, so file-level
parallelism upstream can never change the bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends import Candidate, ExportError, StubBackend, WhisperBackend

AUDIO_SUFFIXES = (".wav",)


def candidate_record(
    utt_id: str, rank: int, cand: Candidate, frame_rate: float
) -> dict:
    words = None
    if cand.words:
        words = []
        prev_end = 0
        for stamp in cand.words:
            t_start = max(prev_end, int(round(stamp.start * frame_rate)))
            t_end = max(t_start, int(round(stamp.end * frame_rate)) - 1)
            prev_end = t_end + 1
            words.append({"w": stamp.word, "t_start": t_start, "t_end": t_end})
    return {
        "utt_id": utt_id,
        "rank": rank,
        "text": cand.text,
        "log_score": cand.log_score,
        "words": words,
    }


def export_nbest(
    audio_dir: str,
    out_path: str,
    backend,
    language: str | None,
    beam_size: int,
    frame_rate: float,
    prompt: str | None = None,
) -> list[dict]:
    """Transcribe every clip under audio_dir; returns per-file error records."""
    clips = sorted(
        p for p in Path(audio_dir).iterdir() if p.suffix.lower() in AUDIO_SUFFIXES
    )
    if not clips:
        raise ExportError(f"no audio files under {audio_dir}")
    errors: list[dict] = []
    lines: list[str] = []
    for clip in clips:
        utt_id = clip.stem
        try:
            candidates = backend.transcribe(str(clip), language, beam_size, prompt)
        except ExportError as exc:
            errors.append({"utt_id": utt_id, "path": str(clip), "error": str(exc)})
            continue
        for rank, cand in enumerate(candidates):
            rec = candidate_record(utt_id, rank, cand, frame_rate)
            lines.append(json.dumps(rec, sort_keys=True) + "\n")
    with open(out_path, "w", encoding="utf-8") as f:
        f.writelines(lines)
    if errors:
        with open(out_path + ".errors.jsonl", "w", encoding="utf-8") as f:
            for rec in errors:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return errors


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asrexport",
        description="Batch beam-search transcription to line-delimited N-best records.",
    )
    parser.add_argument("--audio-dir", required=True)
    parser.add_argument("--lang", default=None, help="target language code")
    parser.add_argument("--beam", type=int, default=10)
    parser.add_argument("--out", required=True)
    parser.add_argument("--backend", choices=["whisper", "stub"], default="whisper")
    parser.add_argument("--model", default="large-v3", help="model identifier")
    parser.add_argument("--prompt", default=None, help="passthrough decoding prompt")
    parser.add_argument("--frame-rate", type=float, default=100.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.beam < 1:
        print("error: --beam must be at least 1", file=sys.stderr)
        return 2
    try:
        if args.backend == "whisper":
            backend = WhisperBackend(args.model)
        else:
            backend = StubBackend(args.model)
        errors = export_nbest(
            args.audio_dir,
            args.out,
            backend,
            args.lang,
            args.beam,
            args.frame_rate,
            args.prompt,
        )
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for rec in errors:
        print(f"warning: skipped {rec['path']}: {rec['error']}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
