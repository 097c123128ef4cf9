"""Classic frame-synchronous pronunciation features.

Operates on an externally supplied per-frame log-posterior matrix and a
phone time alignment; this is the baseline feature path that needs a
frame-synchronous acoustic model, kept as a reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError
from .features import DurationStats


@dataclass
class PosteriorMatrix:
    """T x P matrix of per-frame log phoneme posteriors."""

    inventory: list[str]
    log_probs: np.ndarray
    frame_rate: float = 100.0

    def __post_init__(self) -> None:
        self.log_probs = np.asarray(self.log_probs, dtype=float)
        if self.log_probs.ndim != 2 or self.log_probs.shape[1] != len(self.inventory):
            raise AlignmentError("log_probs must be T x |inventory|")

    @property
    def n_frames(self) -> int:
        return self.log_probs.shape[0]

    def validate_rows(self, tol: float = 1e-6) -> None:
        """Check each row is a normalized distribution in the log domain."""
        row_max = self.log_probs.max(axis=1, keepdims=True)
        lse = row_max[:, 0] + np.log(np.exp(self.log_probs - row_max).sum(axis=1))
        bad = np.abs(lse) > tol
        if bad.any():
            t = int(np.argmax(bad))
            raise AlignmentError(f"frame {t}: log-probabilities sum to exp({lse[t]:.3g})")


@dataclass
class Segment:
    phone: str
    t_start: int
    t_end: int


@dataclass
class PhoneAlignment:
    segments: list[Segment]

    def validate(self, inventory: set[str] | None = None) -> None:
        prev_end = None
        for seg in self.segments:
            if seg.t_end < seg.t_start or seg.t_start < 0:
                raise AlignmentError(f"bad segment [{seg.t_start}, {seg.t_end}]")
            if prev_end is not None and seg.t_start <= prev_end:
                raise AlignmentError(f"overlapping segment at frame {seg.t_start}")
            prev_end = seg.t_end
            if inventory is not None and seg.phone not in inventory:
                raise AlignmentError(f"phone {seg.phone!r} outside inventory")


def phi(matrix: PosteriorMatrix, seg: Segment, rho: str) -> float:
    """Time-normalised log-posterior: the mean log probability of ``rho``
    over the segment's frames, inclusive of both endpoints."""
    if rho not in matrix.inventory:
        raise AlignmentError(f"phoneme {rho!r} outside inventory")
    return float(_phi_vector(matrix, seg)[matrix.inventory.index(rho)])


def _phi_vector(matrix: PosteriorMatrix, seg: Segment) -> np.ndarray:
    if seg.t_start < 0 or seg.t_end < seg.t_start or seg.t_end >= matrix.n_frames:
        raise AlignmentError(
            f"segment [{seg.t_start}, {seg.t_end}] outside matrix with {matrix.n_frames} frames"
        )
    return matrix.log_probs[seg.t_start : seg.t_end + 1].mean(axis=0)


@dataclass
class FramePhoneFeatures:
    gop: float
    gop_margin: float
    lpp: list[float]
    lpr: list[float]
    sr: float
    nd: float


def frame_features(
    matrix: PosteriorMatrix,
    align: PhoneAlignment,
    stats: DurationStats,
    strict: bool = True,
) -> list[FramePhoneFeatures]:
    """GOP, margin, posterior vectors and tempo per aligned canonical phone.

    The speaking-rate divisor clamps zero-length segments to one frame;
    normalized duration standardizes t_end - t_start with corpus stats.
    """
    if strict:
        matrix.validate_rows()
    align.validate(set(matrix.inventory))
    index_of = {p: i for i, p in enumerate(matrix.inventory)}
    rows = []
    for seg in align.segments:
        vec = _phi_vector(matrix, seg)
        ref = float(vec[index_of[seg.phone]])
        dur = seg.t_end - seg.t_start
        rows.append(
            FramePhoneFeatures(
                gop=ref,
                gop_margin=ref - float(vec.max()),
                lpp=[float(v) for v in vec],
                lpr=[ref - float(v) for v in vec],
                sr=1.0 / max(1, dur),
                nd=stats.nd(dur),
            )
        )
    return rows


def load_posterior_matrix(path: str) -> PosteriorMatrix:
    """Read the text format: a JSON header line, then one row of
    space-separated log-probabilities per frame."""
    import json

    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        rows = [
            [float(x) for x in line.split()]
            for line in f
            if line.strip()
        ]
    matrix = PosteriorMatrix(
        inventory=list(header["inventory"]),
        log_probs=np.array(rows, dtype=float),
        frame_rate=float(header.get("frame_rate", 100.0)),
    )
    if matrix.n_frames != int(header["frames"]):
        raise AlignmentError(f"{path}: header says {header['frames']} frames, file has {matrix.n_frames}")
    return matrix


def save_posterior_matrix(matrix: PosteriorMatrix, path: str) -> None:
    import json

    with open(path, "w", encoding="utf-8") as f:
        header = {
            "inventory": matrix.inventory,
            "frames": matrix.n_frames,
            "frame_rate": matrix.frame_rate,
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for row in matrix.log_probs:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_phone_alignment(path: str) -> PhoneAlignment:
    """Read one 'phone t_start t_end' segment per line."""
    segments = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise AlignmentError(f"{path}:{lineno}: expected 'phone t_start t_end'")
            segments.append(Segment(parts[0], int(parts[1]), int(parts[2])))
    align = PhoneAlignment(segments)
    align.validate()
    return align
