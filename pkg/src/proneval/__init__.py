"""Pronunciation-evaluation features from frame-asynchronous ASR output.

The pipeline turns an N-best list into word- and phoneme-level confusion
networks, reads goodness-of-pronunciation features off them against the
canonical transcript, and scores utterances with a masked cross-attention
model, all without any phoneme time alignment.
"""

from .cn import (
    EPS,
    ConfusionNetwork,
    ConfusionSlot,
    WeightedSequence,
    build_word_cn,
    cn_decode,
    cn_from_record,
    cn_to_record,
    expand_to_phoneme_cn,
    wer,
)
from .config import PipelineConfig
from .errors import (
    AlignmentError,
    LexiconError,
    ModelError,
    NormalizationError,
    ParseError,
    PipelineError,
    ProneValError,
)
from .features import (
    CanonicalAlignment,
    DurationStats,
    FeatureMatrix,
    align_cn_to_canonical,
    broadcast_word_features,
    compute_cn_features,
    compute_cn_wgop,
    fit_duration_stats,
    word_sr_nd,
)
from .frame_gop import PhoneAlignment, PosteriorMatrix, Segment, frame_features, phi
from .lexicon import SIL, Lexicon, PronEntry, load_lexicon, lookup, words_to_phoneme_expansions
from .nbest import (
    Hypothesis,
    NBestList,
    NormalizationRules,
    RawHypothesis,
    WordTiming,
    apply_script_policy,
    dedupe_and_posteriors,
    normalize_text,
    parse_nbest,
)
from .scorer import (
    AttentionMask,
    ModelConfig,
    ScoreDistribution,
    build_word_mask,
    expected_score,
    forward,
    init_weights,
    numerical_gradient,
    rounded_pcc_mse,
)

__version__ = "0.1.0"
