"""Exception types shared across the toolkit."""


class ProneValError(Exception):
    """Base class for all toolkit errors."""


class ParseError(ProneValError):
    """Malformed input record; message names the offending line."""


class NormalizationError(ProneValError):
    """Text normalization failed, e.g. a number outside the verbalizer range."""


class LexiconError(ProneValError):
    """Bad lexicon file or unresolvable word."""


class AlignmentError(ProneValError):
    """Invalid alignment input (symbol outside inventory, bad segment)."""


class ModelError(ProneValError):
    """Scorer configuration or shape problem."""


class PipelineError(ProneValError):
    """CLI-level failure: missing file, format violation, bad config."""
