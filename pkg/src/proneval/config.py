"""Pipeline configuration: one JSON file is the single source of truth.

All constants the feature definitions leave open (log floor, deletion cost,
softmax temperature) live here so experiments are reproducible without code
changes. Paths are resolved relative to the config file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import PipelineError
from .nbest import DROP_HYPOTHESIS, ROMANIZE_BASIC, NormalizationRules
from .scorer import MASK_FULL, MASK_RESTRICTED, ModelConfig


@dataclass
class PipelineConfig:
    language: str = "en"
    script_policy: str = ROMANIZE_BASIC
    target_script: str = "latin"
    char_map: dict[str, str] = field(default_factory=dict)
    lexicon_main: str | None = None
    lexicon_supplement: str | None = None
    use_priors: bool = False
    oov_policy: str = "error"
    max_variants: int = 6
    temperature: float = 1.0
    length_normalize: bool = False
    log_floor: float = -20.0
    deletion_cost: float = 0.95
    mask_mode: str = MASK_RESTRICTED
    frame_rate: float = 100.0
    stats_path: str | None = None
    punctuation: str | None = None
    number_map: str | None = None
    seed: int = 0
    model: ModelConfig | None = None

    def validate(self) -> None:
        if self.script_policy not in (ROMANIZE_BASIC, DROP_HYPOTHESIS):
            raise PipelineError(f"unknown script_policy {self.script_policy!r}")
        if self.oov_policy not in ("error", "skip_word"):
            raise PipelineError(f"unknown oov_policy {self.oov_policy!r}")
        if self.mask_mode not in (MASK_RESTRICTED, MASK_FULL):
            raise PipelineError(f"unknown mask_mode {self.mask_mode!r}")
        if self.temperature <= 0:
            raise PipelineError("temperature must be positive")
        if self.log_floor >= 0:
            raise PipelineError("log_floor must be negative")
        if not 0 < self.deletion_cost <= 2:
            raise PipelineError("deletion_cost must be in (0, 2]")
        if self.frame_rate <= 0:
            raise PipelineError("frame_rate must be positive")
        if self.max_variants < 1:
            raise PipelineError("max_variants must be at least 1")
        for label, path in (
            ("lexicon_main", self.lexicon_main),
            ("lexicon_supplement", self.lexicon_supplement),
            ("number_map", self.number_map),
        ):
            if path is not None and not os.path.exists(path):
                raise PipelineError(f"{label} file not found: {path}")

    def rules(self) -> NormalizationRules:
        number_words = None
        if self.number_map is not None:
            from .nbest import _load_number_map

            number_words = _load_number_map(self.number_map)
        return NormalizationRules(punctuation=self.punctuation, number_words=number_words)

    @classmethod
    def load(cls, path: str) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise PipelineError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise PipelineError(f"{path}: invalid JSON ({exc.msg})") from exc
        base = os.path.dirname(os.path.abspath(path))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise PipelineError(f"{path}: unknown config keys {sorted(unknown)}")
        if "model" in raw and raw["model"] is not None:
            raw["model"] = ModelConfig.from_dict(raw["model"])
        cfg = cls(**raw)
        for attr in ("lexicon_main", "lexicon_supplement", "stats_path", "number_map"):
            value = getattr(cfg, attr)
            if value is not None and not os.path.isabs(value):
                setattr(cfg, attr, os.path.join(base, value))
        cfg.validate()
        return cfg
