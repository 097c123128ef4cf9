"""Sentence-level proficiency scorer combining per-phoneme and per-frame
features with masked cross-attention.

The phoneme sequence is the query side and determines the output length;
the frame sequence supplies keys and values, so no phoneme time alignment
is needed. Word time alignments can restrict each phoneme row to the
frames of its own word. Everything is plain numpy so the forward pass is
a pure function of (features, weights, mask) and can be differentiated
numerically at toy scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError

MASK_RESTRICTED = "restricted"
MASK_FULL = "full"

_FFN_MULT = 4
_LN_EPS = 1e-6


@dataclass
class ModelConfig:
    phoneme_feat_dim: int
    frame_feat_dim: int
    n_classes: int
    d_model: int = 24
    n_heads: int = 8
    n_decoder_layers: int = 1
    n_encoder_layers: int = 2
    seed: int = 0
    class_values: list[float] | None = None

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError("d_model must be divisible by n_heads")
        if self.n_classes < 2:
            raise ModelError("need at least 2 score classes")
        if self.class_values is None:
            self.class_values = [float(k) for k in range(self.n_classes)]
        elif len(self.class_values) != self.n_classes:
            raise ModelError("class_values length must equal n_classes")

    def to_dict(self) -> dict:
        return {
            "phoneme_feat_dim": self.phoneme_feat_dim,
            "frame_feat_dim": self.frame_feat_dim,
            "n_classes": self.n_classes,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_decoder_layers": self.n_decoder_layers,
            "n_encoder_layers": self.n_encoder_layers,
            "seed": self.seed,
            "class_values": self.class_values,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ModelConfig":
        return cls(**rec)


@dataclass
class AttentionMask:
    allowed: np.ndarray

    def __post_init__(self) -> None:
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.allowed.ndim != 2:
            raise ModelError("mask must be 2-D")
        if not self.allowed.any(axis=1).all():
            raise ModelError("every mask row needs at least one allowed frame")


@dataclass
class ScoreDistribution:
    probs: list[float]

    def __post_init__(self) -> None:
        if any(p < 0 for p in self.probs):
            raise ModelError("negative class probability")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ModelError("class probabilities must sum to 1")


def build_word_mask(
    phoneme_word_index: list[int],
    word_frame_spans: list[tuple[int, int] | None],
    n_frames: int,
    mode: str = MASK_RESTRICTED,
) -> AttentionMask:
    """Allow each phoneme row only the frames of its word (span inclusive).

    Words without a time span fall back to a full row; mode "full" allows
    everything.
    """
    n = len(phoneme_word_index)
    if mode == MASK_FULL:
        return AttentionMask(np.ones((n, n_frames), dtype=bool))
    if mode != MASK_RESTRICTED:
        raise ModelError(f"unknown mask mode {mode!r}")
    allowed = np.zeros((n, n_frames), dtype=bool)
    for row, wi in enumerate(phoneme_word_index):
        if wi < 0 or wi >= len(word_frame_spans):
            raise ModelError(f"phoneme row {row} maps to missing word {wi}")
        span = word_frame_spans[wi]
        if span is None:
            allowed[row, :] = True
            continue
        t_s, t_e = span
        if t_s < 0 or t_e < t_s or t_e >= n_frames:
            raise ModelError(f"word span [{t_s}, {t_e}] outside 0..{n_frames - 1}")
        allowed[row, t_s : t_e + 1] = True
    return AttentionMask(allowed)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(float)
    i = np.arange(0, dim, 2).astype(float)
    angles = pos / np.power(10000.0, i / dim)[None, :]
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim // 2])
    return pe


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def init_weights(config: ModelConfig) -> dict[str, np.ndarray]:
    """Deterministic Xavier-uniform initialization; biases and layer-norm
    offsets zero, layer-norm gains one."""
    rng = np.random.default_rng(config.seed)
    d = config.d_model
    inner = _FFN_MULT * d
    w: dict[str, np.ndarray] = {}

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        w[f"{name}.w"] = _xavier(rng, fan_in, fan_out, (fan_in, fan_out))
        w[f"{name}.b"] = np.zeros(fan_out)

    def layer_norm(name: str) -> None:
        w[f"{name}.g"] = np.ones(d)
        w[f"{name}.b"] = np.zeros(d)

    def attention(prefix: str) -> None:
        for mat, bias in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
            w[f"{prefix}.{mat}"] = _xavier(rng, d, d, (d, d))
            w[f"{prefix}.{bias}"] = np.zeros(d)

    def block(prefix: str) -> None:
        layer_norm(f"{prefix}.ln1")
        attention(f"{prefix}.attn")
        layer_norm(f"{prefix}.ln2")
        linear(f"{prefix}.ffn.fc1", d, inner)
        linear(f"{prefix}.ffn.fc2", inner, d)

    linear("phoneme_proj", config.phoneme_feat_dim, d)
    linear("frame_proj", config.frame_feat_dim, d)
    for i in range(config.n_decoder_layers):
        block(f"dec{i}")
    for i in range(config.n_encoder_layers):
        block(f"enc{i}")
    layer_norm("final_ln")
    w["pool.v"] = _xavier(rng, d, 1, (d,))
    linear("head.fc1", d, d)
    linear("head.fc2", d, config.n_classes)
    return w


def param_count(weights: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in weights.values()))


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * g + b


def _softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _multi_head_attention(
    q_in: np.ndarray,
    kv_in: np.ndarray,
    weights: dict[str, np.ndarray],
    prefix: str,
    n_heads: int,
    allowed: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (context, attention) with attention shaped (heads, q, kv)."""
    d = q_in.shape[1]
    head_dim = d // n_heads
    q = (q_in @ weights[f"{prefix}.wq"] + weights[f"{prefix}.bq"]).reshape(-1, n_heads, head_dim)
    k = (kv_in @ weights[f"{prefix}.wk"] + weights[f"{prefix}.bk"]).reshape(-1, n_heads, head_dim)
    v = (kv_in @ weights[f"{prefix}.wv"] + weights[f"{prefix}.bv"]).reshape(-1, n_heads, head_dim)
    logits = np.einsum("qhd,khd->hqk", q, k) / math.sqrt(head_dim)
    if allowed is not None:
        logits = np.where(allowed[None, :, :], logits, -np.inf)
    attn = _softmax(logits)
    ctx = np.einsum("hqk,khd->qhd", attn, v).reshape(-1, d)
    return ctx @ weights[f"{prefix}.wo"] + weights[f"{prefix}.bo"], attn


def _ffn(x: np.ndarray, weights: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    hidden = np.maximum(x @ weights[f"{prefix}.fc1.w"] + weights[f"{prefix}.fc1.b"], 0.0)
    return hidden @ weights[f"{prefix}.fc2.w"] + weights[f"{prefix}.fc2.b"]


def forward(
    phoneme_feats: np.ndarray,
    frame_feats: np.ndarray,
    weights: dict[str, np.ndarray],
    mask: AttentionMask,
    config: ModelConfig,
    return_details: bool = False,
):
    """Score distribution for one utterance.

    Pre-norm blocks throughout: a cross-attention decoder stack (queries =
    phonemes, keys/values = frames, disallowed logits at -inf), then
    self-attention encoder layers over the phoneme sequence, single-headed
    attention pooling, and a ReLU head with softmax output. Positional
    encoding goes on the phoneme side only, so frames inside a word window
    are order-free.
    """
    phoneme_feats = np.asarray(phoneme_feats, dtype=float)
    frame_feats = np.asarray(frame_feats, dtype=float)
    if phoneme_feats.ndim != 2 or phoneme_feats.shape[1] != config.phoneme_feat_dim:
        raise ModelError(f"phoneme features must be n x {config.phoneme_feat_dim}")
    if frame_feats.ndim != 2 or frame_feats.shape[1] != config.frame_feat_dim:
        raise ModelError(f"frame features must be T x {config.frame_feat_dim}")
    n, t = phoneme_feats.shape[0], frame_feats.shape[0]
    if mask.allowed.shape != (n, t):
        raise ModelError(f"mask shape {mask.allowed.shape} != ({n}, {t})")

    x = phoneme_feats @ weights["phoneme_proj.w"] + weights["phoneme_proj.b"]
    kv = frame_feats @ weights["frame_proj.w"] + weights["frame_proj.b"]
    pe = sinusoidal_encoding(n, config.d_model)
    x = x + pe

    cross_attn = None
    for i in range(config.n_decoder_layers):
        prefix = f"dec{i}"
        h = _layer_norm(x, weights[f"{prefix}.ln1.g"], weights[f"{prefix}.ln1.b"])
        ctx, cross_attn = _multi_head_attention(
            h, kv, weights, f"{prefix}.attn", config.n_heads, mask.allowed
        )
        x = x + ctx
        h = _layer_norm(x, weights[f"{prefix}.ln2.g"], weights[f"{prefix}.ln2.b"])
        x = x + _ffn(h, weights, f"{prefix}.ffn")
    decoder_out = x.copy()

    x = x + pe
    for i in range(config.n_encoder_layers):
        prefix = f"enc{i}"
        h = _layer_norm(x, weights[f"{prefix}.ln1.g"], weights[f"{prefix}.ln1.b"])
        sa, _ = _multi_head_attention(h, h, weights, f"{prefix}.attn", config.n_heads, None)
        x = x + sa
        h = _layer_norm(x, weights[f"{prefix}.ln2.g"], weights[f"{prefix}.ln2.b"])
        x = x + _ffn(h, weights, f"{prefix}.ffn")

    x = _layer_norm(x, weights["final_ln.g"], weights["final_ln.b"])
    pool_attn = _softmax(x @ weights["pool.v"])
    pooled = pool_attn @ x
    hidden = np.maximum(pooled @ weights["head.fc1.w"] + weights["head.fc1.b"], 0.0)
    logits = hidden @ weights["head.fc2.w"] + weights["head.fc2.b"]
    probs = _softmax(logits)
    dist = ScoreDistribution([float(p) for p in probs])
    if not return_details:
        return dist
    details = {
        "decoder_out": decoder_out,
        "cross_attention": cross_attn,
        "pool_attention": pool_attn,
    }
    return dist, details


def expected_score(dist: ScoreDistribution, class_values: list[float]) -> float:
    if len(class_values) != len(dist.probs):
        raise ModelError("class_values length must match the distribution")
    return float(sum(p * v for p, v in zip(dist.probs, class_values)))


def cross_entropy(dist: ScoreDistribution, target_class: int) -> float:
    p = dist.probs[target_class]
    return -math.log(max(p, 1e-300))


def round_half_away(x: float) -> float:
    """Round to the closest integer, halves away from zero."""
    return math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)


@dataclass
class MetricResult:
    pcc: float | None
    mse: float


def rounded_pcc_mse(hyp: list[float], ref: list[float]) -> MetricResult:
    """Round both score vectors to integers, then Pearson correlation and
    mean squared error. A constant rounded vector leaves the correlation
    undefined (None); the error is still returned."""
    if len(hyp) != len(ref) or len(hyp) < 2:
        raise ValueError("need two equal-length vectors of at least 2 scores")
    h = [round_half_away(x) for x in hyp]
    r = [round_half_away(x) for x in ref]
    mse = sum((a - b) ** 2 for a, b in zip(h, r)) / len(h)
    mh = sum(h) / len(h)
    mr = sum(r) / len(r)
    cov = sum((a - mh) * (b - mr) for a, b in zip(h, r))
    var_h = sum((a - mh) ** 2 for a in h)
    var_r = sum((b - mr) ** 2 for b in r)
    if var_h == 0 or var_r == 0:
        return MetricResult(pcc=None, mse=mse)
    return MetricResult(pcc=cov / math.sqrt(var_h * var_r), mse=mse)


def numerical_gradient(
    loss_fn,
    weights: dict[str, np.ndarray],
    epsilon: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of loss_fn over every parameter."""
    base = float(loss_fn(weights))
    if not math.isfinite(base):
        raise ModelError("loss is not finite at the given weights")
    grads: dict[str, np.ndarray] = {}
    for name, tensor in weights.items():
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        grad_flat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = float(loss_fn(weights))
            flat[idx] = orig - epsilon
            down = float(loss_fn(weights))
            flat[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ModelError(f"loss is not finite while perturbing {name}")
            grad_flat[idx] = (up - down) / (2.0 * epsilon)
        grads[name] = grad
    return grads


def save_weights(path: str, weights: dict[str, np.ndarray], config: ModelConfig) -> None:
    """Self-describing weights record: named tensors with shapes."""
    record = {
        "config": config.to_dict(),
        "tensors": {
            name: {"shape": list(tensor.shape), "data": [float(v) for v in tensor.reshape(-1)]}
            for name, tensor in sorted(weights.items())
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, sort_keys=True)
        f.write("\n")


def load_weights(path: str) -> tuple[dict[str, np.ndarray], ModelConfig]:
    with open(path, encoding="utf-8") as f:
        record = json.load(f)
    weights = {
        name: np.array(entry["data"], dtype=float).reshape(entry["shape"])
        for name, entry in record["tensors"].items()
    }
    return weights, ModelConfig.from_dict(record["config"])
