"""Attention-based population encoder.

Turns one optimization step's population (positions X, objectives y) into
an h-dimensional feature vector per candidate plus a pooled population
feature.  The pipeline is:

1. min-max normalization of positions (against the search box) and of
   objectives (against the step's extrema), giving a d x m x 2 tensor;
2. linear embedding to d x m x h;
3. per-dimension self-attention across candidates, transpose, sinusoidal
   positional encoding over dimensions, per-candidate self-attention across
   dimensions (repeated for stacked layers);
4. mean pooling over dimensions (per-candidate features) and over
   candidates (population feature).

The forward pass is a pure function of the flat weight vector and the
observation; there is no randomness and no autodiff.  All weights live in a
flat vector with a fixed, documented layout so that evolution strategies
can optimize them directly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CodecError, ConfigError, IntegrityError

LN_EPS = 1e-5

CHECKPOINT_FORMAT = "popscape-analyzer"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AnalyzerConfig:
    hidden_dim: int = 16
    num_heads: int = 1
    num_layers: int = 1
    ff_inner_dim: Optional[int] = None

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.num_heads <= 0 or self.num_layers <= 0:
            raise ConfigError("analyzer dimensions must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.hidden_dim % 2 != 0:
            raise ConfigError("hidden_dim must be even for sin/cos positional encoding")
        if self.ff_inner_dim is None:
            object.__setattr__(self, "ff_inner_dim", self.hidden_dim)

    def to_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "num_layers": self.num_layers,
            "ff_inner_dim": self.ff_inner_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyzerConfig":
        return cls(**d)


@dataclass(frozen=True)
class Observation:
    """One step's population: positions, objectives, and search bounds."""

    X: np.ndarray  # (m, d)
    y: np.ndarray  # (m,)
    lb: np.ndarray  # (d,)
    ub: np.ndarray  # (d,)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        d = X.shape[1]
        lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (d,)).copy()
        ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (d,)).copy()
        if X.shape[0] < 2:
            raise ConfigError("observation needs at least 2 candidates")
        if X.shape[0] != y.shape[0]:
            raise ConfigError("X and y disagree on population size")
        if np.any(lb >= ub):
            raise ConfigError("bounds must satisfy lb < ub in every dimension")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FeatureSet:
    """Per-candidate (m x h) and pooled population (h) features."""

    per_candidate: np.ndarray
    population: np.ndarray


@dataclass(frozen=True)
class ParamVector:
    """Flat weight vector plus the (name, shape) layout it was packed with."""

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=float).reshape(-1)
        )
        expected = sum(int(np.prod(s)) for _, s in self.layout)
        if self.values.shape[0] != expected:
            raise CodecError(
                f"vector length {self.values.shape[0]} does not match layout "
                f"total {expected}"
            )


@dataclass
class AttnBlockParams:
    """One transformer block: self-attention + feed-forward, both with LayerNorm.

    Q/K/V/O projections carry no bias; the feed-forward layers do.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ff1_w: np.ndarray
    ff1_b: np.ndarray
    ff2_w: np.ndarray
    ff2_b: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class EncoderLayer:
    cross_solution: AttnBlockParams
    cross_dimension: AttnBlockParams


@dataclass
class PopulationEncoder:
    """Decoded network; immutable by convention once built."""

    config: AnalyzerConfig
    w_emb: np.ndarray
    layers: list[EncoderLayer] = field(default_factory=list)

    def features(self, obs: Observation) -> FeatureSet:
        return ts_attn_forward(embed(pie_normalize(obs), self.w_emb), self)


def pie_normalize(obs: Observation) -> np.ndarray:
    """Two min-max normalizations, reorganized as a d x m x 2 tensor.

    Channel 0 is the position normalized against the search box, channel 1
    the objective normalized against the step's extrema.  A degenerate step
    (all objectives equal) maps every objective channel to the neutral 0.5.
    """
    xn = (obs.X - obs.lb) / (obs.ub - obs.lb)  # (m, d)
    y_min, y_max = float(np.min(obs.y)), float(np.max(obs.y))
    if y_max == y_min:
        yn = np.full(obs.size, 0.5)
    else:
        yn = (obs.y - y_min) / (y_max - y_min)
    out = np.empty((obs.dimension, obs.size, 2))
    out[:, :, 0] = xn.T
    out[:, :, 1] = yn[None, :]
    return out


def embed(normalized: np.ndarray, w_emb: np.ndarray) -> np.ndarray:
    """Linear embedding (no bias): (d, m, 2) x (2, h) -> (d, m, h)."""
    return normalized @ w_emb


def positional_encoding(length: int, h: int) -> np.ndarray:
    """Sinusoidal encoding: PE[p, 2i] = sin(p / 10000^(2i/h)), PE[p, 2i+1] = cos."""
    if h % 2 != 0:
        raise ConfigError("positional encoding requires an even feature width")
    pos = np.arange(length)[:, None]
    rate = 10000.0 ** (2.0 * np.arange(h // 2) / h)[None, :]
    pe = np.empty((length, h))
    pe[:, 0::2] = np.sin(pos / rate)
    pe[:, 1::2] = np.cos(pos / rate)
    return pe


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gain + bias


def self_attention(x: np.ndarray, p: AttnBlockParams, num_heads: int) -> np.ndarray:
    """Multi-head self-attention over the second-to-last axis; batched."""
    *batch, L, h = x.shape
    dk = h // num_heads

    def heads(t):
        return t.reshape(*batch, L, num_heads, dk).swapaxes(-3, -2)

    q, k, v = heads(x @ p.wq), heads(x @ p.wk), heads(x @ p.wv)
    scores = q @ k.swapaxes(-1, -2) / np.sqrt(dk)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = (weights @ v).swapaxes(-3, -2).reshape(*batch, L, h)
    return out @ p.wo


def attn_block(x: np.ndarray, p: AttnBlockParams, num_heads: int = 1) -> np.ndarray:
    """LN(x + MHSA(x)) -> FF2(ReLU(FF1(.))) -> LN(residual sum)."""
    g = layer_norm(x + self_attention(x, p, num_heads), p.ln1_gain, p.ln1_bias)
    hidden = np.maximum(g @ p.ff1_w + p.ff1_b, 0.0)
    return layer_norm(g + (hidden @ p.ff2_w + p.ff2_b), p.ln2_gain, p.ln2_bias)


def ts_attn_forward(E: np.ndarray, net: PopulationEncoder) -> FeatureSet:
    """Two-stage attention over a (d, m, h) embedding, then mean pooling.

    Stage one attends across candidates within each dimension slice (no
    positional encoding, so candidate order is immaterial).  Stage two
    transposes to (m, d, h), adds the positional encoding over dimensions,
    and attends across dimensions within each candidate.  Stacked layers
    repeat the whole cycle, re-adding the positional encoding each time.
    """
    d, m, h = E.shape
    heads = net.config.num_heads
    pe = positional_encoding(d, h)
    t = E
    for layer in net.layers:
        t = attn_block(t, layer.cross_solution, heads)  # (d, m, h), attends over m
        t = t.transpose(1, 0, 2) + pe[None, :, :]  # (m, d, h)
        t = attn_block(t, layer.cross_dimension, heads)  # attends over d
        t = t.transpose(1, 0, 2)  # back to (d, m, h)
    per_candidate = t.mean(axis=0)  # (m, h)
    population = per_candidate.mean(axis=0)  # (h,)
    return FeatureSet(per_candidate=per_candidate, population=population)


# --- flat parameter codec -------------------------------------------------

_BLOCK_TENSORS = (
    ("wq", lambda h, f: (h, h)),
    ("wk", lambda h, f: (h, h)),
    ("wv", lambda h, f: (h, h)),
    ("wo", lambda h, f: (h, h)),
    ("ln1_gain", lambda h, f: (h,)),
    ("ln1_bias", lambda h, f: (h,)),
    ("ff1_w", lambda h, f: (h, f)),
    ("ff1_b", lambda h, f: (f,)),
    ("ff2_w", lambda h, f: (f, h)),
    ("ff2_b", lambda h, f: (h,)),
    ("ln2_gain", lambda h, f: (h,)),
    ("ln2_bias", lambda h, f: (h,)),
)


def layout(config: AnalyzerConfig) -> tuple[tuple[str, tuple[int, ...]], ...]:
    """Fixed packing order: embedding, then per layer the cross-solution
    block followed by the cross-dimension block, tensors in `_BLOCK_TENSORS`
    order."""
    h, f = config.hidden_dim, config.ff_inner_dim
    entries: list[tuple[str, tuple[int, ...]]] = [("w_emb", (2, h))]
    for i in range(config.num_layers):
        for stage in ("cross_solution", "cross_dimension"):
            for name, shape_fn in _BLOCK_TENSORS:
                entries.append((f"layer{i}.{stage}.{name}", shape_fn(h, f)))
    return tuple(entries)


def param_count(config: AnalyzerConfig) -> int:
    """Total learnable parameters; 2h + 2l(6h^2 + 6h) when ff_inner_dim == h."""
    return sum(int(np.prod(s)) for _, s in layout(config))


def encode_params(net: PopulationEncoder) -> ParamVector:
    lay = layout(net.config)
    parts = []
    tensors = _tensor_map(net)
    for name, shape in lay:
        t = tensors[name]
        if t.shape != shape:
            raise CodecError(f"tensor {name} has shape {t.shape}, layout says {shape}")
        parts.append(np.asarray(t, dtype=float).ravel())
    return ParamVector(values=np.concatenate(parts), layout=lay)


def decode_params(vector, config: AnalyzerConfig) -> PopulationEncoder:
    """Rebuild the network from a flat vector; exact inverse of encode_params."""
    lay = layout(config)
    values = vector.values if isinstance(vector, ParamVector) else np.asarray(vector, dtype=float).reshape(-1)
    expected = sum(int(np.prod(s)) for _, s in lay)
    if values.shape[0] != expected:
        raise CodecError(
            f"parameter vector has length {values.shape[0]}, expected {expected} "
            f"for config {config.to_dict()}"
        )
    tensors: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in lay:
        n = int(np.prod(shape))
        tensors[name] = values[pos : pos + n].reshape(shape).copy()
        pos += n
    net = PopulationEncoder(config=config, w_emb=tensors["w_emb"])
    for i in range(config.num_layers):
        blocks = {}
        for stage in ("cross_solution", "cross_dimension"):
            kwargs = {
                name: tensors[f"layer{i}.{stage}.{name}"]
                for name, _ in _BLOCK_TENSORS
            }
            blocks[stage] = AttnBlockParams(**kwargs)
        net.layers.append(EncoderLayer(**blocks))
    return net


def _tensor_map(net: PopulationEncoder) -> dict[str, np.ndarray]:
    tensors = {"w_emb": net.w_emb}
    for i, layer in enumerate(net.layers):
        for stage in ("cross_solution", "cross_dimension"):
            block = getattr(layer, stage)
            for name, _ in _BLOCK_TENSORS:
                tensors[f"layer{i}.{stage}.{name}"] = getattr(block, name)
    return tensors


# --- checkpoint container ---------------------------------------------------


def _checkpoint_payload(
    config: AnalyzerConfig, theta: np.ndarray, provenance: dict
) -> dict:
    lay = layout(config)
    theta = np.ascontiguousarray(np.asarray(theta, dtype="<f8").reshape(-1))
    expected = sum(int(np.prod(s)) for _, s in lay)
    if theta.shape[0] != expected:
        raise CodecError(
            f"theta length {theta.shape[0]} does not match layout total {expected}"
        )
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "layout": [[name, list(shape)] for name, shape in lay],
        "param_count": expected,
        "dtype": "<f8",
        "theta_b64": base64.b64encode(theta.tobytes()).decode("ascii"),
        "provenance": dict(provenance),
    }


def save_checkpoint(
    path, config: AnalyzerConfig, theta: np.ndarray, provenance: Optional[dict] = None
) -> None:
    payload = _checkpoint_payload(config, theta, provenance or {})
    canonical = json.dumps(payload, sort_keys=True).encode()
    payload["sha256"] = hashlib.sha256(canonical).hexdigest()
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[AnalyzerConfig, np.ndarray, dict]:
    """Read a checkpoint; bit-exact round trip of theta, verified by checksum."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path} is not an analyzer checkpoint")
    stored = payload.pop("sha256", None)
    canonical = json.dumps(payload, sort_keys=True).encode()
    if stored != hashlib.sha256(canonical).hexdigest():
        raise IntegrityError(f"checkpoint {path} failed its integrity check")
    config = AnalyzerConfig.from_dict(payload["config"])
    theta = np.frombuffer(
        base64.b64decode(payload["theta_b64"]), dtype="<f8"
    ).astype(float, copy=True)
    if theta.shape[0] != payload["param_count"]:
        raise IntegrityError(f"checkpoint {path} has a truncated parameter vector")
    return config, theta, payload.get("provenance", {})
