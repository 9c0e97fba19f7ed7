"""Decoder-only Transformer: configuration, parameters, forward pass, loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from ..slottok import VOCAB_SIZE


class ConfigError(ValueError):
    pass


class BadToken(ValueError):
    pass


class TooLong(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    """Loss or gradients went NaN/Inf; ``last_good`` holds the last finite params."""

    def __init__(self, message: str, last_good: "ModelParams | None" = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class ModelConfig:
    context_len: int = 1024
    vocab: int = VOCAB_SIZE
    embed_dim: int = 8
    n_layers: int = 3
    n_heads: int = 8
    feedforward_dim: int = 32
    activation: str = "gelu"
    dropout: float = 0.0
    tie_embeddings: bool = True

    def validate(self) -> None:
        for name in ("context_len", "vocab", "embed_dim", "n_layers", "n_heads",
                     "feedforward_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by "
                              f"n_heads {self.n_heads}")
        if self.activation != "gelu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in canonical (serialization) order."""
    c, f = cfg.embed_dim, cfg.feedforward_dim
    shapes = {"wte": (cfg.vocab, c), "wpe": (cfg.context_len, c)}
    for i in range(cfg.n_layers):
        p = f"h{i}."
        shapes.update({
            p + "ln1.g": (c,), p + "ln1.b": (c,),
            p + "attn.w": (c, 3 * c), p + "attn.b": (3 * c,),
            p + "proj.w": (c, c), p + "proj.b": (c,),
            p + "ln2.g": (c,), p + "ln2.b": (c,),
            p + "fc.w": (c, f), p + "fc.b": (f,),
            p + "fc_out.w": (f, c), p + "fc_out.b": (c,),
        })
    shapes["lnf.g"] = (c,)
    shapes["lnf.b"] = (c,)
    if not cfg.tie_embeddings:
        shapes["head.w"] = (c, cfg.vocab)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def count(self, include_position: bool = False) -> int:
        """Trainable parameter count; position embeddings excluded by default."""
        return sum(a.size for n, a in self.tensors.items() if include_position or n != "wpe")

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """N(0, 0.02) weights and embeddings, zero biases, unit norm gains."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf == "b":
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        tensors[name] = arr.astype(dtype)
    return ModelParams(cfg, tensors)


def check_tokens(cfg: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.shape[-1] < 1:
        raise TooLong("need at least one token")
    if tokens.shape[-1] > cfg.context_len:
        raise TooLong(f"{tokens.shape[-1]} tokens exceed context length {cfg.context_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise BadToken(f"token ids must lie in [0, {cfg.vocab})")
    return tokens.astype(np.int64)


def _graph(params: ModelParams, leaves: dict[str, ad.Tensor], idx: np.ndarray,
           rng: np.random.Generator | None = None) -> ad.Tensor:
    cfg = params.config
    B, T = idx.shape
    H, D = cfg.n_heads, cfg.head_dim
    drop = cfg.dropout if rng is not None else 0.0

    x = ad.embedding(leaves["wte"], idx) + ad.embedding(leaves["wpe"], np.arange(T))
    x = ad.dropout(x, drop, rng)
    for i in range(cfg.n_layers):
        p = f"h{i}."
        h = ad.layer_norm(x, leaves[p + "ln1.g"], leaves[p + "ln1.b"])
        qkv = h @ leaves[p + "attn.w"] + leaves[p + "attn.b"]
        q, k, v = (ad.transpose(ad.reshape(t, (B, T, H, D)), (0, 2, 1, 3))
                   for t in ad.split_last(qkv, 3))
        att = ad.causal_attention(q, k, v, drop, rng)
        y = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (B, T, cfg.embed_dim))
        y = y @ leaves[p + "proj.w"] + leaves[p + "proj.b"]
        x = x + ad.dropout(y, drop, rng)
        h = ad.layer_norm(x, leaves[p + "ln2.g"], leaves[p + "ln2.b"])
        h = ad.gelu(h @ leaves[p + "fc.w"] + leaves[p + "fc.b"])
        h = h @ leaves[p + "fc_out.w"] + leaves[p + "fc_out.b"]
        x = x + ad.dropout(h, drop, rng)
    x = ad.layer_norm(x, leaves["lnf.g"], leaves["lnf.b"])
    if cfg.tie_embeddings:
        return x @ ad.transpose(leaves["wte"], (1, 0))
    return x @ leaves["head.w"]


def forward(params: ModelParams, tokens) -> np.ndarray:
    """Next-token logits for every position: ``[len, vocab]`` (or ``[B, len, vocab]``)."""
    arr = np.asarray(tokens)
    idx = check_tokens(params.config, arr)
    leaves = {k: ad.Tensor(v) for k, v in params.tensors.items()}
    logits = _graph(params, leaves, idx).data
    return logits[0] if arr.ndim == 1 else logits


def loss_and_grads(params: ModelParams, inputs, targets,
                   rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean next-token cross-entropy and its gradient for every parameter."""
    idx = check_tokens(params.config, inputs)
    tgt = np.asarray(targets).reshape(idx.shape)
    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in params.tensors.items()}
    loss = ad.cross_entropy(_graph(params, leaves, idx, rng), tgt)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss {value}")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in leaves.items()}
    return value, grads


def loss_only(params: ModelParams, inputs, targets) -> float:
    """Mean next-token cross-entropy without building gradients."""
    idx = check_tokens(params.config, inputs)
    tgt = np.asarray(targets).reshape(idx.shape)
    leaves = {k: ad.Tensor(v) for k, v in params.tensors.items()}
    return float(ad.cross_entropy(_graph(params, leaves, idx), tgt).data)


# --------------------------------------------------------------------------
# incremental decoding

class IncrementalDecoder:
    """Key/value cached decoding for one stream.

    ``prefill`` runs the prompt once; ``step`` appends one token and returns the
    logits for the following position. When the stream outgrows the context
    window the cache is rebuilt from the most recent ``context_len`` tokens.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.cfg = params.config
        self.tokens: list[int] = []
        self._k: list[np.ndarray] = []
        self._v: list[np.ndarray] = []

    def _run(self, new: np.ndarray, start: int) -> np.ndarray:
        cfg, P = self.cfg, self.params.tensors
        H, D, C = cfg.n_heads, cfg.head_dim, cfg.embed_dim
        n = len(new)
        x = P["wte"][new] + P["wpe"][start:start + n]
        for i in range(cfg.n_layers):
            p = f"h{i}."
            h, _, _ = ad.layer_norm_raw(x, P[p + "ln1.g"], P[p + "ln1.b"])
            qkv = h @ P[p + "attn.w"] + P[p + "attn.b"]
            q, k, v = (t.reshape(n, H, D).transpose(1, 0, 2) for t in np.split(qkv, 3, axis=-1))
            if start:
                k = np.concatenate([self._k[i], k], axis=1)
                v = np.concatenate([self._v[i], v], axis=1)
            if i < len(self._k):
                self._k[i], self._v[i] = k, v
            else:
                self._k.append(k)
                self._v.append(v)
            scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(D))
            att = ad.causal_softmax_raw(scores)
            y = (att @ v).transpose(1, 0, 2).reshape(n, C)
            x = x + (y @ P[p + "proj.w"] + P[p + "proj.b"])
            h, _, _ = ad.layer_norm_raw(x, P[p + "ln2.g"], P[p + "ln2.b"])
            h = ad.gelu_raw(h @ P[p + "fc.w"] + P[p + "fc.b"])
            x = x + (h @ P[p + "fc_out.w"] + P[p + "fc_out.b"])
        x, _, _ = ad.layer_norm_raw(x[-1:], P["lnf.g"], P["lnf.b"])
        head = P["wte"].T if cfg.tie_embeddings else P["head.w"]
        return (x @ head)[0]

    def prefill(self, tokens) -> np.ndarray:
        toks = [int(t) for t in tokens][-self.cfg.context_len:]
        if not toks:
            raise TooLong("need at least one token")
        check_tokens(self.cfg, np.asarray(toks))
        self.tokens = toks
        self._k, self._v = [], []
        return self._run(np.asarray(toks), 0)

    def step(self, token: int) -> np.ndarray:
        if not 0 <= int(token) < self.cfg.vocab:
            raise BadToken(f"token id {token} outside vocabulary")
        if len(self.tokens) >= self.cfg.context_len:
            return self.prefill(self.tokens + [int(token)])
        self.tokens.append(int(token))
        return self._run(np.asarray([int(token)]), len(self.tokens) - 1)
