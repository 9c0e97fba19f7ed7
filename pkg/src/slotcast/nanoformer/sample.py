"""Autoregressive slot sampling with an optional grammar mask."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np

from ..slottok import VOCAB_SIZE, Token
from .model import ConfigError, IncrementalDecoder, ModelParams

MODES = ("multinomial", "greedy")


class SlotOverflow(RuntimeError):
    """No SEMICOLON within the token cap; ``tokens`` holds what was drawn."""

    def __init__(self, message: str, tokens: list[int] | None = None):
        super().__init__(message)
        self.tokens = list(tokens or [])


class EmptyMask(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    mode: str = "multinomial"
    seed: int = 0
    max_tokens_per_slot: int = 256

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.max_tokens_per_slot < 1:
            raise ConfigError("max_tokens_per_slot must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class MaskProvider(Protocol):
    def allowed(self) -> np.ndarray: ...

    def push(self, token: int) -> None: ...


@dataclass
class SampledSlot:
    tokens: list[int]
    probs: np.ndarray  # [steps, vocab]: distribution each token was drawn from


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def sample_slot(params: ModelParams, context: Sequence[int], sc: SamplerConfig,
                mask_provider: MaskProvider | None = None,
                rng: np.random.Generator | None = None) -> SampledSlot:
    """Draw tokens after ``context`` until a SEMICOLON (inclusive).

    Only the most recent ``context_len`` tokens are used. With a mask provider,
    disallowed tokens get probability zero and the rest is renormalized. An
    empty context gives a uniform first-token distribution, since the model
    has no start-of-sequence token.
    """
    sc.validate()
    if rng is None:
        rng = np.random.default_rng(sc.seed)
    dec = IncrementalDecoder(params)
    ctx = [int(t) for t in context][-params.config.context_len:]
    logits = dec.prefill(ctx) if ctx else np.zeros(VOCAB_SIZE)
    out: list[int] = []
    rows = []
    while True:
        z = np.asarray(logits, dtype=np.float64) / sc.temperature
        if mask_provider is not None:
            allowed = np.asarray(mask_provider.allowed(), dtype=bool)
            if not allowed.any():
                raise EmptyMask(f"grammar mask allows no token after {len(out)} tokens")
            z = np.where(allowed, z, -np.inf)
        p = _softmax(z)
        rows.append(p)
        if sc.mode == "greedy":
            tok = int(np.argmax(p))
        else:
            cdf = np.cumsum(p)
            tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            tok = min(tok, VOCAB_SIZE - 1)
            while p[tok] == 0.0:  # guard against landing on a masked id at the cdf edge
                tok -= 1
        out.append(tok)
        if mask_provider is not None:
            mask_provider.push(tok)
        if tok == Token.SEMICOLON:
            break
        if len(out) >= sc.max_tokens_per_slot:
            raise SlotOverflow(f"no SEMICOLON within {sc.max_tokens_per_slot} tokens", out)
        logits = dec.step(tok) if dec.tokens else dec.prefill([tok])
    return SampledSlot(out, np.vstack(rows))


def write_probability_csv(probs: np.ndarray, fh) -> None:
    """One row per (sampling step, token id) with the probability that id had."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("sampling_step", "token_id", "probability"))
    for step, row in enumerate(np.asarray(probs)):
        for tok, p in enumerate(row):
            w.writerow((step, tok, f"{p:.8e}"))
