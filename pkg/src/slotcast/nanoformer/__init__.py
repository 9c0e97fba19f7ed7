"""Tiny decoder-only Transformer built on a minimal reverse-mode AD engine."""

from .checkpoint import (CorruptFile, VersionMismatch, VocabMismatch, load_checkpoint,
                         save_checkpoint)
from .model import (BadToken, ConfigError, IncrementalDecoder, ModelConfig, ModelParams,
                    NonFiniteLoss, TooLong, forward, init_params, loss_and_grads, loss_only)
from .sample import EmptyMask, SampledSlot, SamplerConfig, SlotOverflow, sample_slot
from .train import CorpusTooShort, TrainConfig, TrainResult, train

__all__ = [
    "BadToken", "ConfigError", "CorpusTooShort", "CorruptFile", "EmptyMask",
    "IncrementalDecoder", "ModelConfig", "ModelParams", "NonFiniteLoss", "SampledSlot",
    "SamplerConfig", "SlotOverflow", "TooLong", "TrainConfig", "TrainResult",
    "VersionMismatch", "VocabMismatch", "forward", "init_params", "load_checkpoint",
    "loss_and_grads", "loss_only", "sample_slot", "save_checkpoint", "train",
]
