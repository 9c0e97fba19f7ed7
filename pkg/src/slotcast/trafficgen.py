"""Deterministic round-robin gNB scheduler producing multi-UE slot streams.

Per slot, in order:

1. Every UE receives Bernoulli arrivals (downlink, then uplink). An arrival
   adds 1-4 backlog units of ``PRB_UNIT`` PRBs, capped at ``MAX_BACKLOG``.
2. Up to ``max_dl_per_slot`` UEs with downlink backlog are served round-robin.
   A grant emits PDCCH DCI 1_0 and PDSCH (symbols [1, 14)) now and a PUCCH
   (symbols [0, 14)) ``harq_delay`` slots later.
3. Up to ``max_ul_per_slot`` UEs with uplink backlog get a DCI 0_0 now and a
   PUSCH (symbols [0, 14)) ``ul_delay`` slots later.

PRB intervals are packed from PRB 0 upward, so grants of one direction in
one slot never overlap. Events that would fall after the last slot are
dropped. Messages within a slot are ordered: DCI 1_0, DCI 0_0, PDSCH, PUSCH,
PUCCH, PRACH; within each kind, by grant order.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .phylog import (Axis, ChannelKind, ChannelMessage, Interval, SlotId, SlotRecord)
from .slottok import encode_slot

PRB_UNIT = 12
MAX_BACKLOG = 8
MIN_DURATION = 11


class ConfigError(ValueError):
    pass


class Traffic(enum.Enum):
    DOWNLINK = "downlink"
    UPLINK = "uplink"
    BIDIRECTIONAL = "bidirectional"

    @classmethod
    def parse(cls, text: str) -> "Traffic":
        key = text.strip().lower()
        aliases = {"dl": cls.DOWNLINK, "ul": cls.UPLINK, "bi": cls.BIDIRECTIONAL,
                   "bidi": cls.BIDIRECTIONAL}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown traffic direction {text!r}") from None


# per-slot arrival probabilities (downlink, uplink)
DEFAULT_RATES = {
    Traffic.DOWNLINK: (0.5, 0.02),
    Traffic.UPLINK: (0.05, 0.8),
    Traffic.BIDIRECTIONAL: (0.35, 0.45),
}


@dataclass(frozen=True)
class ScenarioConfig:
    n_ues: int
    traffic: tuple[Traffic, ...]
    duration_slots: int
    seed: int = 0
    bandwidth_prbs: int = 106
    prach_period_slots: int | None = None
    harq_delay: int = 4
    ul_delay: int = 4
    max_dl_per_slot: int = 2
    max_ul_per_slot: int = 2
    start_sfn: int = 0

    def __post_init__(self):
        object.__setattr__(self, "traffic", tuple(
            t if isinstance(t, Traffic) else Traffic.parse(t) for t in self.traffic))

    def validate(self) -> None:
        if self.n_ues < 1:
            raise ConfigError("n_ues must be >= 1")
        if self.n_ues > 0xFF:
            raise ConfigError("at most 255 UEs fit the one-byte RNTI suffix")
        if len(self.traffic) != self.n_ues:
            raise ConfigError(f"{self.n_ues} UEs but {len(self.traffic)} traffic entries")
        if self.duration_slots < MIN_DURATION:
            raise ConfigError(f"duration_slots must be >= {MIN_DURATION}")
        if not PRB_UNIT <= self.bandwidth_prbs <= 0xFF:
            raise ConfigError(f"bandwidth_prbs must lie in [{PRB_UNIT}, 255]")
        if self.prach_period_slots is not None and self.prach_period_slots < 1:
            raise ConfigError("prach_period_slots must be >= 1")
        if self.harq_delay < 1 or self.ul_delay < 1:
            raise ConfigError("feedback delays must be >= 1")
        if self.max_dl_per_slot < 0 or self.max_ul_per_slot < 0:
            raise ConfigError("per-slot grant limits must be >= 0")
        if not 0 <= self.start_sfn <= 1023:
            raise ConfigError("start_sfn must lie in [0, 1023]")

    def to_dict(self) -> dict:
        return {
            "n_ues": self.n_ues,
            "traffic": ",".join(t.value for t in self.traffic),
            "duration_slots": self.duration_slots,
            "seed": self.seed,
            "bandwidth_prbs": self.bandwidth_prbs,
            "prach_period_slots": self.prach_period_slots,
            "harq_delay": self.harq_delay,
            "ul_delay": self.ul_delay,
            "max_dl_per_slot": self.max_dl_per_slot,
            "max_ul_per_slot": self.max_ul_per_slot,
            "start_sfn": self.start_sfn,
        }


@dataclass
class UeState:
    rnti_suffix: int
    traffic: Traffic
    pending_dl: int = 0
    pending_ul: int = 0
    harq_feedback_due: int | None = None  # slots until the next outstanding PUCCH
    _harq: list[int] = field(default_factory=list, repr=False)


_PDSCH_SYMBOLS = Interval(1, 14, Axis.TIME_SYMBOL)
_FULL_SYMBOLS = Interval(0, 14, Axis.TIME_SYMBOL)


class _Scheduler:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.ues = [UeState(i + 1, t) for i, t in enumerate(cfg.traffic)]
        self.dl_ptr = 0
        self.ul_ptr = 0
        self.pucch: dict[int, list[ChannelMessage]] = {}
        self.pusch: dict[int, list[ChannelMessage]] = {}

    def _arrivals(self) -> None:
        for ue in self.ues:
            p_dl, p_ul = DEFAULT_RATES[ue.traffic]
            draws = self.rng.random(2)
            sizes = self.rng.integers(1, 5, size=2)
            if draws[0] < p_dl:
                ue.pending_dl = min(MAX_BACKLOG, ue.pending_dl + int(sizes[0]))
            if draws[1] < p_ul:
                ue.pending_ul = min(MAX_BACKLOG, ue.pending_ul + int(sizes[1]))

    def _serve(self, attr: str, ptr: int, limit: int) -> tuple[list[tuple[UeState, Interval]], int]:
        """Round-robin grants for one direction; returns grants and the new pointer."""
        n = len(self.ues)
        free = self.cfg.bandwidth_prbs // PRB_UNIT
        cursor = 0
        grants = []
        last = None
        for k in range(n):
            if len(grants) >= limit or free == 0:
                break
            i = (ptr + k) % n
            ue = self.ues[i]
            want = getattr(ue, attr)
            if want == 0:
                continue
            units = min(want, free)
            setattr(ue, attr, want - units)
            free -= units
            grants.append((ue, Interval(cursor, cursor + units * PRB_UNIT, Axis.FREQUENCY_PRB)))
            cursor += units * PRB_UNIT
            last = i
        return grants, (ptr if last is None else (last + 1) % n)

    def slot(self, t: int) -> tuple[ChannelMessage, ...]:
        cfg = self.cfg
        self._arrivals()
        dl, self.dl_ptr = self._serve("pending_dl", self.dl_ptr, cfg.max_dl_per_slot)
        ul, self.ul_ptr = self._serve("pending_ul", self.ul_ptr, cfg.max_ul_per_slot)

        msgs = [ChannelMessage(ChannelKind.PDCCH_DCI_1_0, ue.rnti_suffix) for ue, _ in dl]
        msgs += [ChannelMessage(ChannelKind.PDCCH_DCI_0_0, ue.rnti_suffix) for ue, _ in ul]
        msgs += [ChannelMessage(ChannelKind.PDSCH, ue.rnti_suffix, prb, _PDSCH_SYMBOLS)
                 for ue, prb in dl]
        for ue, _ in dl:
            due = t + cfg.harq_delay
            self.pucch.setdefault(due, []).append(
                ChannelMessage(ChannelKind.PUCCH, ue.rnti_suffix, None, _FULL_SYMBOLS))
            ue._harq.append(due)
        for ue, prb in ul:
            self.pusch.setdefault(t + cfg.ul_delay, []).append(
                ChannelMessage(ChannelKind.PUSCH, ue.rnti_suffix, prb, _FULL_SYMBOLS))

        msgs += self.pusch.pop(t, [])
        msgs += self.pucch.pop(t, [])
        if cfg.prach_period_slots and t % cfg.prach_period_slots == 0:
            msgs.append(ChannelMessage(ChannelKind.PRACH))
        for ue in self.ues:
            ue._harq = [d for d in ue._harq if d > t]
            ue.harq_feedback_due = (ue._harq[0] - t) if ue._harq else None
        return tuple(msgs)


def generate_scenario(cfg: ScenarioConfig) -> list[SlotRecord]:
    """Simulate ``cfg.duration_slots`` slots; identical output for identical configs."""
    cfg.validate()
    sched = _Scheduler(cfg)
    sid = SlotId(cfg.start_sfn, 0)
    out = []
    for t in range(cfg.duration_slots):
        out.append(SlotRecord(sid, sched.slot(t)))
        sid = sid.next()
    return out


def corpus_stats(records: Sequence[SlotRecord]) -> tuple[int, dict[ChannelKind, float]]:
    """Token count after encoding and the relative frequency of each channel kind."""
    records = list(records)
    if not records:
        raise ValueError("corpus_stats needs at least one record")
    n_tokens = sum(len(encode_slot(r)) for r in records)
    counts = Counter(m.kind for r in records for m in r.messages)
    total = sum(counts.values())
    freqs = {k: (counts[k] / total if total else 0.0) for k in ChannelKind}
    return n_tokens, freqs


# --------------------------------------------------------------------------
# key=value config files

_INT_KEYS = {"n_ues", "duration_slots", "seed", "bandwidth_prbs", "prach_period_slots",
             "harq_delay", "ul_delay", "max_dl_per_slot", "max_ul_per_slot", "start_sfn"}
_ALIASES = {"ues": "n_ues", "slots": "duration_slots", "duration": "duration_slots"}


def read_key_values(lines: Iterable[str]) -> dict[str, str]:
    """``key = value`` pairs; ``#`` starts a comment; blank lines are ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected key=value, got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def scenario_from_mapping(values: dict[str, object]) -> ScenarioConfig:
    kwargs: dict[str, object] = {}
    for raw_key, value in values.items():
        key = _ALIASES.get(raw_key, raw_key)
        if key == "traffic":
            items = value if isinstance(value, (list, tuple)) else str(value).split(",")
            kwargs["traffic"] = tuple(Traffic.parse(str(v)) for v in items if str(v).strip())
        elif key in _INT_KEYS:
            if key == "prach_period_slots" and str(value).strip().lower() in ("", "none"):
                kwargs[key] = None
                continue
            try:
                kwargs[key] = int(str(value), 0)
            except ValueError:
                raise ConfigError(f"{raw_key}: expected an integer, got {value!r}") from None
        else:
            raise ConfigError(f"unknown scenario key {raw_key!r}")
    for req in ("n_ues", "traffic", "duration_slots"):
        if kwargs.get(req) is None:
            raise ConfigError(f"missing required scenario key {req!r}")
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_mapping(read_key_values(fh))
