"""Evaluation metrics: edit distances, per-channel precision, box statistics."""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Protocol, Sequence

import numpy as np

from .phylog import ChannelKind, SlotRecord
from .slottok import TOKEN_CHANNELS, Token, encode_slot, hex_value, is_channel, is_hex
from .synchk import SyntaxMask, validate


class EmptyReference(ValueError):
    pass


class InsufficientData(ValueError):
    pass


# --------------------------------------------------------------------------
# edit distance

def levenshtein(x: Sequence, y: Sequence) -> int:
    """Unit-cost insert/delete/substitute distance, two-row dynamic programme."""
    if len(x) < len(y):
        x, y = y, x
    prev = list(range(len(y) + 1))
    for i, a in enumerate(x, start=1):
        cur = [i] + [0] * len(y)
        for j, b in enumerate(y, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class DistanceResult:
    levenshtein: int
    reference_len: int
    relative: Fraction

    @property
    def relative_float(self) -> float:
        return float(self.relative)


def relative_levenshtein(x: Sequence, y: Sequence) -> Fraction:
    """L(x, y) / len(y) as an exact fraction; ``y`` is the reference."""
    if len(y) == 0:
        raise EmptyReference("relative distance needs a non-empty reference")
    return Fraction(levenshtein(x, y), len(y))


def distance(x: Sequence, y: Sequence) -> DistanceResult:
    d = levenshtein(x, y)
    if len(y) == 0:
        raise EmptyReference("relative distance needs a non-empty reference")
    return DistanceResult(d, len(y), Fraction(d, len(y)))


# --------------------------------------------------------------------------
# channel precision

@dataclass(frozen=True)
class PrecisionRow:
    channel: ChannelKind
    frequency: float
    channel_tp: float | None  # None: channel never predicted
    rnti_tp: float | None     # None: no predicted occurrence carries an RNTI
    predicted: int = 0
    matched: int = 0
    rnti_matched: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel"] = self.channel.value
        return d


def channel_occurrences(seq: Sequence[int]) -> list[tuple[ChannelKind, int | None]]:
    """(channel, rnti) for every channel token; the RNTI is the next two hex tokens."""
    out = []
    seq = [int(t) for t in seq]
    for i, tok in enumerate(seq):
        if not is_channel(tok):
            continue
        rnti = None
        if i + 2 < len(seq) and is_hex(seq[i + 1]) and is_hex(seq[i + 2]):
            rnti = hex_value(seq[i + 1]) * 16 + hex_value(seq[i + 2])
        out.append((TOKEN_CHANNELS[Token(tok)], rnti))
    return out


def _match_counts(pred: list[int | None], ref: list[int | None]) -> tuple[int, int]:
    """Consume-once matching of one channel's occurrences.

    Channel matches are min(|pred|, |ref|). Pairs with equal RNTIs are formed
    first, which maximizes the number of RNTI matches among them.
    """
    matched = min(len(pred), len(ref))
    pc = Counter(r for r in pred if r is not None)
    rc = Counter(r for r in ref if r is not None)
    rnti = sum(min(n, rc[r]) for r, n in pc.items())
    return matched, min(rnti, matched)


def channel_precision(pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
                      starting_digits: Sequence[int | None] | None = None) -> list[PrecisionRow]:
    """Per-channel frequency and precision over (predicted, reference) slot pairs.

    P(c) is the share of c among all reference channel tokens. TP(c) is the
    share of predicted occurrences of c that are matched by a reference
    occurrence in the same pair, and TP(r|c) the share whose RNTI also
    matches. A prediction that fails syntax validation matches nothing.
    """
    ref_counts: Counter = Counter()
    predicted: Counter = Counter()
    with_rnti: Counter = Counter()
    matched: Counter = Counter()
    rnti_matched: Counter = Counter()
    for n, (pred, ref) in enumerate(pairs):
        digit = starting_digits[n] if starting_digits is not None else None
        p_occ = channel_occurrences(pred)
        r_occ = channel_occurrences(ref)
        ref_counts.update(k for k, _ in r_occ)
        p_by: dict = defaultdict(list)
        r_by: dict = defaultdict(list)
        for k, r in p_occ:
            p_by[k].append(r)
            predicted[k] += 1
            with_rnti[k] += r is not None
        for k, r in r_occ:
            r_by[k].append(r)
        if validate(pred, digit):
            continue
        for k, rs in p_by.items():
            m, mr = _match_counts(rs, r_by.get(k, []))
            matched[k] += m
            rnti_matched[k] += mr
    total_ref = sum(ref_counts.values())
    rows = []
    for kind in ChannelKind:
        if not (ref_counts[kind] or predicted[kind]):
            continue
        npred = predicted[kind]
        rows.append(PrecisionRow(
            channel=kind,
            frequency=ref_counts[kind] / total_ref if total_ref else 0.0,
            channel_tp=matched[kind] / npred if npred else None,
            rnti_tp=rnti_matched[kind] / npred if with_rnti[kind] else None,
            predicted=npred,
            matched=matched[kind],
            rnti_matched=rnti_matched[kind],
        ))
    return rows


# --------------------------------------------------------------------------
# box statistics

@dataclass(frozen=True)
class BoxStats:
    median: float
    lower_quartile: float
    upper_quartile: float
    lower_whisker: float
    upper_whisker: float
    n: int
    mean: float

    @classmethod
    def from_values(cls, values: Sequence[float], whisker: float = 1.5) -> "BoxStats":
        """Linear-interpolated quartiles; whiskers reach the furthest observation
        within ``whisker`` IQRs of the box."""
        a = np.asarray(values, dtype=np.float64)
        if a.size == 0:
            raise ValueError("box statistics need at least one value")
        q1, med, q3 = np.percentile(a, [25, 50, 75])
        iqr = q3 - q1
        lo = a[a >= q1 - whisker * iqr].min()
        hi = a[a <= q3 + whisker * iqr].max()
        return cls(float(med), float(q1), float(q3), float(min(lo, q1)), float(max(hi, q3)),
                   int(a.size), float(a.mean()))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# scenario evaluation

class Predictor(Protocol):
    def predict_slot(self, context: Sequence[int], sc, mask_provider,
                     rng: np.random.Generator) -> list[int]: ...


class ModelPredictor:
    """Adapter from model parameters to the predictor interface."""

    def __init__(self, params):
        self.params = params

    def predict_slot(self, context, sc, mask_provider, rng):
        from .nanoformer.sample import SlotOverflow, sample_slot
        try:
            return sample_slot(self.params, context, sc, mask_provider, rng).tokens
        except SlotOverflow as exc:
            return exc.tokens


@dataclass
class SampleResult:
    index: int
    start_slot: int
    predicted: list[int]
    reference: list[int]
    levenshtein: int
    relative: float
    violations: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    use_checker: bool
    seed: int
    n_samples: int
    samples: list[SampleResult]
    levenshtein: BoxStats
    relative: BoxStats
    precision: list[PrecisionRow]
    sampler: dict = field(default_factory=dict)

    @property
    def exact_fraction(self) -> float:
        return sum(s.levenshtein == 0 for s in self.samples) / len(self.samples)

    def to_dict(self) -> dict:
        return {
            "use_checker": self.use_checker,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "sampler": self.sampler,
            "levenshtein": self.levenshtein.to_dict(),
            "relative_levenshtein": self.relative.to_dict(),
            "exact_fraction": self.exact_fraction,
            "precision": [r.to_dict() for r in self.precision],
            "samples": [s.to_dict() for s in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def write_precision_csv(rows: Sequence[PrecisionRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("Token", "P(c_i)", "TP(c_i)", "TP(r|c_i)"))
    for r in rows:
        w.writerow((r.channel.value, f"{r.frequency:.6f}",
                    "" if r.channel_tp is None else f"{r.channel_tp:.6f}",
                    "" if r.rnti_tp is None else f"{r.rnti_tp:.6f}"))


def write_box_csv(reports: Sequence[EvalReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("checker", "metric", "median", "lower_quartile", "upper_quartile",
                "lower_whisker", "upper_whisker", "n", "mean"))
    for rep in reports:
        for metric, box in (("levenshtein", rep.levenshtein), ("relative", rep.relative)):
            w.writerow(("on" if rep.use_checker else "off", metric,
                        *(f"{v:.6f}" if isinstance(v, float) else v
                          for v in (box.median, box.lower_quartile, box.upper_quartile,
                                    box.lower_whisker, box.upper_whisker, box.n, box.mean))))


WINDOW_SLOTS = 11


def slot_token_lists(records: Sequence[SlotRecord]) -> list[list[int]]:
    return [encode_slot(r) for r in records]


def validation_slots(slots: Sequence[Sequence[int]], train_fraction: float = 0.8) -> list[list[int]]:
    """Slots lying entirely in the validation part of the flattened token stream."""
    total = sum(len(s) for s in slots)
    cut = int(round(total * train_fraction))
    pos = 0
    for i, s in enumerate(slots):
        if pos >= cut:
            return [list(x) for x in slots[i:]]
        pos += len(s)
    return []


def evaluate_scenario(model, slots: Sequence[Sequence[int]], n_samples: int, sc,
                      use_checker: bool, seed: int) -> EvalReport:
    """Predict the 11th slot of ``n_samples`` random 11-slot windows.

    ``slots`` holds the per-slot token lists of the validation split. The
    windows and per-sample sampling seeds depend only on ``seed``, so runs
    with and without the checker see identical inputs.
    """
    if len(slots) < WINDOW_SLOTS:
        raise InsufficientData(f"need at least {WINDOW_SLOTS} slots, have {len(slots)}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    predictor = model if hasattr(model, "predict_slot") else ModelPredictor(model)
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, len(slots) - WINDOW_SLOTS + 1, size=n_samples)
    sample_seeds = rng.integers(0, 2**63 - 1, size=n_samples)
    results, pairs, digits = [], [], []
    for n, (s, ss) in enumerate(zip(starts.tolist(), sample_seeds.tolist())):
        context = [t for slot in slots[s:s + WINDOW_SLOTS - 1] for t in slot]
        reference = list(slots[s + WINDOW_SLOTS - 1])
        mask = SyntaxMask.following(context)
        digit = mask.state.expected_slot_digit
        pred = list(predictor.predict_slot(context, sc, mask if use_checker else None,
                                           np.random.default_rng(ss)))
        d = distance(pred, reference)
        results.append(SampleResult(n, s, pred, reference, d.levenshtein, d.relative_float,
                                    len(validate(pred, digit))))
        pairs.append((pred, reference))
        digits.append(digit)
    sampler = sc.to_dict() if hasattr(sc, "to_dict") else {}
    return EvalReport(
        use_checker=use_checker, seed=seed, n_samples=n_samples, samples=results,
        levenshtein=BoxStats.from_values([r.levenshtein for r in results]),
        relative=BoxStats.from_values([r.relative for r in results]),
        precision=channel_precision(pairs, digits), sampler=sampler)
