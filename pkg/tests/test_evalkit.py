import io
import json
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotcast.evalkit import (BoxStats, EmptyReference, InsufficientData, channel_occurrences,
                              channel_precision, distance, evaluate_scenario, levenshtein,
                              relative_levenshtein, slot_token_lists, validation_slots,
                              write_box_csv, write_precision_csv)
from slotcast.nanoformer import SamplerConfig
from slotcast.phylog import ChannelKind
from slotcast.slottok import Token as T

from conftest import DIG, MODEL_OUTPUT_TOKENS, WORKED_SLOT_TOKENS, periodic_records


def brute_force(x, y):
    """Edit distance straight from its recursive definition."""
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (x[i - 1] != y[j - 1]))
    return d(len(x), len(y))


def test_worked_examples():
    assert levenshtein([2, 3, 4, 6, 7, 8], [1, 2, 3, 5, 6, 7]) == 3
    assert levenshtein(MODEL_OUTPUT_TOKENS, WORKED_SLOT_TOKENS) == 9
    assert relative_levenshtein(MODEL_OUTPUT_TOKENS, WORKED_SLOT_TOKENS) == Fraction(9, 21)
    d = distance(MODEL_OUTPUT_TOKENS, WORKED_SLOT_TOKENS)
    assert d.reference_len == 21 and abs(d.relative_float - 9 / 21) < 1e-12


@pytest.mark.parametrize("k", [1, 4, 16])
def test_degenerate_family(k):
    ref = list(range(k))
    assert relative_levenshtein([], ref) == 1
    assert relative_levenshtein([x + 100 for x in ref], ref) == 1
    assert relative_levenshtein(ref + [x + 100 for x in ref], ref) == 1


def test_empty_reference():
    with pytest.raises(EmptyReference):
        relative_levenshtein([1], [])


seqs = st.lists(st.integers(0, 3), max_size=8)


@given(seqs, seqs)
def test_matches_brute_force(x, y):
    assert levenshtein(x, y) == brute_force(tuple(x), tuple(y))


@given(seqs, seqs, seqs)
def test_metric_axioms(x, y, z):
    assert levenshtein(x, y) == levenshtein(y, x)
    assert levenshtein(x, x) == 0
    assert levenshtein(x, z) <= levenshtein(x, y) + levenshtein(y, z)
    assert abs(len(x) - len(y)) <= levenshtein(x, y) <= max(len(x), len(y))
    if y:
        assert (relative_levenshtein(x, y) == 0) == (list(x) == list(y))


# hand-built slots: digit 1, body, semicolon
def slot(*body):
    return [DIG[1], T.COLON, *body, T.SEMICOLON]


PDSCH = lambda r: [T.CH_PDSCH, DIG[0], DIG[r]]  # noqa: E731
PUCCH = lambda r: [T.CH_PUCCH, DIG[0], DIG[r]]  # noqa: E731
DCI = lambda r: [T.CH_PDCCH_DCI_1_0, DIG[0], DIG[r]]  # noqa: E731


def rows_by_kind(pairs, digits=None):
    return {r.channel: r for r in channel_precision(pairs, digits)}


def test_precision_identity():
    pairs = [(slot(*DCI(1), T.COMMA, *PDSCH(1)),) * 2, (slot(*PUCCH(2)),) * 2]
    for r in channel_precision(pairs):
        assert r.channel_tp == 1 and r.rnti_tp == 1


def test_precision_wrong_channel():
    rows = rows_by_kind([(slot(*PDSCH(1)), slot(*PUCCH(1)))])
    assert rows[ChannelKind.PDSCH].channel_tp == 0
    assert rows[ChannelKind.PUCCH].channel_tp is None
    assert rows[ChannelKind.PUCCH].frequency == 1.0


def test_precision_wrong_rnti():
    rows = rows_by_kind([(slot(*PDSCH(2)), slot(*PDSCH(1)))])
    assert rows[ChannelKind.PDSCH].channel_tp == 1
    assert rows[ChannelKind.PDSCH].rnti_tp == 0


def test_precision_five_pair_fixture():
    """Counts worked out by hand.

    pair  predicted                 reference
    1     DCI1 PDSCH1               DCI1 PDSCH1
    2     DCI2 PDSCH2 PUCCH1        DCI1 PDSCH1
    3     PDSCH1 PDSCH2             PDSCH2 PUCCH1
    4     PUCCH1                    PUCCH1 PUCCH2
    5     `1 PDSCH01 ;` (invalid)   PDSCH1
    """
    c = T.COMMA
    pairs = [
        (slot(*DCI(1), c, *PDSCH(1)), slot(*DCI(1), c, *PDSCH(1))),
        (slot(*DCI(2), c, *PDSCH(2), c, *PUCCH(1)), slot(*DCI(1), c, *PDSCH(1))),
        (slot(*PDSCH(1), c, *PDSCH(2)), slot(*PDSCH(2), c, *PUCCH(1))),
        (slot(*PUCCH(1)), slot(*PUCCH(1), c, *PUCCH(2))),
        ([DIG[1], *PDSCH(1), T.SEMICOLON], slot(*PDSCH(1))),
    ]
    rows = rows_by_kind(pairs, [1] * 5)
    # reference channel tokens: DCI 2, PDSCH 4, PUCCH 3 -> 9
    assert rows[ChannelKind.PDCCH_DCI_1_0].frequency == pytest.approx(2 / 9)
    assert rows[ChannelKind.PDSCH].frequency == pytest.approx(4 / 9)
    assert rows[ChannelKind.PUCCH].frequency == pytest.approx(3 / 9)
    # DCI: predicted 2, matched 2, rnti 1
    assert rows[ChannelKind.PDCCH_DCI_1_0].channel_tp == 1.0
    assert rows[ChannelKind.PDCCH_DCI_1_0].rnti_tp == 0.5
    # PDSCH: predicted 1+1+2+1 = 5; matched 1+1+1+0 = 3; rnti 1+0+1+0 = 2
    assert rows[ChannelKind.PDSCH].channel_tp == pytest.approx(3 / 5)
    assert rows[ChannelKind.PDSCH].rnti_tp == pytest.approx(2 / 5)
    # PUCCH: predicted 2, matched 0 (pair 2) + 1 (pair 4), rnti 1
    assert rows[ChannelKind.PUCCH].channel_tp == 0.5
    assert rows[ChannelKind.PUCCH].rnti_tp == 0.5
    total = sum(r.frequency for r in rows.values())
    assert total == pytest.approx(1.0)
    for r in rows.values():
        assert 0 <= r.rnti_tp <= r.channel_tp <= 1


def test_channel_occurrences():
    occ = channel_occurrences(WORKED_SLOT_TOKENS)
    assert occ == [(ChannelKind.PDCCH_DCI_1_0, 1), (ChannelKind.PDSCH, 1)]
    assert channel_occurrences([T.CH_PRACH, T.SEMICOLON]) == [(ChannelKind.PRACH, None)]


def test_box_stats():
    b = BoxStats.from_values([1, 2, 3, 4, 100])
    assert (b.lower_quartile, b.median, b.upper_quartile) == (2, 3, 4)
    assert b.lower_whisker == 1 and b.upper_whisker == 4
    one = BoxStats.from_values([7])
    assert one.lower_whisker == one.median == one.upper_whisker == 7
    with pytest.raises(ValueError):
        BoxStats.from_values([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_box_ordering(values):
    b = BoxStats.from_values(values)
    assert b.lower_whisker <= b.lower_quartile <= b.median <= b.upper_quartile <= b.upper_whisker


class Replay:
    """Oracle predictor that returns the true next slot."""

    def __init__(self, slots):
        self.slots = slots
        self.lookup = {}
        for i in range(10, len(slots)):
            key = tuple(t for s in slots[i - 10:i] for t in s)
            self.lookup[key] = slots[i]

    def predict_slot(self, context, sc, mask, rng):
        return list(self.lookup[tuple(context)])


class AlwaysEmpty:
    def predict_slot(self, context, sc, mask, rng):
        return []


def test_evaluate_with_oracle_and_empty_baseline():
    slots = slot_token_lists(periodic_records(200))
    val = validation_slots(slots)
    assert 30 < len(val) < 50
    rep = evaluate_scenario(Replay(val), val, 40, SamplerConfig(), True, seed=2)
    assert all(s.relative == 0 for s in rep.samples)
    assert all(r.channel_tp == 1 for r in rep.precision)
    base = evaluate_scenario(AlwaysEmpty(), val, 40, SamplerConfig(), True, seed=2)
    assert base.relative.median == 1.0
    again = evaluate_scenario(Replay(val), val, 40, SamplerConfig(), True, seed=2)
    assert again.to_json() == rep.to_json()
    assert [s.start_slot for s in base.samples] == [s.start_slot for s in rep.samples]
    doc = json.loads(rep.to_json())
    assert doc["relative_levenshtein"]["median"] == 0 and len(doc["samples"]) == 40
    buf = io.StringIO()
    write_precision_csv(rep.precision, buf)
    assert buf.getvalue().splitlines()[0] == "Token,P(c_i),TP(c_i),TP(r|c_i)"
    buf = io.StringIO()
    write_box_csv([rep, base], buf)
    assert len(buf.getvalue().splitlines()) == 5


def test_insufficient_data():
    slots = slot_token_lists(periodic_records(8))
    with pytest.raises(InsufficientData):
        evaluate_scenario(AlwaysEmpty(), slots, 5, SamplerConfig(), True, seed=0)
