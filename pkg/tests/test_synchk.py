import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotcast.slottok import Token, encode_stream
from slotcast.synchk import (Category, IllegalToken, Phase, SlotGrammarState, SyntaxMask,
                             allowed_next, feed, next_slot_digit, validate)

from conftest import DIG, MODEL_OUTPUT_TOKENS, WORKED_SLOT_TOKENS, periodic_records

from test_slottok import records


def allowed_set(state):
    return {int(t) for t in np.flatnonzero(allowed_next(state))}


def run(tokens, digit):
    s = SlotGrammarState.start(digit)
    for i, t in enumerate(tokens):
        s = feed(s, t, i)
    return s


def test_fresh_state_allows_only_expected_digit():
    assert allowed_set(SlotGrammarState.start(8)) == {int(DIG[8])}


def test_after_rnti():
    s = run([DIG[8], Token.COLON, Token.CH_PDSCH, DIG[0], DIG[1]], 8)
    assert allowed_set(s) == {Token.LBRACKET, Token.LPAREN, Token.COMMA, Token.SEMICOLON}


def test_inside_frequency_group():
    s = run([DIG[8], Token.COLON, Token.CH_PDSCH, DIG[0], DIG[1], Token.LBRACKET, DIG[6]], 8)
    assert allowed_set(s) == {Token.COMMA} | {int(d) for d in DIG}


def test_worked_slot_feeds_to_done():
    s = run(WORKED_SLOT_TOKENS, 8)
    assert s.done and s.phase is Phase.DONE
    assert s.expected_slot_digit == 9


def test_empty_slot_and_wraparound():
    s = run([DIG[0], Token.COLON, Token.EMPTY, Token.SEMICOLON], 0)
    assert s.done and s.expected_slot_digit == 1
    s = run([DIG[9], Token.COLON, Token.EMPTY, Token.SEMICOLON], 9)
    assert s.expected_slot_digit == 0


def test_wrong_digit_raises():
    with pytest.raises(IllegalToken) as info:
        feed(SlotGrammarState.start(8), DIG[5])
    assert info.value.violation.category is Category.WRONG_SLOT_DIGIT


def test_validate_examples():
    assert validate(WORKED_SLOT_TOKENS, 8) == []
    assert validate(MODEL_OUTPUT_TOKENS, 8) == []
    v = validate([DIG[8], Token.CH_PDSCH, Token.SEMICOLON], 8)
    assert [(x.position, x.category) for x in v] == [(1, Category.MISSING_COLON)]


def test_validate_recovers_per_slot():
    bad = [DIG[8], Token.CH_PDSCH, Token.SEMICOLON]
    good = [DIG[9], Token.COLON, Token.EMPTY, Token.SEMICOLON]
    assert validate(bad + good, 8)[0].position == 1
    assert len(validate(bad + good, 8)) == 1
    assert validate([DIG[8], Token.COLON, Token.CH_PDSCH, DIG[0], DIG[1], Token.LBRACKET],
                    8)[0].category \
        is Category.UNCLOSED_BRACKET


def test_empty_only_as_sole_body():
    v = validate([DIG[1], Token.COLON, Token.CH_PUCCH, DIG[0], DIG[1], Token.COMMA, Token.EMPTY,
                  Token.SEMICOLON], 1)
    assert v[0].category is Category.EMPTY_MISPLACED


def test_generated_corpus_validates():
    toks = encode_stream(periodic_records(40))
    assert validate(toks, 0) == []
    assert next_slot_digit(toks) == 0


@given(records)
def test_soundness(rec):
    from slotcast.slottok import encode_slot
    assert validate(encode_slot(rec), rec.slot) == []


@given(st.integers(0, 9), st.lists(st.integers(0, 31), max_size=60), st.randoms())
def test_liveness_along_random_walks(digit, _noise, rnd):
    """Every reachable state allows something, and SEMICOLON is reachable."""
    mask = SyntaxMask(digit)
    for _ in range(60):
        allowed = np.flatnonzero(mask.allowed())
        assert allowed.size > 0
        tok = int(rnd.choice(list(allowed)))
        mask.push(tok)
        if mask.done:
            assert tok == Token.SEMICOLON
            break


@given(st.integers(0, 9), st.integers(0, 25))
def test_slot_arithmetic(d, n):
    toks = []
    for i in range(n):
        toks += [DIG[(d + i) % 10], Token.COLON, Token.EMPTY, Token.SEMICOLON]
    assert validate(toks, d) == []
    if n:
        assert next_slot_digit(toks) == (d + n) % 10


def test_message_limit_caps_slot_length():
    from slotcast.synchk import MAX_MESSAGES
    widest = [Token.CH_PDSCH, DIG[0xF], DIG[0xF], Token.LBRACKET, DIG[0xF], DIG[0xF], Token.COMMA,
              DIG[0xF], DIG[0xF], Token.RBRACKET, Token.LPAREN, DIG[0xF], DIG[0xF], Token.COMMA,
              DIG[0xF], DIG[0xF], Token.RPAREN]

    def slot(n):
        body = []
        for i in range(n):
            body += ([Token.COMMA] if i else []) + widest
        return [DIG[0], Token.COLON, *body, Token.SEMICOLON]

    longest = slot(MAX_MESSAGES)
    assert validate(longest) == [] and len(longest) <= 256
    v = validate(slot(MAX_MESSAGES + 1))
    assert [x.category for x in v] == [Category.UNEXPECTED_TOKEN]
    mask = SyntaxMask()
    for t in longest[:-1]:
        mask.push(t)
    assert not mask.allowed()[Token.COMMA] and mask.allowed()[Token.SEMICOLON]
