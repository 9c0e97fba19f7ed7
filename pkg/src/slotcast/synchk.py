"""Slot grammar automaton: validator and allowed-next-token mask.

The grammar is the one the tokenizer emits:

* the slot digit counts up by one per slot, 0 following 9;
* a colon follows the digit;
* then either ``EMPTY`` alone or one or more channel messages joined by commas;
* a message is a channel token, a two-digit RNTI (optional only for PRACH),
  then optionally a ``[a,b]`` PRB group and then optionally an ``(a,b)``
  symbol group; PDCCH messages carry no groups;
* group bounds are hex numbers of one or two digits without leading zeros;
* a semicolon closes the slot;
* a slot holds at most ``MAX_MESSAGES`` messages, which keeps the longest
  legal slot (254 tokens) under the sampler's default token cap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .slottok import (HEX_TOKENS, VOCAB_SIZE, Token, hex_value, is_channel, is_hex,
                      split_slots)

MAX_NUMBER_DIGITS = 2
MAX_MESSAGES = 14

_PDCCH = frozenset({Token.CH_PDCCH_PLAIN, Token.CH_PDCCH_DCI_0_0, Token.CH_PDCCH_DCI_1_0})
_CHANNELS = tuple(t for t in Token if is_channel(t))


class Phase(enum.Enum):
    EXPECT_SLOT_DIGIT = "ExpectSlotDigit"
    EXPECT_COLON = "ExpectColon"
    EXPECT_CHANNEL_OR_EMPTY = "ExpectChannelOrEmpty"
    IN_CHANNEL_AFTER_NAME = "InChannelAfterName"
    IN_RNTI_DIGIT2 = "InRntiDigit2"
    AFTER_RNTI = "AfterRnti"
    IN_FREQ_OPEN = "InFreqOpen"
    IN_FREQ_FIRST_NUM = "InFreqFirstNum"
    IN_FREQ_COMMA = "InFreqComma"
    IN_FREQ_SECOND_NUM = "InFreqSecondNum"
    AFTER_FREQ = "AfterFreq"
    IN_TIME_OPEN = "InTimeOpen"
    IN_TIME_FIRST_NUM = "InTimeFirstNum"
    IN_TIME_COMMA = "InTimeComma"
    IN_TIME_SECOND_NUM = "InTimeSecondNum"
    EXPECT_COMMA_OR_SEMICOLON = "ExpectCommaOrSemicolon"
    EXPECT_SEMICOLON = "ExpectSemicolon"
    DONE = "Done"


class Category(str, enum.Enum):
    WRONG_SLOT_DIGIT = "WrongSlotDigit"
    MISSING_COLON = "MissingColon"
    BAD_CHANNEL_START = "BadChannelStart"
    UNCLOSED_BRACKET = "UnclosedBracket"
    BRACKET_ARITY = "BracketArity"
    MISSING_SEPARATOR = "MissingSeparator"
    UNEXPECTED_TOKEN = "UnexpectedToken"
    EMPTY_MISPLACED = "EmptyMisplaced"


@dataclass(frozen=True)
class Violation:
    position: int
    category: Category
    detail: str = ""

    def to_dict(self) -> dict:
        return {"position": self.position, "category": self.category.value,
                "detail": self.detail}


class IllegalToken(ValueError):
    def __init__(self, violation: Violation):
        self.violation = violation
        super().__init__(f"{violation.category.value}: {violation.detail}")


# number phases -> (phase after the number's terminator, terminator token)
_NUMBER_PHASES = {
    Phase.IN_FREQ_FIRST_NUM: (Phase.IN_FREQ_COMMA, Token.COMMA),
    Phase.IN_FREQ_SECOND_NUM: (Phase.AFTER_FREQ, Token.RBRACKET),
    Phase.IN_TIME_FIRST_NUM: (Phase.IN_TIME_COMMA, Token.COMMA),
    Phase.IN_TIME_SECOND_NUM: (Phase.EXPECT_COMMA_OR_SEMICOLON, Token.RPAREN),
}
# phases expecting the first digit of a number -> number phase
_NUMBER_START = {
    Phase.IN_FREQ_OPEN: Phase.IN_FREQ_FIRST_NUM,
    Phase.IN_FREQ_COMMA: Phase.IN_FREQ_SECOND_NUM,
    Phase.IN_TIME_OPEN: Phase.IN_TIME_FIRST_NUM,
    Phase.IN_TIME_COMMA: Phase.IN_TIME_SECOND_NUM,
}
_GROUP_PHASES = frozenset(_NUMBER_PHASES) | frozenset(_NUMBER_START)


@dataclass(frozen=True)
class SlotGrammarState:
    """Position inside one slot's token sequence.

    ``expected_slot_digit`` is ``None`` when any digit may start the slot.
    After ``Done`` it holds the digit the *next* slot must carry.
    """

    phase: Phase = Phase.EXPECT_SLOT_DIGIT
    expected_slot_digit: int | None = None
    digits_in_current_number: int = 0
    number_value: int = 0
    channel: Token | None = None
    n_messages: int = 0

    @classmethod
    def start(cls, expected_slot_digit: int | None = None) -> "SlotGrammarState":
        if expected_slot_digit is not None and not 0 <= expected_slot_digit <= 9:
            raise ValueError(f"slot digit {expected_slot_digit} outside 0..9")
        return cls(expected_slot_digit=expected_slot_digit)

    def reset(self) -> "SlotGrammarState":
        return SlotGrammarState.start(self.expected_slot_digit)

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE


def _tokens(*toks) -> np.ndarray:
    mask = np.zeros(VOCAB_SIZE, dtype=bool)
    for t in toks:
        mask[int(t)] = True
    return mask


_HEX_MASK = _tokens(*HEX_TOKENS)
_CHANNEL_MASK = _tokens(*_CHANNELS)
_DIGIT_MASKS = [_tokens(HEX_TOKENS[d]) for d in range(10)]
_ANY_DIGIT_MASK = _tokens(*HEX_TOKENS[:10])


def _after_message_mask(state: SlotGrammarState) -> np.ndarray:
    if state.phase is Phase.AFTER_FREQ:
        mask = _tokens(Token.LPAREN, Token.COMMA, Token.SEMICOLON)
    elif state.phase is Phase.EXPECT_COMMA_OR_SEMICOLON or state.channel in _PDCCH:
        mask = _tokens(Token.COMMA, Token.SEMICOLON)
    else:
        mask = _tokens(Token.LBRACKET, Token.LPAREN, Token.COMMA, Token.SEMICOLON)
    # n_messages counts the messages before the current one
    if state.n_messages + 1 >= MAX_MESSAGES:
        mask[Token.COMMA] = False
    return mask


def allowed_next(state: SlotGrammarState) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens the grammar permits next."""
    p = state.phase
    if p is Phase.DONE:
        raise ValueError("slot already complete; reset the state first")
    if p is Phase.EXPECT_SLOT_DIGIT:
        if state.expected_slot_digit is None:
            return _ANY_DIGIT_MASK.copy()
        return _DIGIT_MASKS[state.expected_slot_digit].copy()
    if p is Phase.EXPECT_COLON:
        return _tokens(Token.COLON)
    if p is Phase.EXPECT_CHANNEL_OR_EMPTY:
        mask = _CHANNEL_MASK.copy()
        if state.n_messages == 0:
            mask[Token.EMPTY] = True
        return mask
    if p is Phase.IN_CHANNEL_AFTER_NAME:
        mask = _HEX_MASK.copy()
        if state.channel == Token.CH_PRACH:
            mask |= _after_message_mask(replace(state, phase=Phase.AFTER_RNTI))
        return mask
    if p is Phase.IN_RNTI_DIGIT2 or p in _NUMBER_START:
        return _HEX_MASK.copy()
    if p in _NUMBER_PHASES:
        _, terminator = _NUMBER_PHASES[p]
        mask = _tokens(terminator)
        leading_zero = state.number_value == 0
        if state.digits_in_current_number < MAX_NUMBER_DIGITS and not leading_zero:
            mask |= _HEX_MASK
        return mask
    if p is Phase.EXPECT_SEMICOLON:
        return _tokens(Token.SEMICOLON)
    return _after_message_mask(state)


def _violation_category(state: SlotGrammarState, token: int) -> Category:
    p = state.phase
    if p is Phase.EXPECT_SLOT_DIGIT:
        return Category.WRONG_SLOT_DIGIT
    if p is Phase.EXPECT_COLON:
        return Category.MISSING_COLON
    if p is Phase.EXPECT_CHANNEL_OR_EMPTY:
        return Category.EMPTY_MISPLACED if token == Token.EMPTY else Category.BAD_CHANNEL_START
    if p in _GROUP_PHASES:
        if token == Token.SEMICOLON:
            return Category.UNCLOSED_BRACKET
        if is_hex(token) or token in (Token.COMMA, Token.RBRACKET, Token.RPAREN):
            return Category.BRACKET_ARITY
        return Category.UNEXPECTED_TOKEN
    if token == Token.EMPTY:
        return Category.EMPTY_MISPLACED
    if p is Phase.EXPECT_SEMICOLON or is_channel(token):
        return Category.MISSING_SEPARATOR
    return Category.UNEXPECTED_TOKEN


def _open_group(state: SlotGrammarState, token: int) -> SlotGrammarState:
    if token == Token.LBRACKET:
        return replace(state, phase=Phase.IN_FREQ_OPEN)
    if token == Token.LPAREN:
        return replace(state, phase=Phase.IN_TIME_OPEN)
    if token == Token.COMMA:
        return replace(state, phase=Phase.EXPECT_CHANNEL_OR_EMPTY, channel=None,
                       n_messages=state.n_messages + 1)
    return _finish(replace(state, n_messages=state.n_messages + 1))


def _next_digit(digit: int | None) -> int | None:
    return None if digit is None else (digit + 1) % 10


def _finish(state: SlotGrammarState) -> SlotGrammarState:
    return replace(state, phase=Phase.DONE, channel=None,
                   expected_slot_digit=_next_digit(state.expected_slot_digit))


def feed(state: SlotGrammarState, token: int, position: int = 0) -> SlotGrammarState:
    """Advance the automaton by one token; raise :class:`IllegalToken` if forbidden."""
    token = int(token)
    if state.phase is Phase.DONE:
        raise IllegalToken(Violation(position, Category.UNEXPECTED_TOKEN,
                                     "token after end of slot"))
    if not 0 <= token < VOCAB_SIZE or not allowed_next(state)[token]:
        name = Token(token).name if 0 <= token < VOCAB_SIZE else str(token)
        raise IllegalToken(Violation(position, _violation_category(state, token),
                                     f"{name} not allowed in {state.phase.value}"))
    p = state.phase
    if p is Phase.EXPECT_SLOT_DIGIT:
        return replace(state, phase=Phase.EXPECT_COLON, expected_slot_digit=hex_value(token))
    if p is Phase.EXPECT_COLON:
        return replace(state, phase=Phase.EXPECT_CHANNEL_OR_EMPTY, n_messages=0)
    if p is Phase.EXPECT_CHANNEL_OR_EMPTY:
        if token == Token.EMPTY:
            return replace(state, phase=Phase.EXPECT_SEMICOLON)
        return replace(state, phase=Phase.IN_CHANNEL_AFTER_NAME, channel=Token(token))
    if p is Phase.IN_CHANNEL_AFTER_NAME:
        if is_hex(token):
            return replace(state, phase=Phase.IN_RNTI_DIGIT2)
        return _open_group(state, token)
    if p is Phase.IN_RNTI_DIGIT2:
        return replace(state, phase=Phase.AFTER_RNTI)
    if p in _NUMBER_START:
        return replace(state, phase=_NUMBER_START[p], digits_in_current_number=1,
                       number_value=hex_value(token))
    if p in _NUMBER_PHASES:
        if is_hex(token):
            return replace(state, digits_in_current_number=state.digits_in_current_number + 1,
                           number_value=state.number_value * 16 + hex_value(token))
        return replace(state, phase=_NUMBER_PHASES[p][0], digits_in_current_number=0,
                       number_value=0)
    if p is Phase.EXPECT_SEMICOLON:
        return _finish(state)
    return _open_group(state, token)


def validate(seq: Sequence[int], starting_slot_digit: int | None = None) -> list[Violation]:
    """Check a multi-slot token sequence; empty result means fully valid.

    After a violation the rest of that slot is skipped up to its semicolon and
    checking resumes with the next slot digit.
    """
    violations: list[Violation] = []
    state = SlotGrammarState.start(starting_slot_digit)
    skipping = False
    for pos, tok in enumerate(seq):
        tok = int(tok)
        if skipping:
            skipping = tok != Token.SEMICOLON
            continue
        try:
            state = feed(state, tok, pos)
        except IllegalToken as exc:
            violations.append(exc.violation)
            digit = state.expected_slot_digit
            if digit is None and state.phase is Phase.EXPECT_SLOT_DIGIT \
                    and is_hex(tok) and hex_value(tok) <= 9:
                digit = hex_value(tok)
            # the broken slot still occupies one slot number
            state = SlotGrammarState.start(_next_digit(digit))
            skipping = tok != Token.SEMICOLON
            continue
        if state.done:
            state = state.reset()
    if not skipping and state.phase is not Phase.EXPECT_SLOT_DIGIT:
        cat = (Category.UNCLOSED_BRACKET if state.phase in _GROUP_PHASES
               else Category.MISSING_SEPARATOR)
        violations.append(Violation(len(seq) - 1, cat, "sequence ends inside a slot"))
    return violations


class SyntaxMask:
    """Stateful mask provider for constrained sampling of one slot."""

    def __init__(self, expected_slot_digit: int | None = None):
        self.state = SlotGrammarState.start(expected_slot_digit)

    @classmethod
    def following(cls, context: Sequence[int]) -> "SyntaxMask":
        """Mask for the slot that follows ``context`` (which ends at a slot boundary)."""
        return cls(next_slot_digit(context))

    def allowed(self) -> np.ndarray:
        return allowed_next(self.state)

    def push(self, token: int) -> None:
        self.state = feed(self.state, token)

    @property
    def done(self) -> bool:
        return self.state.done


def next_slot_digit(context: Sequence[int]) -> int | None:
    """Digit the slot after ``context`` must carry, or ``None`` if unknown."""
    for chunk in reversed(split_slots(context)):
        if chunk[-1] == Token.SEMICOLON and is_hex(chunk[0]) and hex_value(chunk[0]) <= 9:
            return (hex_value(chunk[0]) + 1) % 10
    return None
