"""Slot tokenizer over the fixed 32-entry vocabulary.

A slot is encoded as::

    <slot digit> : <message> , <message> ... ;

where each message is a channel token, an optional two-digit RNTI, an
optional ``[start,end]`` PRB group and an optional ``(start,end)`` symbol
group. Interval bounds use minimal-width uppercase hex, one token per digit.
An empty slot is ``<digit> : EMPTY ;``.
"""

from __future__ import annotations

import enum
import hashlib
from typing import Iterable, Sequence

import numpy as np

from .phylog import Axis, ChannelKind, ChannelMessage, Interval, SlotId, SlotRecord

VOCAB_SIZE = 32


class Token(enum.IntEnum):
    EMPTY = 0
    D0 = 1
    D1 = 2
    D2 = 3
    D3 = 4
    D4 = 5
    D5 = 6
    D6 = 7
    D7 = 8
    D8 = 9
    D9 = 10
    DA = 11
    DB = 12
    DC = 13
    DD = 14
    DE = 15
    DF = 16
    COLON = 17
    SEMICOLON = 18
    COMMA = 19
    SLASH = 20
    LBRACKET = 21
    RBRACKET = 22
    LPAREN = 23
    RPAREN = 24
    CH_PDCCH_PLAIN = 25
    CH_PDSCH = 26
    CH_PRACH = 27
    CH_PUCCH = 28
    CH_PUSCH = 29
    CH_PDCCH_DCI_0_0 = 30
    CH_PDCCH_DCI_1_0 = 31


assert len(Token) == VOCAB_SIZE

HEX_TOKENS = tuple(Token(Token.D0 + i) for i in range(16))

CHANNEL_TOKENS = {
    ChannelKind.PDCCH_PLAIN: Token.CH_PDCCH_PLAIN,
    ChannelKind.PDSCH: Token.CH_PDSCH,
    ChannelKind.PRACH: Token.CH_PRACH,
    ChannelKind.PUCCH: Token.CH_PUCCH,
    ChannelKind.PUSCH: Token.CH_PUSCH,
    ChannelKind.PDCCH_DCI_0_0: Token.CH_PDCCH_DCI_0_0,
    ChannelKind.PDCCH_DCI_1_0: Token.CH_PDCCH_DCI_1_0,
}
TOKEN_CHANNELS = {tok: kind for kind, tok in CHANNEL_TOKENS.items()}

# display strings, in id order
_SYMBOLS = (["EMPTY"] + [f"{i:X}" for i in range(16)]
            + [":", ";", ",", "/", "[", "]", "(", ")"]
            + ["PDCCH", "PDSCH", "PRACH", "PUCCH", "PUSCH", "PDCCH-DCI:0_0", "PDCCH-DCI:1_0"])
_FROM_SYMBOL = {s: i for i, s in enumerate(_SYMBOLS)}


def is_hex(tok: int) -> bool:
    return Token.D0 <= tok <= Token.DF


def is_channel(tok: int) -> bool:
    return tok >= Token.CH_PDCCH_PLAIN


def hex_value(tok: int) -> int:
    return int(tok) - Token.D0


def vocab_hash() -> str:
    """Stable fingerprint of the vocabulary (names and ids)."""
    text = "\n".join(f"{t.value}:{t.name}" for t in Token)
    return hashlib.sha256(text.encode()).hexdigest()


class ValueOutOfRange(ValueError):
    pass


class TokenSyntaxError(ValueError):
    """Token sequence does not decode; ``category`` names the violation kind."""

    def __init__(self, category: str, position: int, detail: str = ""):
        self.category = category
        self.position = position
        self.detail = detail
        super().__init__(f"{category} at token {position}" + (f": {detail}" if detail else ""))


def hex_digits(value: int, width: int = 0) -> list[Token]:
    if value < 0:
        raise ValueOutOfRange(f"negative value {value}")
    text = f"{value:0{width}X}" if width else f"{value:X}"
    return [HEX_TOKENS[int(c, 16)] for c in text]


MAX_INTERVAL_VALUE = 0xFF  # two hex digits per bound


def _interval_tokens(iv: Interval, open_tok: Token, close_tok: Token) -> list[Token]:
    if iv.end > MAX_INTERVAL_VALUE:
        raise ValueOutOfRange(f"interval bound {iv.end} needs more than two hex digits")
    return [open_tok, *hex_digits(iv.start), Token.COMMA, *hex_digits(iv.end), close_tok]


def encode_message(msg: ChannelMessage) -> list[Token]:
    out = [CHANNEL_TOKENS[msg.kind]]
    if msg.rnti_suffix is not None:
        if not 0 <= msg.rnti_suffix <= 0xFF:
            raise ValueOutOfRange(f"rnti suffix {msg.rnti_suffix} outside 0..0xFF")
        out += hex_digits(msg.rnti_suffix, width=2)
    if msg.freq is not None:
        out += _interval_tokens(msg.freq, Token.LBRACKET, Token.RBRACKET)
    if msg.time is not None:
        out += _interval_tokens(msg.time, Token.LPAREN, Token.RPAREN)
    return out


def encode_slot(rec: SlotRecord) -> list[int]:
    slot = rec.slot_id.slot
    if not 0 <= slot <= 9:
        raise ValueOutOfRange(f"slot {slot} outside 0..9")
    out: list[int] = [HEX_TOKENS[slot], Token.COLON]
    if rec.is_empty:
        out.append(Token.EMPTY)
    for i, msg in enumerate(rec.messages):
        if i:
            out.append(Token.COMMA)
        out += encode_message(msg)
    out.append(Token.SEMICOLON)
    return [int(t) for t in out]


def encode_stream(records: Iterable[SlotRecord]) -> list[int]:
    out: list[int] = []
    for rec in records:
        out += encode_slot(rec)
    return out


class _Reader:
    def __init__(self, seq: Sequence[int]):
        self.seq = [int(t) for t in seq]
        self.pos = 0

    def peek(self) -> int | None:
        return self.seq[self.pos] if self.pos < len(self.seq) else None

    def take(self) -> int:
        tok = self.peek()
        if tok is None:
            raise TokenSyntaxError("UnexpectedToken", self.pos, "sequence ended early")
        self.pos += 1
        return tok

    def expect(self, tok: Token, category: str) -> None:
        got = self.take()
        if got != tok:
            raise TokenSyntaxError(category, self.pos - 1, f"expected {tok.name}")

    def number(self, closer: Token, max_digits: int = 2) -> int:
        digits = []
        while self.peek() is not None and is_hex(self.peek()):
            digits.append(hex_value(self.take()))
        if self.peek() is None or self.peek() == Token.SEMICOLON:
            raise TokenSyntaxError("UnclosedBracket", self.pos, f"missing {closer.name}")
        if not digits or len(digits) > max_digits:
            raise TokenSyntaxError("BracketArity", self.pos, "bad number width")
        value = 0
        for d in digits:
            value = value * 16 + d
        return value


def _decode_interval(r: _Reader, close_tok: Token, axis: Axis) -> Interval:
    start = r.number(close_tok)
    r.expect(Token.COMMA, "BracketArity")
    end = r.number(close_tok)
    r.expect(close_tok, "BracketArity")
    try:
        return Interval(start, end, axis)
    except ValueError as exc:
        raise TokenSyntaxError("UnexpectedToken", r.pos - 1, str(exc)) from None


def decode_tokens(seq: Sequence[int], sfn: int = 0) -> SlotRecord:
    """Inverse of :func:`encode_slot` for a single slot.

    The SFN is not part of the encoding; ``sfn`` fills it in.
    """
    r = _Reader(seq)
    first = r.take()
    if not is_hex(first) or hex_value(first) > 9:
        raise TokenSyntaxError("WrongSlotDigit", 0, "slot must start with a digit 0-9")
    slot_id = SlotId(sfn, hex_value(first))
    r.expect(Token.COLON, "MissingColon")
    messages: list[ChannelMessage] = []
    if r.peek() == Token.EMPTY:
        r.take()
        r.expect(Token.SEMICOLON, "MissingSeparator")
    else:
        while True:
            tok = r.take()
            if not is_channel(tok):
                raise TokenSyntaxError("BadChannelStart", r.pos - 1, "expected a channel token")
            kind = TOKEN_CHANNELS[Token(tok)]
            rnti = freq = time = None
            if r.peek() is not None and is_hex(r.peek()):
                hi = hex_value(r.take())
                nxt = r.take()
                if not is_hex(nxt):
                    raise TokenSyntaxError("UnexpectedToken", r.pos - 1, "RNTI needs two digits")
                rnti = hi * 16 + hex_value(nxt)
            if r.peek() == Token.LBRACKET:
                r.take()
                freq = _decode_interval(r, Token.RBRACKET, Axis.FREQUENCY_PRB)
            if r.peek() == Token.LPAREN:
                r.take()
                time = _decode_interval(r, Token.RPAREN, Axis.TIME_SYMBOL)
            try:
                messages.append(ChannelMessage(kind, rnti, freq, time))
            except ValueError as exc:
                raise TokenSyntaxError("UnexpectedToken", r.pos - 1, str(exc)) from None
            sep = r.take()
            if sep == Token.SEMICOLON:
                break
            if sep != Token.COMMA:
                raise TokenSyntaxError("MissingSeparator", r.pos - 1, "expected ',' or ';'")
    if r.peek() is not None:
        raise TokenSyntaxError("UnexpectedToken", r.pos, "tokens after ';'")
    return SlotRecord(slot_id, tuple(messages))


def split_slots(seq: Sequence[int]) -> list[list[int]]:
    """Split a token stream after every SEMICOLON; a trailing partial slot is kept."""
    slots, cur = [], []
    for tok in seq:
        cur.append(int(tok))
        if tok == Token.SEMICOLON:
            slots.append(cur)
            cur = []
    if cur:
        slots.append(cur)
    return slots


def decode_stream(seq: Sequence[int], start_sfn: int = 0) -> list[SlotRecord]:
    out = []
    sfn = start_sfn
    prev = None
    for chunk in split_slots(seq):
        rec = decode_tokens(chunk, sfn)
        if prev is not None and rec.slot <= prev:
            sfn = (sfn + 1) % 1024
            rec = SlotRecord(SlotId(sfn, rec.slot), rec.messages)
        prev = rec.slot
        out.append(rec)
    return out


# --------------------------------------------------------------------------
# rendering and token files

def render(seq: Iterable[int]) -> str:
    return " ".join(_SYMBOLS[int(t)] for t in seq)


def parse_rendered(text: str) -> list[int]:
    out = []
    for word in text.split():
        if word not in _FROM_SYMBOL:
            raise ValueError(f"unknown token symbol {word!r}")
        out.append(_FROM_SYMBOL[word])
    return out


def render_lines(seq: Sequence[int]) -> str:
    """Human-readable ``.tokens`` text: one slot per line."""
    return "".join(render(chunk) + "\n" for chunk in split_slots(seq))


TOKEN_FILE_MAGIC = b"SLTK1"


def write_token_file(seq: Sequence[int], path) -> None:
    """Binary token file: ``SLTK1`` magic then one byte per token id."""
    arr = np.asarray(seq, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
        raise ValueOutOfRange("token id outside vocabulary")
    with open(path, "wb") as fh:
        fh.write(TOKEN_FILE_MAGIC)
        fh.write(arr.astype(np.uint8).tobytes())


def read_token_file(path) -> list[int]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(TOKEN_FILE_MAGIC):
        raise ValueError(f"{path}: not a token file (bad magic)")
    ids = np.frombuffer(data[len(TOKEN_FILE_MAGIC):], dtype=np.uint8)
    if ids.size and ids.max() >= VOCAB_SIZE:
        raise ValueOutOfRange(f"{path}: token id outside vocabulary")
    return ids.astype(int).tolist()
