import numpy as np
import pytest

from slotcast.nanoformer import init_params, loss_and_grads, loss_only
from slotcast.phylog import Axis, ChannelKind, ChannelMessage, Interval, SlotId, SlotRecord
from slotcast.slottok import Token as T
from slotcast.slottok import encode_stream

DIG = [T(T.D0 + i) for i in range(16)]

# slot 8 of the worked tokenization example: DCI 1_0 + PDSCH for RNTI 0x01
WORKED_SLOT_TOKENS = [
    DIG[8], T.COLON, T.CH_PDCCH_DCI_1_0, DIG[0], DIG[1], T.COMMA,
    T.CH_PDSCH, DIG[0], DIG[1], T.LBRACKET, DIG[0], T.COMMA, DIG[6], DIG[0], T.RBRACKET,
    T.LPAREN, DIG[1], T.COMMA, DIG[0xE], T.RPAREN, T.SEMICOLON,
]

# the model output for the same slot, which appends a PUCCH the reference lacks
MODEL_OUTPUT_TOKENS = WORKED_SLOT_TOKENS[:-1] + [
    T.COMMA, T.CH_PUCCH, DIG[0], DIG[1], T.LPAREN, DIG[0], T.COMMA, DIG[0xE], T.RPAREN,
    T.SEMICOLON,
]


def worked_slot_record(sfn=265):
    return SlotRecord(SlotId(sfn, 8), (
        ChannelMessage(ChannelKind.PDCCH_DCI_1_0, 0x01),
        ChannelMessage(ChannelKind.PDSCH, 0x01, Interval(0, 96, Axis.FREQUENCY_PRB),
                       Interval(1, 14, Axis.TIME_SYMBOL)),
    ))


PERIODIC_PATTERN = (
    (ChannelMessage(ChannelKind.PDCCH_DCI_1_0, 0x01),
     ChannelMessage(ChannelKind.PDSCH, 0x01, Interval(0, 96, Axis.FREQUENCY_PRB),
                    Interval(1, 14, Axis.TIME_SYMBOL))),
    (ChannelMessage(ChannelKind.PUCCH, 0x01, None, Interval(0, 14, Axis.TIME_SYMBOL)),),
    (),
)


def periodic_records(n_slots):
    """A strictly periodic stream cycling through three slot contents."""
    sid = SlotId(0, 0)
    out = []
    for i in range(n_slots):
        out.append(SlotRecord(sid, PERIODIC_PATTERN[i % 3]))
        sid = sid.next()
    return out


def finite_difference_errors(cfg, n_coords, seed=0, eps=1e-4):
    p = init_params(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 32, size=(2, cfg.context_len + 1))
    inp, tgt = x[:, :-1], x[:, 1:]
    _, grads = loss_and_grads(p, inp, tgt)
    names = list(p.tensors)
    errors = []
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        arr = p.tensors[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + eps
        up = loss_only(p, inp, tgt)
        arr[idx] = old - eps
        down = loss_only(p, inp, tgt)
        arr[idx] = old
        fd = (up - down) / (2 * eps)
        an = float(grads[name][idx])
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return errors


# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}")


@pytest.fixture
def worked_slot():
    return worked_slot_record()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


__all__ = ["DIG", "WORKED_SLOT_TOKENS", "MODEL_OUTPUT_TOKENS", "worked_slot_record", "periodic_records",
           "encode_stream", "finite_difference_errors", "ACCEPTANCE"]
