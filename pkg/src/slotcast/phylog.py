"""Physical-layer log parsing.

Turns srsRAN-style PHY log text into :class:`SlotRecord` objects and writes
or reads the canonical one-line-per-slot corpus format.

A log record looks like::

    2024-11-26T08:33:52.600134 [PHY] [265.8]
    PDCCH: format=1_0 rnti=0x4601
    PDSCH: rnti=0x4601 prb=[0, 96) symb=[1, 14)

Continuation lines (those without a ``<timestamp> [LAYER]`` header) belong to
the most recent header; :func:`parse_log` joins them with ``" / "`` before
handing the record to :func:`parse_line`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

SFN_PERIOD = 1024
SLOTS_PER_FRAME = 10
SLOT_CYCLE = SFN_PERIOD * SLOTS_PER_FRAME
MAX_PRB = 275
MAX_SYMBOL = 14


class PhyLogError(ValueError):
    """Base class for log parsing errors.

    Carries the 1-based line number (``None`` when unknown) and the
    offending text fragment.
    """

    def __init__(self, message: str, line_no: int | None = None, fragment: str = ""):
        self.line_no = line_no
        self.fragment = fragment
        self.message = message
        where = f"line {line_no}: " if line_no is not None else ""
        frag = f" [{fragment!r}]" if fragment else ""
        super().__init__(f"{where}{message}{frag}")

    def at_line(self, line_no: int) -> "PhyLogError":
        if self.line_no is None:
            self.line_no = line_no
            self.args = (f"line {line_no}: {self.message}"
                         + (f" [{self.fragment!r}]" if self.fragment else ""),)
        return self


class MalformedLine(PhyLogError):
    pass


class UnknownChannel(PhyLogError):
    pass


class BadInterval(PhyLogError):
    pass


class BadRnti(PhyLogError):
    pass


class NonMonotonicSlot(PhyLogError):
    pass


class ChannelKind(enum.Enum):
    PDCCH_DCI_0_0 = "PDCCH_DCI_0_0"
    PDCCH_DCI_1_0 = "PDCCH_DCI_1_0"
    PDCCH_PLAIN = "PDCCH_PLAIN"
    PDSCH = "PDSCH"
    PUSCH = "PUSCH"
    PUCCH = "PUCCH"
    PRACH = "PRACH"

    @property
    def is_pdcch(self) -> bool:
        return self in (ChannelKind.PDCCH_DCI_0_0, ChannelKind.PDCCH_DCI_1_0,
                        ChannelKind.PDCCH_PLAIN)

    @property
    def log_name(self) -> str:
        return "PDCCH" if self.is_pdcch else self.value


class Axis(enum.Enum):
    FREQUENCY_PRB = "frequency_prb"
    TIME_SYMBOL = "time_symbol"

    @property
    def limit(self) -> int:
        return MAX_PRB if self is Axis.FREQUENCY_PRB else MAX_SYMBOL


@dataclass(frozen=True, order=True)
class SlotId:
    sfn: int
    slot: int

    def __post_init__(self):
        if not 0 <= self.sfn < SFN_PERIOD:
            raise ValueError(f"sfn {self.sfn} outside 0..{SFN_PERIOD - 1}")
        if not 0 <= self.slot < SLOTS_PER_FRAME:
            raise ValueError(f"slot {self.slot} outside 0..{SLOTS_PER_FRAME - 1}")

    @property
    def index(self) -> int:
        """Position in the 10240-slot SFN cycle."""
        return self.sfn * SLOTS_PER_FRAME + self.slot

    @classmethod
    def from_index(cls, index: int) -> "SlotId":
        index %= SLOT_CYCLE
        return cls(index // SLOTS_PER_FRAME, index % SLOTS_PER_FRAME)

    def next(self) -> "SlotId":
        return SlotId.from_index(self.index + 1)


@dataclass(frozen=True)
class Interval:
    """Half-open ``[start, end)`` resource interval."""

    start: int
    end: int
    axis: Axis

    def __post_init__(self):
        if self.start < 0 or self.end < 0:
            raise ValueError(f"negative interval bound in [{self.start}, {self.end})")
        if self.start >= self.end:
            raise ValueError(f"empty interval [{self.start}, {self.end})")
        if self.end > self.axis.limit:
            raise ValueError(f"{self.axis.value} bound {self.end} exceeds {self.axis.limit}")

    def overlaps(self, other: "Interval") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class ChannelMessage:
    kind: ChannelKind
    rnti_suffix: int | None = None
    freq: Interval | None = None
    time: Interval | None = None

    def __post_init__(self):
        if self.kind.is_pdcch and (self.freq is not None or self.time is not None):
            raise ValueError("PDCCH messages carry no resource intervals")
        if self.rnti_suffix is not None and not 0 <= self.rnti_suffix <= 0xFF:
            raise ValueError(f"rnti suffix {self.rnti_suffix:#x} does not fit in one byte")
        if self.freq is not None and self.freq.axis is not Axis.FREQUENCY_PRB:
            raise ValueError("freq interval must be on the frequency axis")
        if self.time is not None and self.time.axis is not Axis.TIME_SYMBOL:
            raise ValueError("time interval must be on the time axis")


@dataclass(frozen=True)
class SlotRecord:
    slot_id: SlotId
    messages: tuple[ChannelMessage, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.messages, tuple):
            object.__setattr__(self, "messages", tuple(self.messages))

    @property
    def slot(self) -> int:
        return self.slot_id.slot

    @property
    def is_empty(self) -> bool:
        return not self.messages


# --------------------------------------------------------------------------
# line parsing

_HEADER_RE = re.compile(r"^\s*(?P<ts>\S+)\s+\[(?P<layer>[A-Za-z0-9_-]+)\]\s*(?P<rest>.*)$")
_SLOT_RE = re.compile(r"^\[(?P<sfn>\d+)\.(?P<slot>\d+)\]\s*(?P<body>.*)$")
_CLAUSE_RE = re.compile(r"(?<![\w=])([A-Za-z][A-Za-z0-9_]*):(?=\s|$)")
_KV_RE = re.compile(r"(\w+)=(\[[^\]\)]*[\]\)]|\S+)")
_INTERVAL_RE = re.compile(r"^\[\s*(\d+)\s*,\s*(\d+)\s*\)$")
_SEPARATORS = " \t/;|"

_CHANNEL_NAMES = {"PDCCH", "PDSCH", "PUSCH", "PUCCH", "PRACH"}


_RNTI_RE = re.compile(r"^(?:0[xX])?([0-9a-fA-F]+)$")


def _parse_rnti(value: str) -> int:
    m = _RNTI_RE.match(value)
    if not m:
        raise BadRnti("RNTI is not hexadecimal", fragment=value)
    return int(m.group(1), 16) & 0xFF


def _parse_interval(value: str, axis: Axis) -> Interval:
    m = _INTERVAL_RE.match(value.strip())
    if not m:
        raise BadInterval("interval must look like [start, end)", fragment=value)
    start, end = int(m.group(1)), int(m.group(2))
    try:
        return Interval(start, end, axis)
    except ValueError as exc:
        raise BadInterval(str(exc), fragment=value) from None


def _pdcch_kind(fmt: str | None) -> ChannelKind:
    if fmt is None:
        return ChannelKind.PDCCH_PLAIN
    # 0_x are uplink grants, 1_x downlink assignments
    if fmt.startswith("0_"):
        return ChannelKind.PDCCH_DCI_0_0
    if fmt.startswith("1_"):
        return ChannelKind.PDCCH_DCI_1_0
    raise MalformedLine("unsupported DCI format", fragment=f"format={fmt}")


def _parse_clause(name: str, body: str) -> ChannelMessage:
    if name not in _CHANNEL_NAMES:
        raise UnknownChannel(f"unknown channel {name!r}", fragment=f"{name}:{body}".strip())
    fields = dict(_KV_RE.findall(body))
    rnti = _parse_rnti(fields["rnti"]) if "rnti" in fields else None
    if name == "PDCCH":
        # PDCCH resources are not tokenized; prb/symb and friends are dropped
        return ChannelMessage(_pdcch_kind(fields.get("format")), rnti)
    freq = _parse_interval(fields["prb"], Axis.FREQUENCY_PRB) if "prb" in fields else None
    time = _parse_interval(fields["symb"], Axis.TIME_SYMBOL) if "symb" in fields else None
    return ChannelMessage(ChannelKind(name), rnti, freq, time)


def _parse_body(body: str) -> list[ChannelMessage]:
    matches = list(_CLAUSE_RE.finditer(body))
    lead = body[: matches[0].start()] if matches else body
    if lead.strip(_SEPARATORS):
        raise MalformedLine("text outside any channel clause", fragment=lead.strip())
    messages = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(body)
        clause_body = body[m.end():end].rstrip(_SEPARATORS)
        messages.append(_parse_clause(m.group(1), clause_body))
    return messages


def _split_header(line: str) -> tuple[str, str] | None:
    m = _HEADER_RE.match(line)
    if not m:
        return None
    return m.group("layer"), m.group("rest")


def parse_line(line: str, line_no: int | None = None) -> tuple[SlotId, list[ChannelMessage]]:
    """Parse one (joined) PHY record into its slot id and channel messages."""
    try:
        header = _split_header(line)
        if header is None or header[0] != "PHY":
            raise MalformedLine("missing '<timestamp> [PHY]' header", fragment=line.strip()[:60])
        m = _SLOT_RE.match(header[1])
        if not m:
            raise MalformedLine("missing '[sfn.slot]' header", fragment=header[1][:60])
        try:
            slot_id = SlotId(int(m.group("sfn")), int(m.group("slot")))
        except ValueError as exc:
            raise MalformedLine(str(exc), fragment=f"[{m.group('sfn')}.{m.group('slot')}]") from None
        return slot_id, _parse_body(m.group("body"))
    except PhyLogError as exc:
        if line_no is not None:
            exc.at_line(line_no)
        raise


def _records(lines: Iterable[str]) -> Iterator[tuple[int, str]]:
    """Yield (first line number, joined record text) for every PHY record."""
    current: list[str] | None = None
    start = 0
    skipping = False
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        header = _split_header(line)
        if header is not None:
            if current is not None:
                yield start, " / ".join(current)
            current, skipping = None, False
            if header[0] != "PHY":
                # other layers are out of scope, together with their continuations
                skipping = True
                continue
            current, start = [line.strip()], line_no
        elif skipping:
            continue
        elif current is None:
            raise MalformedLine("continuation line without a record header",
                                line_no, line.strip()[:60])
        else:
            current.append(line.strip())
    if current is not None:
        yield start, " / ".join(current)


def parse_log(lines: Iterable[str]) -> list[SlotRecord]:
    """Parse a PHY log into a contiguous list of slot records.

    Records sharing a ``[sfn.slot]`` header are merged in textual order.
    Slots missing from the log are filled in as empty records. A slot id
    going backwards raises :class:`NonMonotonicSlot`; the SFN wrap from
    1023 to 0 counts as forward progress.
    """
    out: list[SlotRecord] = []
    for line_no, text in _records(lines):
        slot_id, messages = parse_line(text, line_no)
        if out:
            last = out[-1].slot_id
            step = (slot_id.index - last.index) % SLOT_CYCLE
            if step == 0:
                out[-1] = SlotRecord(last, out[-1].messages + tuple(messages))
                continue
            if step > SLOT_CYCLE // 2:
                raise NonMonotonicSlot(
                    f"slot [{slot_id.sfn}.{slot_id.slot}] after [{last.sfn}.{last.slot}]",
                    line_no, f"[{slot_id.sfn}.{slot_id.slot}]")
            for k in range(1, step):
                out.append(SlotRecord(SlotId.from_index(last.index + k)))
        out.append(SlotRecord(slot_id, tuple(messages)))
    return out


# --------------------------------------------------------------------------
# rendering

def _fmt_interval(iv: Interval) -> str:
    return f"[{iv.start}, {iv.end})"


def render_line(rec: SlotRecord, timestamp: str = "1970-01-01T00:00:00.000000") -> str:
    """Render a slot record as a canonical single-line PHY log record."""
    parts = [f"{timestamp} [PHY] [{rec.slot_id.sfn}.{rec.slot_id.slot}]"]
    clauses = []
    for msg in rec.messages:
        fields = []
        if msg.kind is ChannelKind.PDCCH_DCI_0_0:
            fields.append("format=0_0")
        elif msg.kind is ChannelKind.PDCCH_DCI_1_0:
            fields.append("format=1_0")
        if msg.rnti_suffix is not None:
            fields.append(f"rnti=0x{msg.rnti_suffix:04x}")
        if msg.freq is not None:
            fields.append(f"prb={_fmt_interval(msg.freq)}")
        if msg.time is not None:
            fields.append(f"symb={_fmt_interval(msg.time)}")
        clauses.append(" ".join([f"{msg.kind.log_name}:"] + fields))
    if clauses:
        parts.append(" / ".join(clauses))
    return " ".join(parts)


# --------------------------------------------------------------------------
# canonical corpus format
#
#   # comment / metadata lines: "# key=value"
#   <slot_digit>|<message>|<message>...
#   message := KIND[:RR[:PS,PE[:TS,TE]]]
#
# KIND is the ChannelKind name, RR the two-digit uppercase hex RNTI suffix,
# PS,PE / TS,TE decimal half-open PRB / symbol bounds. Absent fields are left
# empty so later fields stay positional ("PUCCH:0A::0,14"); trailing empty
# fields are dropped. An empty slot is just the digit ("7").

def format_message(msg: ChannelMessage) -> str:
    fields = [msg.kind.value,
              "" if msg.rnti_suffix is None else f"{msg.rnti_suffix:02X}",
              "" if msg.freq is None else f"{msg.freq.start},{msg.freq.end}",
              "" if msg.time is None else f"{msg.time.start},{msg.time.end}"]
    while fields[-1] == "":
        fields.pop()
    return ":".join(fields)


def format_corpus_line(rec: SlotRecord) -> str:
    return "|".join([str(rec.slot)] + [format_message(m) for m in rec.messages])


def _parse_corpus_interval(text: str, axis: Axis, line_no: int) -> Interval | None:
    if not text:
        return None
    try:
        start, end = (int(v) for v in text.split(","))
        return Interval(start, end, axis)
    except ValueError:
        raise BadInterval("bad corpus interval", line_no, text) from None


def parse_message(text: str, line_no: int | None = None) -> ChannelMessage:
    fields = text.split(":")
    if len(fields) > 4:
        raise MalformedLine("too many message fields", line_no, text)
    fields += [""] * (4 - len(fields))
    try:
        kind = ChannelKind(fields[0])
    except ValueError:
        raise UnknownChannel(f"unknown channel {fields[0]!r}", line_no, text) from None
    rnti = None
    if fields[1]:
        if not re.fullmatch(r"[0-9A-F]{2}", fields[1]):
            raise BadRnti("corpus RNTI must be two uppercase hex digits", line_no, fields[1])
        rnti = int(fields[1], 16)
    freq = _parse_corpus_interval(fields[2], Axis.FREQUENCY_PRB, line_no)
    time = _parse_corpus_interval(fields[3], Axis.TIME_SYMBOL, line_no)
    try:
        return ChannelMessage(kind, rnti, freq, time)
    except ValueError as exc:
        raise MalformedLine(str(exc), line_no, text) from None


def write_corpus(records: Iterable[SlotRecord], fh, meta: dict | None = None) -> None:
    """Write records in the canonical corpus format.

    ``meta`` entries become ``# key=value`` header lines; ``start_sfn`` is
    always written so the reader can restore full slot ids.
    """
    records = list(records)
    meta = dict(meta or {})
    if records:
        meta.setdefault("start_sfn", records[0].slot_id.sfn)
    for key, value in meta.items():
        fh.write(f"# {key}={value}\n")
    prev = None
    for rec in records:
        if prev is not None and rec.slot_id != prev.next():
            raise ValueError(f"records not contiguous at [{rec.slot_id.sfn}.{rec.slot}]")
        fh.write(format_corpus_line(rec) + "\n")
        prev = rec.slot_id


def read_corpus(lines: Iterable[str]) -> tuple[list[SlotRecord], dict[str, str]]:
    """Read a canonical corpus; returns (records, header metadata)."""
    meta: dict[str, str] = {}
    records: list[SlotRecord] = []
    current: SlotId | None = None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        digit, *msgs = line.split("|")
        if not (len(digit) == 1 and digit.isdigit()):
            raise MalformedLine("corpus line must start with a slot digit", line_no, digit)
        if current is None:
            current = SlotId(int(meta.get("start_sfn", 0)) % SFN_PERIOD, int(digit))
        else:
            current = current.next()
            if current.slot != int(digit):
                raise NonMonotonicSlot(
                    f"expected slot digit {current.slot}, found {digit}", line_no, line[:40])
        records.append(SlotRecord(current, tuple(parse_message(m, line_no) for m in msgs)))
    return records, meta
