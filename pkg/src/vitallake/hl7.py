"""HL7v2 message parsing/serialization and MLLP byte framing.

Every ingress path goes through this module: TCP chunks are reassembled
into MLLP frames (0x0B payload 0x1C 0x0D), frame payloads are parsed into
a segment/field tree honoring the delimiters declared in MSH-1/MSH-2, and
the tree serializes back to pipe-and-hat text.

Tree shape: a segment field is repetitions -> components -> subcomponents,
with unescaped text at the leaves. Nodes are addressable by path strings
such as "OBX-5" or "OBX-3.1"; a path that lands on a single leaf returns
the unescaped leaf text, a path onto a wider node returns its serialized
(re-escaped) form, so get("MSH-9") yields e.g. "ORU^R01".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

MLLP_START = b"\x0b"  # VT
MLLP_END = b"\x1c"  # FS
MLLP_CR = b"\x0d"  # CR

DEFAULT_MAX_FRAME = 1 << 20  # 1 MiB

_SEG_ID_RE = re.compile(r"^[A-Z][A-Z0-9]{2}$")
_PATH_RE = re.compile(r"^([A-Z][A-Z0-9]{2})(?:\[(\d+)\])?-(\d+)(?:\.(\d+)(?:\.(\d+))?)?$")
_SEG_SPLIT_RE = re.compile(r"\r\n|\r|\n")


class Hl7Error(Exception):
    """Base error for this module."""


class ParseError(Hl7Error):
    pass


# Field = repetitions -> components -> subcomponents (unescaped text leaves)
FieldValue = list[list[list[str]]]


@dataclass(frozen=True)
class Delimiters:
    field: str = "|"
    component: str = "^"
    repetition: str = "~"
    escape: str = "\\"
    subcomponent: str = "&"

    @property
    def encoding_chars(self) -> str:
        return self.component + self.repetition + self.escape + self.subcomponent


def _unescape(text: str, d: Delimiters) -> str:
    if d.escape not in text:
        return text
    table = {
        "F": d.field,
        "S": d.component,
        "R": d.repetition,
        "E": d.escape,
        "T": d.subcomponent,
    }
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != d.escape:
            out.append(ch)
            i += 1
            continue
        j = text.find(d.escape, i + 1)
        if j < 0:  # lone escape char, keep verbatim
            out.append(text[i:])
            break
        body = text[i + 1 : j]
        if body in table:
            out.append(table[body])
        else:  # unknown escape sequence (\X0D\, \.br\, ...) kept opaque
            out.append(text[i : j + 1])
        i = j + 1
    return "".join(out)


def _escape(text: str, d: Delimiters) -> str:
    table = {
        d.escape: "E",
        d.field: "F",
        d.component: "S",
        d.repetition: "R",
        d.subcomponent: "T",
    }
    if not any(c in table for c in text):
        return text
    return "".join(d.escape + table[c] + d.escape if c in table else c for c in text)


def _parse_field(raw: str, d: Delimiters) -> FieldValue:
    return [
        [
            [_unescape(sub, d) for sub in comp.split(d.subcomponent)]
            for comp in rep.split(d.component)
        ]
        for rep in raw.split(d.repetition)
    ]


def _serialize_field(value: FieldValue, d: Delimiters) -> str:
    return d.repetition.join(
        d.component.join(
            d.subcomponent.join(_escape(sub, d) for sub in comp) for comp in rep
        )
        for rep in value
    )


def _leaf_field(text: str) -> FieldValue:
    return [[[text]]]


@dataclass
class Segment:
    """One HL7 segment: a 3-char id plus positional fields (1-based on the wire)."""

    id: str
    fields: list[FieldValue] = field(default_factory=list)

    def field_value(self, index: int) -> FieldValue | None:
        """Return field by 1-based HL7 index, None when absent."""
        if 1 <= index <= len(self.fields):
            return self.fields[index - 1]
        return None


@dataclass(frozen=True)
class MessageHeader:
    sending_app: str
    sending_facility: str
    message_ts: str
    message_type: str
    control_id: str
    version: str


@dataclass
class Hl7Message:
    raw: str
    segments: list[Segment]
    delimiters: Delimiters

    @property
    def header(self) -> MessageHeader:
        return MessageHeader(
            sending_app=self.get("MSH-3"),
            sending_facility=self.get("MSH-4"),
            message_ts=self.get("MSH-7"),
            message_type=self.get("MSH-9"),
            control_id=self.get("MSH-10"),
            version=self.get("MSH-12"),
        )

    def segments_named(self, seg_id: str) -> list[Segment]:
        return [s for s in self.segments if s.id == seg_id]

    def get(self, path: str) -> str:
        """Resolve a "SEG-f", "SEG-f.c", "SEG-f.c.s" or "SEG[n]-f" path.

        Returns "" for anything absent. Collapses to the unescaped leaf when
        the addressed node holds a single value; otherwise returns the
        serialized (escaped) subtree text.
        """
        m = _PATH_RE.match(path)
        if not m:
            raise ValueError(f"bad path: {path!r}")
        seg_id, occ, f, c, s = m.groups()
        occurrences = self.segments_named(seg_id)
        idx = int(occ) - 1 if occ else 0
        if idx < 0 or idx >= len(occurrences):
            return ""
        value = occurrences[idx].field_value(int(f))
        if value is None:
            return ""
        d = self.delimiters
        if c is None:
            if len(value) == 1 and len(value[0]) == 1 and len(value[0][0]) == 1:
                return value[0][0][0]
            return _serialize_field(value, d)
        comps = value[0]  # component paths address the first repetition
        ci = int(c) - 1
        if ci < 0 or ci >= len(comps):
            return ""
        comp = comps[ci]
        if s is None:
            if len(comp) == 1:
                return comp[0]
            return d.subcomponent.join(_escape(x, d) for x in comp)
        si = int(s) - 1
        if si < 0 or si >= len(comp):
            return ""
        return comp[si]


def parse_message(text: str) -> Hl7Message:
    """Parse pipe-and-hat text into a segment tree.

    The first segment must be MSH; its MSH-1/MSH-2 declare the delimiters
    used everywhere else. Unknown segment ids pass through opaquely.
    """
    if not text.startswith("MSH"):
        raise ParseError("message must start with MSH")
    if len(text) < 9:
        raise ParseError("message too short for an MSH segment")
    fs = text[3]
    lines = [ln for ln in _SEG_SPLIT_RE.split(text) if ln != ""]
    msh_line = lines[0]
    enc = msh_line[4:].split(fs, 1)[0]
    if len(enc) != 4:
        raise ParseError(f"bad delimiter declaration in MSH-2: {enc!r}")
    d = Delimiters(fs, enc[0], enc[1], enc[2], enc[3])
    if len({fs, *enc}) != 5:
        raise ParseError("delimiter characters must be distinct")

    msh_parts = msh_line.split(fs)
    # MSH-1 is the separator itself and MSH-2 the encoding chars; both are
    # stored as opaque leaves (never unescaped).
    msh_fields: list[FieldValue] = [_leaf_field(fs), _leaf_field(enc)]
    msh_fields.extend(_parse_field(p, d) for p in msh_parts[2:])
    segments = [Segment(id="MSH", fields=msh_fields)]

    for line in lines[1:]:
        parts = line.split(fs)
        seg_id = parts[0]
        if not _SEG_ID_RE.match(seg_id):
            raise ParseError(f"malformed segment id: {seg_id!r}")
        segments.append(Segment(id=seg_id, fields=[_parse_field(p, d) for p in parts[1:]]))

    msg = Hl7Message(raw=text, segments=segments, delimiters=d)
    if msg.get("MSH-10") == "":
        raise ParseError("missing message control id (MSH-10)")
    return msg


def serialize_message(msg: Hl7Message) -> str:
    """Render the tree back to canonical text (segments joined by CR)."""
    d = msg.delimiters
    out: list[str] = []
    for seg in msg.segments:
        if seg.id == "MSH":
            rest = [_serialize_field(f, d) for f in seg.fields[2:]]
            body = d.field.join([f"MSH{d.field}{d.encoding_chars}", *rest])
        else:
            body = d.field.join([seg.id, *(_serialize_field(f, d) for f in seg.fields)])
        out.append(body)
    return "\r".join(out)


def fast_control_id(raw: str) -> str:
    """MSH-10 without a full parse (the field separator is raw[3])."""
    if not raw.startswith("MSH") or len(raw) < 4:
        return ""
    first_line = _SEG_SPLIT_RE.split(raw, 1)[0]
    parts = first_line.split(raw[3])
    return parts[9] if len(parts) > 9 else ""


def build_ack_text(orig_control_id: str, ack_ts: str, ack_control_id: str,
                   version: str = "2.3") -> str:
    """Commit-accept ACK needing only the original control id (hot path)."""
    return (
        f"MSH|^~\\&|VITALLAKE|LAKE|||{ack_ts}||ACK|{ack_control_id}|P|{version}"
        f"\rMSA|AA|{orig_control_id}"
    )


def build_ack(msg: Hl7Message, ack_ts: str, control_id: str) -> str:
    """Static commit-accept ACK (MSA|AA) answering `msg`."""
    h = msg.header
    msh = "|".join(
        [
            "MSH",
            "^~\\&",
            "VITALLAKE",
            "LAKE",
            h.sending_app,
            h.sending_facility,
            ack_ts,
            "",
            "ACK",
            control_id,
            "P",
            h.version or "2.3",
        ]
    )
    return f"{msh}\rMSA|AA|{h.control_id}"


# ---------------------------------------------------------------------------
# MLLP framing
# ---------------------------------------------------------------------------


def encode_mllp(payload: str) -> bytes:
    """Frame one message: 0x0B payload 0x1C 0x0D. MLLP does not escape."""
    if not payload:
        raise ValueError("empty MLLP payload")
    return MLLP_START + payload.encode("utf-8") + MLLP_END + MLLP_CR


@dataclass
class MllpError:
    kind: str  # "protocol-error" | "frame-too-large"
    nbytes: int


class MllpDecoder:
    """Incremental MLLP frame reassembly for one connection.

    feed() may be called with arbitrary chunk boundaries; the emitted
    message sequence is chunking-invariant. Bytes outside a frame are
    discarded and reported, oversized frames are discarded through their
    terminator so the stream resynchronizes identically to a single-chunk
    decode.
    """

    def __init__(self, max_frame_len: int = DEFAULT_MAX_FRAME):
        self.max_frame_len = max_frame_len
        self.pending = bytearray()
        self.frames_emitted = 0
        self.errors: list[MllpError] = []
        self._skipping = False  # inside an oversized frame, seeking its end

    def feed(self, chunk: bytes) -> list[str]:
        self.pending.extend(chunk)
        out: list[str] = []
        while True:
            if self._skipping:
                if not self._skip_to_terminator():
                    break
                continue
            start = self.pending.find(MLLP_START)
            if start < 0:
                if self.pending:
                    self._drop(len(self.pending), "protocol-error")
                break
            if start > 0:
                self._drop(start, "protocol-error")
            end = self.pending.find(MLLP_END, 1)
            if end < 0:
                if len(self.pending) - 1 > self.max_frame_len:
                    self.errors.append(MllpError("frame-too-large", len(self.pending)))
                    self.pending.clear()
                    self._skipping = True
                break
            if end + 1 >= len(self.pending):
                break  # have END, awaiting the CR
            if self.pending[end + 1] != MLLP_CR[0]:
                self._drop(end + 1, "protocol-error")
                continue
            payload = bytes(self.pending[1:end])
            del self.pending[: end + 2]
            if len(payload) > self.max_frame_len:
                self.errors.append(MllpError("frame-too-large", len(payload)))
                continue
            out.append(payload.decode("utf-8", errors="replace"))
            self.frames_emitted += 1
        return out

    def _skip_to_terminator(self) -> bool:
        """Discard oversized-frame bytes; True when resynchronized."""
        end = self.pending.find(MLLP_END)
        if end < 0:
            self.pending.clear()
            return False
        if end + 1 >= len(self.pending):
            del self.pending[:end]
            return False  # keep END, await CR
        drop = end + 2 if self.pending[end + 1] == MLLP_CR[0] else end + 1
        del self.pending[:drop]
        self._skipping = False
        return True

    def _drop(self, n: int, kind: str) -> None:
        del self.pending[:n]
        self.errors.append(MllpError(kind, n))
